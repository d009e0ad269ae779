"""Versioned flat binary container for pipeline states, model bundles and feature stores.

Layout (all integers little-endian):

    magic      4 bytes   b"T4PD"
    version    uint16    FORMAT_VERSION
    kind_len   uint8     followed by kind_len ASCII bytes ("pipeline", "bundle", ...)
    n_entries  uint32
    entries, in write order:
        name_len  uint16, then name_len UTF-8 bytes
        dtype     1 byte: b"f" float64, b"i" int64, b"b" bool (one byte each), b"s" UTF-8 text
        ndim      uint8, then ndim x uint64 dims
        payload   prod(dims) little-endian items (for b"s", dims == (n_bytes,))

Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"T4PD"
FORMAT_VERSION = 1

Value = Union[np.ndarray, str]

_DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8"), b"b": np.dtype("u1")}


class ContainerError(ValueError):
    pass


def _encode_entry(name: str, value: Value) -> bytes:
    raw_name = name.encode("utf-8")
    if isinstance(value, str):
        payload = value.encode("utf-8")
        code, dims = b"s", (len(payload),)
    else:
        arr = np.asarray(value)
        if arr.dtype == np.bool_:
            code = b"b"
        elif np.issubdtype(arr.dtype, np.integer):
            code = b"i"
        elif np.issubdtype(arr.dtype, np.floating):
            code = b"f"
        else:
            raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        dims = arr.shape
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    head = struct.pack("<H", len(raw_name)) + raw_name + code + struct.pack("<B", len(dims))
    head += b"".join(struct.pack("<Q", d) for d in dims)
    return head + payload


def dumps(kind: str, entries: dict[str, Value]) -> bytes:
    kind_raw = kind.encode("ascii")
    out = [MAGIC, struct.pack("<HB", FORMAT_VERSION, len(kind_raw)), kind_raw,
           struct.pack("<I", len(entries))]
    out += [_encode_entry(name, value) for name, value in entries.items()]
    return b"".join(out)


def loads(data: bytes, expect_kind: str | None = None) -> tuple[str, dict[str, Value]]:
    if data[:4] != MAGIC:
        raise ContainerError("not a T4PD container (bad magic)")
    version, kind_len = struct.unpack_from("<HB", data, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 7
    kind = data[pos:pos + kind_len].decode("ascii")
    pos += kind_len
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"expected a {expect_kind!r} container, got {kind!r}")
    (n_entries,) = struct.unpack_from("<I", data, pos)
    pos += 4
    entries: dict[str, Value] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code = data[pos:pos + 1]
        (ndim,) = struct.unpack_from("<B", data, pos + 1)
        pos += 2
        dims = struct.unpack_from("<" + "Q" * ndim, data, pos)
        pos += 8 * ndim
        if code == b"s":
            entries[name] = data[pos:pos + dims[0]].decode("utf-8")
            pos += dims[0]
            continue
        if code not in _DTYPES:
            raise ContainerError(f"unknown dtype code {code!r} in entry {name!r}")
        dt = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(dims).copy()
        pos += count * dt.itemsize
        if code == b"b":
            arr = arr.astype(bool)
        else:
            arr = arr.astype(dt.newbyteorder("="))
        entries[name] = arr
    if pos != len(data):
        raise ContainerError("trailing bytes after last entry")
    return kind, entries


def save(path: str | Path, kind: str, entries: dict[str, Value]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(kind, entries))


def load(path: str | Path, expect_kind: str | None = None) -> dict[str, Value]:
    return loads(Path(path).read_bytes(), expect_kind)[1]
