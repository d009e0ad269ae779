import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from t4pdm import container
from t4pdm.container import ContainerError


def test_round_trip_mixed_entries(tmp_path):
    entries = {
        "a": np.arange(12, dtype=np.float64).reshape(3, 4) / 7,
        "b": np.array([-1, 2, 3], dtype=np.int64),
        "c": np.array([True, False, True]),
        "s": "héllo",
        "scalar": np.float64(2.5),
    }
    path = tmp_path / "x.t4pd"
    container.save(path, "demo", entries)
    back = container.load(path, expect_kind="demo")
    assert list(back) == list(entries)
    for k, v in entries.items():
        if isinstance(v, str):
            assert back[k] == v
        else:
            assert back[k].tobytes() == np.asarray(v).tobytes()
            assert back[k].shape == np.shape(v)


def test_header_layout():
    raw = container.dumps("pipeline", {"x": np.zeros(2)})
    assert raw[:4] == b"T4PD"
    version, kind_len = struct.unpack_from("<HB", raw, 4)
    assert (version, kind_len) == (container.FORMAT_VERSION, 8)
    assert raw[7:15] == b"pipeline"


def test_rejects_bad_magic_version_kind():
    raw = container.dumps("bundle", {})
    with pytest.raises(ContainerError, match="magic"):
        container.loads(b"XXXX" + raw[4:])
    with pytest.raises(ContainerError, match="version"):
        container.loads(raw[:4] + struct.pack("<H", 99) + raw[6:])
    with pytest.raises(ContainerError, match="expected a 'pipeline'"):
        container.loads(raw, expect_kind="pipeline")


def test_trailing_bytes_rejected():
    with pytest.raises(ContainerError, match="trailing"):
        container.loads(container.dumps("k", {"x": np.ones(1)}) + b"\0")


def test_unsupported_dtype():
    with pytest.raises(ContainerError, match="unsupported dtype"):
        container.dumps("k", {"x": np.array([1 + 2j])})


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=5),
                  elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_float_bits_preserved(arr):
    back = container.loads(container.dumps("k", {"v": arr}))[1]["v"]
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_dumps_is_deterministic():
    e = {"w": np.random.default_rng(0).standard_normal((5, 5)), "t": "meta"}
    assert container.dumps("k", e) == container.dumps("k", dict(e))
