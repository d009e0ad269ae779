"""Dataset manifests, MaFaulDa/CWRU CSV loaders and the synthetic vibration generator.

CSV files are comma-separated, headerless, one sample per line. MaFaulDa
files carry 8 columns (tachometer, underhang axial/radial/tangential,
overhang axial/radial/tangential, microphone); only the three underhang
accelerometer columns are kept. CWRU files are single-column drive-end
accelerometer exports at 48 kHz.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any

import numpy as np

from .signal_core import RawRecording

log = logging.getLogger(__name__)

MAFAULDA_CLASSES = [
    "normal",
    "imbalance",
    "horizontal-misalignment",
    "vertical-misalignment",
    "underhang-ball",
    "underhang-cage",
    "underhang-outer-race",
]
CWRU_CLASSES = ["ball", "inner-race", "normal", "outer-race"]

MAFAULDA_RATE_HZ = 50_000.0
CWRU_RATE_HZ = 48_000.0
MAFAULDA_COLUMNS = 8
MAFAULDA_ACCEL_COLUMNS = [1, 2, 3]  # underhang axial, radial, tangential

KINDS = ("mafaulda", "cwru", "synthetic")


class DataError(ValueError):
    pass


@dataclass
class ManifestEntry:
    path: str
    label: str | None
    sample_rate_hz: float
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    root: Path
    kind: str
    classes: list[str]
    recordings: list[ManifestEntry]

    def validate(self, check_paths: bool = True) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class names in manifest")
        for e in self.recordings:
            if e.label is not None and e.label not in self.classes:
                raise DataError(f"{e.path}: label {e.label!r} not in class table {self.classes}")
            if check_paths and not (self.root / e.path).is_file():
                raise DataError(f"{e.path}: file not found under {self.root}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes),
            "recordings": [
                {"path": e.path, "label": e.label, "sample_rate_hz": e.sample_rate_hz, "meta": e.meta}
                for e in self.recordings
            ],
        }

    def class_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.classes}
        for e in self.recordings:
            if e.label is not None:
                counts[e.label] += 1
        return counts


def load_manifest(path: str | Path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        man = DatasetManifest(
            root=path.parent,
            kind=doc["kind"],
            classes=list(doc["classes"]),
            recordings=[
                ManifestEntry(r["path"], r.get("label"), float(r.get("sample_rate_hz", 0.0)) or
                              _default_rate(doc["kind"]), dict(r.get("meta", {})))
                for r in doc["recordings"]
            ],
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    man.validate(check_paths)
    return man


def write_manifest(man: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(man.to_dict(), indent=2, sort_keys=True) + "\n")


def _default_rate(kind: str) -> float:
    return {"mafaulda": MAFAULDA_RATE_HZ, "cwru": CWRU_RATE_HZ}.get(kind, 0.0)


def read_csv_matrix(path: str | Path, n_cols: int | None = None) -> np.ndarray:
    """Parse a headerless numeric CSV into [rows, cols]; no row is ever skipped."""
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            raise DataError(f"{path}:{i}: blank line")
    try:
        arr = np.loadtxt(lines, delimiter=",", dtype=np.float64, ndmin=2, comments=None)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if arr.shape[0] != len(lines):
        raise DataError(f"{path}: parsed {arr.shape[0]} rows from {len(lines)} lines")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise DataError(f"{path}:1: expected {n_cols} columns, found {arr.shape[1]}")
    if not np.isfinite(arr).all():
        row = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0]) + 1
        raise DataError(f"{path}:{row}: non-finite value")
    return arr


def mafaulda_label(rel_path: str) -> str | None:
    """Class id for a MaFaulDa file path, or None for discarded overhang data."""
    parts = [p.lower() for p in PurePosixPath(rel_path.replace("\\", "/")).parts[:-1]]
    if "overhang" in parts:
        return None
    if "underhang" in parts:
        for key, label in (("ball_fault", "underhang-ball"), ("cage_fault", "underhang-cage"),
                           ("outer_race", "underhang-outer-race")):
            if key in parts:
                return label
        raise DataError(f"{rel_path}: unknown underhang fault directory")
    for label in ("normal", "imbalance", "horizontal-misalignment", "vertical-misalignment"):
        if label in parts:
            return label
    raise DataError(f"{rel_path}: unknown class directory")


def scan_mafaulda(root: str | Path) -> DatasetManifest:
    """Build a manifest from a MaFaulDa directory tree (overhang files omitted)."""
    root = Path(root)
    entries = []
    for f in sorted(root.rglob("*.csv")):
        rel = f.relative_to(root).as_posix()
        label = mafaulda_label(rel)
        if label is None:
            continue
        entries.append(ManifestEntry(rel, label, MAFAULDA_RATE_HZ, {}))
    return DatasetManifest(root, "mafaulda", list(MAFAULDA_CLASSES), entries)


def load_mafaulda(man: DatasetManifest) -> list[RawRecording]:
    out = []
    for e in sorted(man.recordings, key=lambda e: e.path):
        label = mafaulda_label(e.path)
        if label is None:
            log.info("skipping overhang recording %s", e.path)
            continue
        if e.label is not None and e.label != label:
            raise DataError(f"{e.path}: manifest label {e.label!r} disagrees with directory class {label!r}")
        if label not in man.classes:
            raise DataError(f"{e.path}: class {label!r} not declared in manifest")
        data = read_csv_matrix(man.root / e.path, MAFAULDA_COLUMNS)
        out.append(RawRecording(data[:, MAFAULDA_ACCEL_COLUMNS], e.sample_rate_hz, label, e.path, dict(e.meta)))
    return out


def load_cwru(man: DatasetManifest) -> list[RawRecording]:
    out = []
    for e in sorted(man.recordings, key=lambda e: e.path):
        if e.label is None or e.label not in man.classes:
            raise DataError(f"{e.path}: CWRU recordings need a label from {man.classes}")
        data = read_csv_matrix(man.root / e.path, 1)
        out.append(RawRecording(data, e.sample_rate_hz, e.label, e.path, dict(e.meta)))
    return out


def load_synthetic(man: DatasetManifest) -> list[RawRecording]:
    out = []
    for e in sorted(man.recordings, key=lambda e: e.path):
        data = read_csv_matrix(man.root / e.path, e.meta.get("n_channels"))
        out.append(RawRecording(data, e.sample_rate_hz, e.label, e.path, dict(e.meta)))
    return out


def load_recordings(man: DatasetManifest) -> list[RawRecording]:
    loader = {"mafaulda": load_mafaulda, "cwru": load_cwru, "synthetic": load_synthetic}[man.kind]
    recs = loader(man)
    if man.kind == "cwru" and len({r.label for r in recs}) != len(man.classes):
        log.warning("CWRU manifest covers %d of %d classes", len({r.label for r in recs}), len(man.classes))
    return recs


# -- synthetic generator ---------------------------------------------------------------

# (rotation-frequency multiplier, amplitude, per-channel gains or None for the default gains)
Harmonic = tuple[float, float, tuple[float, ...] | None]

DEFAULT_GAINS_3 = (0.6, 1.0, 0.8)  # axial, radial, tangential
AXIAL_GAINS_3 = (2.0, 0.5, 0.4)

SIGNATURES_7: dict[str, list[Harmonic]] = {
    "normal": [(1.0, 1.0, None)],
    "imbalance": [(1.0, 3.0, None)],
    "horizontal-misalignment": [(1.0, 1.0, None), (2.0, 2.0, None)],
    "vertical-misalignment": [(1.0, 1.0, None), (2.0, 2.0, AXIAL_GAINS_3)],
    "underhang-ball": [(1.0, 1.0, None), (4.7, 1.5, None)],
    "underhang-cage": [(1.0, 1.0, None), (0.4, 1.5, None)],
    "underhang-outer-race": [(1.0, 1.0, None), (3.1, 1.5, None)],
}
SIGNATURES_4: dict[str, list[Harmonic]] = {
    "ball": [(1.0, 1.0, None), (4.7, 1.5, None)],
    "inner-race": [(1.0, 1.0, None), (5.4, 1.5, None)],
    "normal": [(1.0, 1.0, None)],
    "outer-race": [(1.0, 1.0, None), (3.1, 1.5, None)],
}


@dataclass
class SynthConfig:
    n_classes: int = 7
    recordings_per_class: int = 70
    samples_per_recording: int = 5000
    sample_rate_hz: float = 10_000.0
    rotation_hz: tuple[float, float] = (29.5, 30.5)
    noise_std: float = 0.05
    seed: int = 0
    signatures: dict[str, list[Harmonic]] | None = None

    def resolved_signatures(self) -> dict[str, list[Harmonic]]:
        if self.signatures is not None:
            return {k: [tuple(h) if len(h) == 3 else (h[0], h[1], None) for h in v]
                    for k, v in self.signatures.items()}
        if self.n_classes == 7:
            return SIGNATURES_7
        if self.n_classes == 4:
            return SIGNATURES_4
        raise DataError("n_classes must be 7 or 4 unless signatures are given")

    @property
    def n_channels(self) -> int:
        return 3 if self.n_classes == 7 else 1

    def validate(self) -> None:
        if self.recordings_per_class < 1 or self.samples_per_recording < 2:
            raise DataError("recordings_per_class and samples_per_recording must be positive")
        lo, hi = self.rotation_hz
        if not 0 < lo <= hi:
            raise DataError("rotation_hz must be an increasing positive range")
        if hi * 10 >= self.sample_rate_hz / 2:
            raise DataError("rotation range too high for the sample rate (harmonics would alias)")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        sigs = self.resolved_signatures()
        if len(sigs) != self.n_classes:
            raise DataError(f"{len(sigs)} signatures for {self.n_classes} classes")
        keys = {}
        for label, harmonics in sigs.items():
            key = tuple(sorted((float(m), float(a), tuple(g) if g else None) for m, a, g in harmonics))
            if key in keys:
                raise DataError(f"classes {keys[key]!r} and {label!r} share the same signature")
            keys[key] = label
            for _, _, g in harmonics:
                if g is not None and len(g) != self.n_channels:
                    raise DataError(f"{label}: channel gains need {self.n_channels} entries")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "rotation_hz" in d:
            d["rotation_hz"] = tuple(d["rotation_hz"])
        return cls(**d)


def synth_generate(cfg: SynthConfig) -> list[RawRecording]:
    """Sum-of-harmonics recordings plus white noise, deterministic under `cfg.seed`."""
    cfg.validate()
    sigs = cfg.resolved_signatures()
    rng = np.random.default_rng(cfg.seed)
    n_ch = cfg.n_channels
    default_gains = DEFAULT_GAINS_3 if n_ch == 3 else (1.0,)
    t = np.arange(cfg.samples_per_recording) / cfg.sample_rate_hz
    out = []
    for label, harmonics in sigs.items():
        for i in range(cfg.recordings_per_class):
            fr = rng.uniform(*cfg.rotation_hz)
            x = np.zeros((t.size, n_ch))
            for mult, amp, gains in harmonics:
                g = np.asarray(gains if gains is not None else default_gains)
                phase = rng.uniform(0, 2 * np.pi, size=n_ch)
                x += amp * g * np.sin(2 * np.pi * mult * fr * t[:, None] + phase)
            if cfg.noise_std > 0:
                x += rng.normal(0.0, cfg.noise_std, size=x.shape)
            out.append(RawRecording(x, cfg.sample_rate_hz, label, f"{label}/{label}_{i:03d}.csv",
                                    {"rotation_hz": float(fr), "n_channels": n_ch}))
    return out


def write_dataset(recs: list[RawRecording], root: str | Path, classes: list[str],
                  kind: str = "synthetic") -> DatasetManifest:
    """Write recordings as headerless CSVs plus manifest.json under `root`."""
    root = Path(root)
    entries = []
    for r in recs:
        path = root / r.source_id
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, r.channels, fmt="%.17g", delimiter=",")
        entries.append(ManifestEntry(r.source_id, r.label, r.sample_rate_hz, dict(r.meta)))
    man = DatasetManifest(root, kind, list(classes), entries)
    write_manifest(man, root / "manifest.json")
    return man


def synth_classes(cfg: SynthConfig) -> list[str]:
    return list(cfg.resolved_signatures())
