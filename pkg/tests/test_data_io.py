import logging

import numpy as np
import pytest

from oracles import nearest_centroid_accuracy
from t4pdm import data_io as D
from t4pdm.signal_core import extract_feature_matrix, fft_magnitude, segment
from t4pdm.training import SplitSpec, stratified_split


def write_csv(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(arr), fmt="%.17g", delimiter=",")


def mafaulda_tree(root, rows=20):
    rng = np.random.default_rng(0)
    files = ["normal/12.288.csv", "imbalance/6g/13.5168.csv", "underhang/cage_fault/0g/20.1.csv",
             "overhang/ball_fault/0g/18.3.csv", "vertical-misalignment/0.51mm/30.1.csv"]
    for f in files:
        write_csv(root / f, rng.standard_normal((rows, 8)))
    return files


# -- MaFaulDa ---------------------------------------------------------------------------------

def test_mafaulda_labels_from_paths():
    assert D.mafaulda_label("imbalance/6g/13.5.csv") == "imbalance"
    assert D.mafaulda_label("underhang/outer_race/35g/x.csv") == "underhang-outer-race"
    assert D.mafaulda_label("overhang/cage_fault/6g/x.csv") is None
    with pytest.raises(D.DataError, match="unknown class directory"):
        D.mafaulda_label("mystery/x.csv")


def test_scan_and_load_mafaulda(tmp_path):
    mafaulda_tree(tmp_path)
    man = D.scan_mafaulda(tmp_path)
    assert len(man.recordings) == 4  # overhang file left out
    recs = D.load_recordings(man)
    assert sorted(r.label for r in recs) == sorted(["normal", "imbalance", "underhang-cage", "vertical-misalignment"])
    raw = np.loadtxt(tmp_path / "imbalance/6g/13.5168.csv", delimiter=",")
    rec = next(r for r in recs if r.label == "imbalance")
    assert rec.n_channels == 3 and rec.n_samples == 20
    np.testing.assert_array_equal(rec.channels, raw[:, 1:4])
    assert rec.sample_rate_hz == 50_000.0


def test_overhang_entry_is_skipped_and_logged(tmp_path, caplog):
    mafaulda_tree(tmp_path)
    man = D.DatasetManifest(tmp_path, "mafaulda", list(D.MAFAULDA_CLASSES),
                            [D.ManifestEntry("overhang/ball_fault/0g/18.3.csv", None, 50_000.0)])
    with caplog.at_level(logging.INFO):
        assert D.load_mafaulda(man) == []
    assert "overhang" in caplog.text


def test_wrong_column_count_names_file(tmp_path):
    write_csv(tmp_path / "normal/bad.csv", np.ones((5, 7)))
    man = D.scan_mafaulda(tmp_path)
    with pytest.raises(D.DataError, match="bad.csv.*8 columns"):
        D.load_mafaulda(man)


def test_non_numeric_and_blank_lines(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1.0\n2.0\nabc\n")
    with pytest.raises(D.DataError, match="x.csv"):
        D.read_csv_matrix(p, 1)
    p.write_text("1.0\n\n2.0\n")
    with pytest.raises(D.DataError, match="x.csv:2: blank"):
        D.read_csv_matrix(p, 1)
    p.write_text("1.0\nnan\n")
    with pytest.raises(D.DataError, match="x.csv:2: non-finite"):
        D.read_csv_matrix(p, 1)


def test_no_rows_dropped(tmp_path):
    arr = np.random.default_rng(1).standard_normal((123, 8))
    write_csv(tmp_path / "a.csv", arr)
    out = D.read_csv_matrix(tmp_path / "a.csv", 8)
    assert out.shape == (123, 8)
    assert out.tobytes() == arr.tobytes()


# -- CWRU --------------------------------------------------------------------------------------

def cwru_manifest(root):
    entries = []
    for c in D.CWRU_CLASSES:
        write_csv(root / f"{c}.csv", np.random.default_rng(len(c)).standard_normal((30, 1)))
        entries.append(D.ManifestEntry(f"{c}.csv", c, 48_000.0))
    man = D.DatasetManifest(root, "cwru", list(D.CWRU_CLASSES), entries)
    D.write_manifest(man, root / "manifest.json")
    return man


def test_cwru_single_channel(tmp_path):
    cwru_manifest(tmp_path)
    man = D.load_manifest(tmp_path / "manifest.json")
    recs = D.load_recordings(man)
    assert {r.label for r in recs} == set(D.CWRU_CLASSES)
    normal = next(r for r in recs if r.label == "normal")
    assert normal.n_channels == 1 and normal.sample_rate_hz == 48_000.0


def test_cwru_empty_file(tmp_path):
    (tmp_path / "normal.csv").write_text("")
    man = D.DatasetManifest(tmp_path, "cwru", list(D.CWRU_CLASSES), [D.ManifestEntry("normal.csv", "normal", 48e3)])
    with pytest.raises(D.DataError, match="empty"):
        D.load_cwru(man)


def test_manifest_validation(tmp_path):
    cwru_manifest(tmp_path)
    man = D.load_manifest(tmp_path / "manifest.json")
    man.validate()
    bad = D.DatasetManifest(tmp_path, "cwru", list(D.CWRU_CLASSES), [D.ManifestEntry("ball.csv", "cage", 48e3)])
    with pytest.raises(D.DataError, match="not in class table"):
        bad.validate()
    missing = D.DatasetManifest(tmp_path, "cwru", ["ball"], [D.ManifestEntry("nope.csv", "ball", 48e3)])
    with pytest.raises(D.DataError, match="not found"):
        missing.validate()
    (tmp_path / "broken.json").write_text('{"kind": "cwru"}')
    with pytest.raises(D.DataError, match="malformed"):
        D.load_manifest(tmp_path / "broken.json")


def test_manifest_round_trip(tmp_path):
    man = cwru_manifest(tmp_path)
    back = D.load_manifest(tmp_path / "manifest.json")
    assert back.to_dict() == man.to_dict()
    assert back.class_counts() == {c: 1 for c in D.CWRU_CLASSES}


# -- synthetic generator ------------------------------------------------------------------------

def test_synth_counts_and_channels():
    recs = D.synth_generate(D.SynthConfig(recordings_per_class=3, samples_per_recording=400))
    assert len(recs) == 21
    assert all(r.n_channels == 3 and r.n_samples == 400 for r in recs)
    four = D.synth_generate(D.SynthConfig(n_classes=4, recordings_per_class=2, samples_per_recording=400))
    assert {r.label for r in four} == set(D.CWRU_CLASSES)
    assert all(r.n_channels == 1 for r in four)


def test_synth_deterministic():
    cfg = D.SynthConfig(recordings_per_class=2, samples_per_recording=300, seed=4)
    a, b = D.synth_generate(cfg), D.synth_generate(cfg)
    assert all(x.channels.tobytes() == y.channels.tobytes() for x, y in zip(a, b))


def test_noise_free_imbalance_peaks_at_rotation_frequency():
    cfg = D.SynthConfig(recordings_per_class=3, samples_per_recording=5000, noise_std=0.0, seed=2)
    for r in (r for r in D.synth_generate(cfg) if r.label == "imbalance"):
        mags = fft_magnitude(r.channels[:, 1])
        expected_bin = round(r.meta["rotation_hz"] * 5000 / cfg.sample_rate_hz)
        assert int(np.argmax(mags)) + 1 == expected_bin


@pytest.mark.parametrize("n_classes", [7, 4])
@pytest.mark.parametrize("noise", [0.0, 0.05])
def test_nearest_centroid_separability(n_classes, noise):
    cfg = D.SynthConfig(n_classes=n_classes, recordings_per_class=20, samples_per_recording=5000,
                        noise_std=noise, seed=11)
    recs = D.synth_generate(cfg)
    classes = D.synth_classes(cfg)
    windows = [w for r in recs for w in segment(r, 5000)]
    X = extract_feature_matrix(windows)
    y = np.array([classes.index(w.label) for w in windows])
    tr, _, te = stratified_split(y, SplitSpec(seed=0))
    assert nearest_centroid_accuracy(X[tr], y[tr], X[te], y[te]) == 1.0


def test_signatures_must_be_distinct():
    sig = {"a": [(1.0, 1.0)], "b": [(1.0, 1.0)], "c": [(2.0, 1.0)], "d": [(3.0, 1.0)]}
    with pytest.raises(D.DataError, match="share the same signature"):
        D.SynthConfig(n_classes=4, signatures=sig).validate()


def test_synth_config_validation():
    with pytest.raises(D.DataError, match="alias"):
        D.SynthConfig(sample_rate_hz=500.0).validate()
    with pytest.raises(D.DataError, match="rotation_hz"):
        D.SynthConfig(rotation_hz=(30.0, 20.0)).validate()
    with pytest.raises(D.DataError, match="7 or 4"):
        D.SynthConfig(n_classes=5).validate()


def test_write_and_reload_dataset(tmp_path):
    cfg = D.SynthConfig(recordings_per_class=2, samples_per_recording=200)
    recs = D.synth_generate(cfg)
    man = D.write_dataset(recs, tmp_path, D.synth_classes(cfg))
    back = D.load_recordings(D.load_manifest(tmp_path / "manifest.json"))
    assert man.class_counts() == {c: 2 for c in D.synth_classes(cfg)}
    by_id = {r.source_id: r for r in back}
    for r in recs:
        assert by_id[r.source_id].channels.tobytes() == r.channels.tobytes()
        assert by_id[r.source_id].label == r.label
