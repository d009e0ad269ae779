import csv
import json

import numpy as np
import pytest

from t4pdm import evaluation as E
from t4pdm.artifacts import Bundle, FeatureStore
from t4pdm.cli import main
from t4pdm.training import predict


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def prepared(tmp_path, write_config):
    out = tmp_path / "run"
    cfg = write_config(out)
    assert run("synth", "--config", cfg, "--out", out) == 0
    assert run("prepare", "--config", cfg, "--out", out) == 0
    return out, cfg


def test_full_flow_layout(prepared, capsys):
    out, cfg = prepared
    assert run("train", "--config", cfg, "--out", out) == 0
    assert "val accuracy" in capsys.readouterr().out
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    assert run("predict", "--config", cfg, "--out", out) == 0
    for rel in ("config.json", "run.log", "split.json", "history.csv", "report.json", "report.txt",
                "predictions.csv", "features/features.t4pd", "bundle/bundle.t4pd", "dataset/manifest.json"):
        assert (out / rel).is_file(), rel
    assert not (out / "error.json").exists()
    report = json.loads((out / "report.json").read_text())
    assert set(report) == set(E.REPORT_KEYS)
    assert len(report["confusion"]["labels"]) == 7
    history = (out / "history.csv").read_text().splitlines()
    assert len(history) == 1 + 5
    store = FeatureStore.load(out / "features" / "features.t4pd")
    with (out / "predictions.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == store.X.shape[0]


def test_synth_class_counts(prepared, capsys):
    out, _ = prepared
    man = json.loads((out / "dataset" / "manifest.json").read_text())
    labels = [e["label"] for e in man["recordings"]]
    assert len(labels) == 7 * 4
    assert all(labels.count(c) == 4 for c in man["classes"])
    store = FeatureStore.load(out / "features" / "features.t4pd")
    # 400 samples in 200-sample windows, 3 channels per recording
    assert store.X.shape == (28 * 2, 300)
    assert set(store.class_counts().values()) == {8}


def test_refuses_to_overwrite_without_force(prepared, capsys):
    out, cfg = prepared
    before = (out / "features" / "features.t4pd").read_bytes()
    assert run("prepare", "--config", cfg, "--out", out) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["command"] == "prepare" and "--force" in err["message"]
    assert "error:" in capsys.readouterr().err
    assert (out / "features" / "features.t4pd").read_bytes() == before
    assert run("synth", "--config", cfg, "--out", out) == 1
    assert run("prepare", "--config", cfg, "--out", out, "--force") == 0
    assert not (out / "error.json").exists()


def test_missing_bundle_is_an_error(prepared):
    out, cfg = prepared
    assert run("evaluate", "--config", cfg, "--out", out) == 1
    assert "not found" in json.loads((out / "error.json").read_text())["message"]


def test_bad_config_is_an_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epoch": 2}}))
    assert run("synth", "--config", path, "--out", tmp_path / "o") == 1
    assert "unknown keys" in json.loads((tmp_path / "o" / "error.json").read_text())["message"]


def test_evaluate_matches_library_metrics(prepared):
    out, cfg = prepared
    run("train", "--config", cfg, "--out", out)
    run("evaluate", "--config", cfg, "--out", out)
    bundle = Bundle.load(out / "bundle" / "bundle.t4pd")
    store = FeatureStore.load(out / "features" / "features.t4pd")
    te = np.asarray(json.loads((out / "split.json").read_text())["test"])
    _, probs = predict(bundle.model, bundle.state, store.X[te])
    expected = E.evaluate(store.labels[te], probs, bundle.classes)
    got = E.parse_json((out / "report.json").read_text())
    np.testing.assert_array_equal(got.confusion.counts, expected.confusion.counts)
    assert got.macro == expected.macro
    assert (got.auc_roc, got.auc_prc) == (expected.auc_roc, expected.auc_prc)


def test_zero_learning_rate_keeps_initial_weights(tmp_path, write_config):
    out = tmp_path / "run"
    cfg = write_config(out, train={"learning_rate": 0.0, "epochs": 2})
    for cmd in ("synth", "prepare", "train"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    cfg2 = write_config(out, name="c2.json", train={"learning_rate": 0.0, "epochs": 1})
    assert run("train", "--config", cfg2, "--out", out, "--force") == 0
    b2 = Bundle.load(out / "bundle" / "bundle.t4pd")
    run("train", "--config", cfg, "--out", out, "--force")
    b1 = Bundle.load(out / "bundle" / "bundle.t4pd")
    assert all(b1.model.params[k].tobytes() == b2.model.params[k].tobytes() for k in b1.model.params)


def test_rerun_is_byte_identical(tmp_path, write_config):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = write_config(out, name=f"{name}.json")
        for cmd in ("synth", "prepare", "train", "evaluate"):
            assert run(cmd, "--config", cfg, "--out", out) == 0
        strip = [",".join(line.split(",")[:3]) for line in (out / "history.csv").read_text().splitlines()]
        outputs.append([(out / "bundle" / "bundle.t4pd").read_bytes(), (out / "report.json").read_bytes(),
                        (out / "report.txt").read_bytes(), (out / "split.json").read_bytes(), strip])
    assert outputs[0] == outputs[1]


def test_seed_flag_changes_the_model(prepared):
    out, cfg = prepared
    run("train", "--config", cfg, "--out", out)
    a = (out / "bundle" / "bundle.t4pd").read_bytes()
    run("train", "--config", cfg, "--out", out, "--force", "--seed", "99")
    assert (out / "bundle" / "bundle.t4pd").read_bytes() != a


def test_ablation_rows_share_test_split(prepared, write_config):
    out, _ = prepared
    cfg = write_config(out, name="abl.json", train={"epochs": 2})
    assert run("ablation", "--config", cfg, "--out", out) == 0
    rows = json.loads((out / "ablation" / "ablation.json").read_text())
    assert [r["no"] for r in rows] == [1, 2, 3, 4, 5]
    assert len({r["test_index_hash"] for r in rows}) == 1
    for r in rows:
        assert all(0.0 <= r[k] <= 1.0 for k in E.ABLATION_COLUMNS)
        assert r["convergence_epoch"] is not None
        assert (out / "ablation" / r["preset"] / "report.json").is_file()
    assert len((out / "ablation" / "ablation.txt").read_text().splitlines()) == 2 + 5


def test_transfer_keeps_body_at_handoff(tmp_path, write_config):
    src = tmp_path / "src"
    cfg = write_config(src, name="src.json")
    for cmd in ("synth", "prepare", "train"):
        assert run(cmd, "--config", cfg, "--out", src) == 0
    dst = tmp_path / "dst"
    tcfg = write_config(dst, name="dst.json", synth={"n_classes": 4, "recordings_per_class": 8},
                        transfer={"source_bundle": str(src / "bundle" / "bundle.t4pd")})
    for cmd in ("synth", "prepare", "transfer"):
        assert run(cmd, "--config", tcfg, "--out", dst) == 0
    source = Bundle.load(src / "bundle" / "bundle.t4pd")
    handoff = Bundle.load(dst / "bundle" / "handoff.t4pd")
    body = [k for k in source.model.params if not k.startswith("head.")]
    assert body and all(handoff.model.params[k].tobytes() == source.model.params[k].tobytes() for k in body)
    assert handoff.model.params["head.W"].shape[-1] == 4
    report = json.loads((dst / "report.json").read_text())
    assert len(report["confusion"]["labels"]) == 4


def test_transfer_dimension_mismatch(tmp_path, write_config):
    src = tmp_path / "src"
    cfg = write_config(src, name="src.json")
    for cmd in ("synth", "prepare", "train"):
        run(cmd, "--config", cfg, "--out", src)
    dst = tmp_path / "dst"
    tcfg = write_config(dst, name="dst.json", synth={"n_classes": 4, "recordings_per_class": 8},
                        features={"pca_k": 12}, transfer={"source_bundle": str(src / "bundle" / "bundle.t4pd")})
    for cmd in ("synth", "prepare"):
        run(cmd, "--config", tcfg, "--out", dst)
    # the source's own pipeline settings win, so widths agree even with a different pca_k here
    assert run("transfer", "--config", tcfg, "--out", dst) == 0
