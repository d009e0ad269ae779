"""Command implementations behind the CLI.

Each `cmd_*` takes a validated RunConfig and an output directory. Outputs:

    <out>/config.json            resolved config of the last command
    <out>/features/features.t4pd feature store (prepare)
    <out>/split.json             split indices (train)
    <out>/bundle/bundle.t4pd     pipeline + model + classes (train, transfer)
    <out>/history.csv            per-epoch losses (train, transfer)
    <out>/report.json|txt        test-split evaluation (evaluate, transfer)
    <out>/ablation/...           per-preset histories and reports plus a summary table
    <out>/dataset/...            synthetic CSVs + manifest.json (synth)
    <out>/predictions.csv        predict
    <out>/run.log                sidecar log; the only place wall-clock times appear
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data_io, evaluation
from . import model as M
from .artifacts import Bundle, FeatureStore
from .config import RunConfig
from .feature_pipeline import FeaturePipelineState, PipelineSpec, fit_pipeline
from .signal_core import extract_feature_matrix, segment
from .training import Dataset, SplitSpec, TrainConfig, TrainHistory, predict, stratified_split, train

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise RunError(f"{path} already exists; pass --force to overwrite")


def features_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.paths.features) if cfg.paths.features else out / "features" / "features.t4pd"


def bundle_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.paths.bundle) if cfg.paths.bundle else out / "bundle" / "bundle.t4pd"


def write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def index_hash(idx) -> str:
    return hashlib.sha256(np.asarray(idx, dtype="<i8").tobytes()).hexdigest()


# -- building blocks ---------------------------------------------------------------------

def build_features(recs, window_len: int, hop: int | None, classes: list[str], kind: str) -> FeatureStore:
    windows = [w for r in recs for w in segment(r, window_len, hop)]
    X = extract_feature_matrix(windows)
    labels = np.array([classes.index(w.label) for w in windows], dtype=np.int64)
    return FeatureStore(
        X=X, labels=labels, classes=list(classes),
        source_ids=[w.source_id for w in windows],
        offsets=np.array([w.offset for w in windows], dtype=np.int64),
        meta={"kind": kind, "window_len": window_len, "hop": hop or window_len,
              "n_channels": int(recs[0].n_channels)},
    )


def split_for(cfg: RunConfig, store: FeatureStore):
    spec = SplitSpec(cfg.split.train_frac, cfg.split.val_frac, cfg.split.test_frac, seed=cfg.seed)
    return stratified_split(store.labels, spec)


def pipeline_spec_for(cfg: RunConfig, preset: M.Preset) -> PipelineSpec:
    return preset.pipeline_spec(variance_threshold=cfg.features.variance_threshold, pca_k=cfg.features.pca_k,
                                compose_fs_pca=cfg.features.compose_fs_pca, scale=cfg.features.scale)


def train_config_for(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate, beta1=t.beta1,
                       beta2=t.beta2, eps_adam=t.eps_adam, seed=cfg.seed, early_stop_patience=t.early_stop_patience,
                       convergence_patience=t.convergence_patience, convergence_tol=t.convergence_tol)


def build_model(cfg: RunConfig, preset: M.Preset, state: FeaturePipelineState, n_classes: int) -> M.ModelParams:
    s, d = M.choose_factorization(state.output_dim, cfg.model.token_dim, cfg.model.pad_features)
    mc = cfg.model
    return M.build(preset, n_classes, cfg.seed, seq_len=s, token_dim=d, input_dim=state.output_dim,
                   n_heads=mc.n_heads, d_model=mc.d_model, d_ff=mc.d_ff, dropout_rate=mc.dropout_rate,
                   sublayer_dropout=mc.sublayer_dropout, ln_eps=mc.ln_eps)


@dataclass
class FitResult:
    bundle: Bundle
    history: TrainHistory
    split: tuple


def fit_preset(cfg: RunConfig, store: FeatureStore, preset_name: str, split=None) -> FitResult:
    preset = M.get_preset(preset_name)
    tr, va, te = split if split is not None else split_for(cfg, store)
    spec = pipeline_spec_for(cfg, preset)
    state = fit_pipeline(store.X[tr], spec)
    m = build_model(cfg, preset, state, len(store.classes))
    log.info("preset %s: %d -> %d features, model %s, %d params", preset_name, state.input_dim,
             state.output_dim, (m.config.seq_len, m.config.token_dim), m.n_params)
    m, hist = train(m, state, Dataset(store.X[tr], store.labels[tr]), Dataset(store.X[va], store.labels[va]),
                    train_config_for(cfg))
    meta = {"preset": preset_name, "pipeline_spec": spec.__dict__, "seed": cfg.seed}
    return FitResult(Bundle(state, m, list(store.classes), meta), hist, (tr, va, te))


def evaluate_bundle(bundle: Bundle, store: FeatureStore, idx, extra_meta: dict | None = None) -> evaluation.EvalReport:
    _, probs = predict(bundle.model, bundle.state, store.X[idx])
    meta = {"preset": bundle.meta.get("preset"), "seed": bundle.meta.get("seed"),
            "model_config": bundle.model.config.to_dict(), "n_test": int(len(idx)),
            "test_index_hash": index_hash(idx)}
    meta.update(extra_meta or {})
    return evaluation.evaluate(store.labels[idx], probs, bundle.classes, meta)


def write_report(report: evaluation.EvalReport, out: Path, stem: str = "report") -> None:
    _write_text(out / f"{stem}.json", evaluation.render_json(report))
    _write_text(out / f"{stem}.txt", evaluation.render_text(report))


def _save_split(out: Path, split) -> None:
    names = ("train", "val", "test")
    doc = {n: [int(i) for i in idx] for n, idx in zip(names, split)}
    doc["test_index_hash"] = index_hash(split[2])
    _write_text(out / "split.json", json.dumps(doc, sort_keys=True) + "\n")


def _load_split(out: Path):
    path = out / "split.json"
    if not path.exists():
        raise RunError(f"{path} not found; run `train` first")
    doc = json.loads(path.read_text())
    return tuple(np.asarray(doc[n], dtype=np.int64) for n in ("train", "val", "test"))


def _load_store(cfg: RunConfig, out: Path) -> FeatureStore:
    path = features_path(cfg, out)
    if not path.exists():
        raise RunError(f"feature store {path} not found; run `prepare` first")
    return FeatureStore.load(path)


# -- commands -------------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path, force: bool = False) -> data_io.DatasetManifest:
    root = out / "dataset"
    _refuse_overwrite(root / "manifest.json", force)
    s = cfg.synth
    sc = data_io.SynthConfig(n_classes=s.n_classes, recordings_per_class=s.recordings_per_class,
                             samples_per_recording=s.samples_per_recording, sample_rate_hz=s.sample_rate_hz,
                             rotation_hz=tuple(s.rotation_hz), noise_std=s.noise_std,
                             seed=cfg.seed if s.seed is None else s.seed, signatures=s.signatures)
    recs = data_io.synth_generate(sc)
    write_config(cfg, out)
    man = data_io.write_dataset(recs, root, data_io.synth_classes(sc))
    print(f"wrote {len(recs)} recordings to {root}")
    for c, n in man.class_counts().items():
        print(f"  {c}: {n}")
    return man


def cmd_prepare(cfg: RunConfig, out: Path, force: bool = False) -> FeatureStore:
    if not cfg.data.manifest:
        raise RunError("data.manifest is not set")
    target = features_path(cfg, out)
    _refuse_overwrite(target, force)
    man = data_io.load_manifest(cfg.data.manifest)
    recs = data_io.load_recordings(man)
    if not recs:
        raise RunError("manifest yielded no recordings")
    store = build_features(recs, cfg.signal.window_len, cfg.signal.hop, man.classes, man.kind)
    write_config(cfg, out)
    store.save(target)
    print(f"{store.X.shape[0]} windows x {store.X.shape[1]} features -> {target}")
    for c, n in store.class_counts().items():
        print(f"  {c}: {n}")
    return store


def cmd_train(cfg: RunConfig, out: Path, force: bool = False) -> FitResult:
    target = bundle_path(cfg, out)
    _refuse_overwrite(target, force)
    store = _load_store(cfg, out)
    res = fit_preset(cfg, store, cfg.model.preset)
    write_config(cfg, out)
    _save_split(out, res.split)
    res.bundle.save(target)
    _write_text(out / "history.csv", res.history.to_csv())
    va = res.split[1]
    pred, _ = predict(res.bundle.model, res.bundle.state, store.X[va])
    print(f"trained {cfg.model.preset}: {res.history.epochs_run} epochs, "
          f"final val loss {res.history.val_loss[-1]:.6f}, val accuracy {np.mean(pred == store.labels[va]):.4f}")
    return res


def cmd_evaluate(cfg: RunConfig, out: Path, force: bool = False) -> evaluation.EvalReport:
    path = bundle_path(cfg, out)
    if not path.exists():
        raise RunError(f"bundle {path} not found; run `train` first")
    bundle = Bundle.load(path)
    store = _load_store(cfg, out)
    te = _load_split(out)[2]
    report = evaluate_bundle(bundle, store, te)
    write_config(cfg, out)
    write_report(report, out)
    print(evaluation.render_text(report), end="")
    return report


def cmd_ablation(cfg: RunConfig, out: Path, force: bool = False) -> list[dict]:
    root = out / "ablation"
    _refuse_overwrite(root / "ablation.json", force)
    store = _load_store(cfg, out)
    split = split_for(cfg, store)
    write_config(cfg, out)
    rows: list[dict] = []
    try:
        for no, name in enumerate(cfg.ablation_presets, start=1):
            res = fit_preset(cfg, store, name, split)
            report = evaluate_bundle(res.bundle, store, split[2],
                                     {"convergence_epoch": res.history.convergence_epoch})
            write_report(report, root / name)
            _write_text(root / name / "history.csv", res.history.to_csv())
            rows.append(evaluation.ablation_row(no, M.get_preset(name).title, report, res.history.convergence_epoch)
                        | {"preset": name, "converged": res.history.converged,
                           "test_index_hash": index_hash(split[2])})
            log.info("ablation %s done: macro F1 %.4f", name, report.macro["f1"])
    finally:
        # partial results survive a failing preset
        if rows:
            _write_text(root / "ablation.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
            _write_text(root / "ablation.txt", evaluation.render_ablation_text(rows))
    print(evaluation.render_ablation_text(rows), end="")
    return rows


def cmd_transfer(cfg: RunConfig, out: Path, force: bool = False) -> tuple[FitResult, evaluation.EvalReport]:
    """Replace the classifier head of a trained bundle and retrain on a new dataset."""
    if not cfg.transfer.source_bundle:
        raise RunError("transfer.source_bundle is not set")
    target = bundle_path(cfg, out)
    _refuse_overwrite(target, force)
    src = Bundle.load(cfg.transfer.source_bundle)
    store = _load_store(cfg, out)
    split = split_for(cfg, store)
    tr, va, te = split
    # the body is reused as-is, so the new pipeline must reproduce its input width
    spec = PipelineSpec(**src.meta["pipeline_spec"])
    state = fit_pipeline(store.X[tr], spec)
    if state.output_dim != src.model.config.input_dim:
        raise RunError(f"dimension mismatch: new pipeline yields {state.output_dim} features, "
                       f"source model expects {src.model.config.input_dim}")
    head_seed = cfg.seed if cfg.transfer.head_seed is None else cfg.transfer.head_seed
    m = M.replace_head(src.model, len(store.classes), head_seed)
    meta = dict(src.meta, transferred_from=str(cfg.transfer.source_bundle), seed=cfg.seed)
    Bundle(state, m, list(store.classes), meta).save(target.with_name("handoff.t4pd"))
    m, hist = train(m, state, Dataset(store.X[tr], store.labels[tr]), Dataset(store.X[va], store.labels[va]),
                    train_config_for(cfg))
    bundle = Bundle(state, m, list(store.classes), meta)
    write_config(cfg, out)
    _save_split(out, split)
    bundle.save(target)
    _write_text(out / "history.csv", hist.to_csv())
    report = evaluate_bundle(bundle, store, te, {"transferred_from_classes": src.classes})
    write_report(report, out)
    print(evaluation.render_text(report), end="")
    return FitResult(bundle, hist, split), report


def cmd_predict(cfg: RunConfig, out: Path, force: bool = False) -> np.ndarray:
    path = bundle_path(cfg, out)
    if not path.exists():
        raise RunError(f"bundle {path} not found")
    bundle = Bundle.load(path)
    store = _load_store(cfg, out)
    target = out / "predictions.csv"
    _refuse_overwrite(target, force)
    pred, probs = predict(bundle.model, bundle.state, store.X)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "offset", "predicted"] + [f"p_{c}" for c in bundle.classes])
        for sid, off, k, row in zip(store.source_ids, store.offsets, pred, probs):
            w.writerow([sid, int(off), bundle.classes[k]] + [repr(float(p)) for p in row])
    print(f"{len(pred)} predictions -> {target}")
    return pred


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablation": cmd_ablation,
    "transfer": cmd_transfer,
    "predict": cmd_predict,
}
