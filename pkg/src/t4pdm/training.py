"""Stratified splitting, Adam mini-batch training and prediction."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import nn_core as nn
from .feature_pipeline import FeaturePipelineState, transform

log = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, detail: str = "loss is not finite"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.576
    val_frac: float = 0.18
    # None means the complement 1 - train - val
    test_frac: float | None = None
    seed: int = 0

    def fractions(self) -> tuple[float, float, float]:
        test = 1.0 - self.train_frac - self.val_frac if self.test_frac is None else self.test_frac
        fr = (self.train_frac, self.val_frac, test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions {fr} must be positive and sum to 1")
        return fr


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    early_stop_patience: int | None = None
    convergence_patience: int = 10
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class Dataset:
    X: np.ndarray  # raw spectral features [n, F]
    y: np.ndarray  # integer class ids [n]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("features and labels disagree on sample count")

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    convergence_epoch: int | None = None
    converged: bool = False
    best_epoch: int | None = None
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, with_time: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
            w.writerow([i, repr(tr), repr(va), f"{s:.6f}" if with_time else ""])
        return buf.getvalue()


# -- splitting --------------------------------------------------------------------------

def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # every split keeps at least one sample of the class
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def stratified_split(labels, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, val, test) index arrays preserving class proportions."""
    labels = np.asarray(labels)
    fractions = spec.fractions()
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise SplitError(f"class {cls!r} has {idx.size} samples; at least 3 are required")
        idx = rng.permutation(idx)
        counts = _largest_remainder(idx.size, fractions)
        start = 0
        for part, c in zip(parts, counts):
            part.append(idx[start:start + c])
            start += c
    return tuple(np.sort(np.concatenate(p)) for p in parts)


# -- optimisation -----------------------------------------------------------------------

class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Returns a new parameter dict; the input arrays are left untouched."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.m[k] = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            v = self.v[k] = b2 * self.v.get(k, 0.0) + (1 - b2) * g * g
            if self.lr == 0:
                out[k] = p
                continue
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def convergence_epoch(val_loss, patience: int = 10, tol: float = 1e-4) -> tuple[int | None, bool]:
    """Epoch (1-based) of the last improvement > tol before `patience` flat epochs.

    Returns (epoch, converged). When the plateau never lasts `patience` epochs
    the last improving epoch is returned with converged=False.
    """
    best = np.inf
    last = None
    for e, v in enumerate(val_loss, start=1):
        if v < best - tol:
            best, last = v, e
        if last is not None and e - last >= patience:
            return last, True
    return last, False


def _tokens(m: M.ModelParams, state: FeaturePipelineState, X: np.ndarray) -> np.ndarray:
    return M.to_tokens(transform(X, state), m.config)


def _eval_loss(m: M.ModelParams, tokens: np.ndarray, y: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for s in range(0, len(y), chunk):
        logits = M.forward(m, tokens[s:s + chunk])
        loss, _ = nn.softmax_cross_entropy(logits, y[s:s + chunk])
        total += loss * len(y[s:s + chunk])
    return total / len(y)


def train(m: M.ModelParams, state: FeaturePipelineState, train_set: Dataset, val_set: Dataset,
          cfg: TrainConfig) -> tuple[M.ModelParams, TrainHistory]:
    if len(train_set) == 0 or cfg.batch_size > len(train_set):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_set)}")
    xt = _tokens(m, state, train_set.X)
    xv = _tokens(m, state, val_set.X) if len(val_set) else None
    rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam)
    hist = TrainHistory()
    best_val, best_params, flat = np.inf, m.params, 0
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        running = 0.0
        try:
            for s in range(0, n, cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                loss, grads = M.loss_and_grads(m, xt[idx], train_set.y[idx], training=True, rng=rng)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch)
                running += loss * len(idx)
                m = m.with_params(opt.step(m.params, grads))
            val = _eval_loss(m, xv, val_set.y) if xv is not None else running / n
        except nn.NonFiniteError as exc:
            raise TrainingDivergedError(epoch, str(exc)) from exc
        if not np.isfinite(val):
            raise TrainingDivergedError(epoch, "validation loss is not finite")
        hist.train_loss.append(running / n)
        hist.val_loss.append(float(val))
        hist.seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d train %.6f val %.6f", epoch, running / n, val)
        if val < best_val - cfg.convergence_tol:
            best_val, best_params, flat = val, m.params, 0
            hist.best_epoch = epoch
        else:
            flat += 1
        if cfg.early_stop_patience is not None and flat >= cfg.early_stop_patience:
            hist.stopped_early = True
            m = m.with_params(best_params)
            break
    hist.convergence_epoch, hist.converged = convergence_epoch(
        hist.val_loss, cfg.convergence_patience, cfg.convergence_tol)
    return m, hist


def predict(m: M.ModelParams, state: FeaturePipelineState, X: np.ndarray,
            chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(class ids, probability rows) in inference mode; ties go to the lowest index."""
    if state.output_dim != m.config.input_dim:
        raise ValueError(f"dimension mismatch: pipeline outputs {state.output_dim}, "
                         f"model expects {m.config.input_dim}")
    tokens = _tokens(m, state, np.atleast_2d(X))
    probs = []
    for s in range(0, tokens.shape[0], chunk):
        logits = M.forward(m, tokens[s:s + chunk])
        probs.append(nn.softmax(logits, axis=1))
    p = np.concatenate(probs) if probs else np.zeros((0, m.config.n_classes))
    return np.argmax(p, axis=1), p
