"""Variance-threshold feature selection followed by PCA projection.

Statistics are fitted once (on the training split) and reused unchanged by
`transform`; fitted objects are never mutated afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container

DEFAULT_VARIANCE_THRESHOLD = 3.68e-5


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceMask:
    keep: np.ndarray
    threshold: float
    variances: np.ndarray

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        if X.shape[-1] == self.n_kept:
            # already masked
            return X
        if X.shape[-1] != self.keep.size:
            raise PipelineError(f"mask expects {self.keep.size} columns, got {X.shape[-1]}")
        return X[..., self.keep]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # [k, F'], orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def project(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) @ self.components.T

    def reconstruct(self, Z: np.ndarray) -> np.ndarray:
        return self.mean + Z @ self.components


@dataclass(frozen=True)
class FeaturePipelineState:
    input_dim: int
    mask: VarianceMask | None = None
    pca: PcaModel | None = None
    # Global multiplier applied last; keeps raw FFT magnitudes (order N/2)
    # in a range the transformer can train on.
    scale: float | None = None

    @property
    def output_dim(self) -> int:
        if self.pca is not None:
            return self.pca.k
        if self.mask is not None:
            return self.mask.n_kept
        return self.input_dim


@dataclass(frozen=True)
class PipelineSpec:
    """Which reduction steps to fit; presets map onto this."""

    use_mask: bool = False
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    use_pca: bool = False
    pca_k: int = 4500
    scale: bool = True


def fit_variance_mask(X: np.ndarray, threshold: float) -> VarianceMask:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PipelineError("insufficient rows for variance")
    if threshold < 0:
        raise PipelineError("threshold must be non-negative")
    variances = X.var(axis=0)  # population variance
    keep = variances >= threshold
    if not keep.any():
        raise PipelineError(f"degenerate mask: no feature has variance >= {threshold}")
    return VarianceMask(keep=keep, threshold=float(threshold), variances=variances)


def fit_pca(X: np.ndarray, k: int) -> PcaModel:
    """Top-k principal directions from the SVD of the centred data."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PipelineError("PCA needs at least 2 rows")
    n, f = X.shape
    if k < 1 or k > min(n, f):
        raise PipelineError(f"rank too small: k={k} exceeds min(n={n}, F={f})")
    if not np.isfinite(X).all():
        raise PipelineError("non-finite input to PCA")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:k].copy()
    # sign convention: the largest-magnitude loading of each component is positive
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), idx])
    comps *= signs[:, None]
    ev = s[:k] ** 2 / (n - 1)
    return PcaModel(mean=mean, components=comps, explained_variance=ev)


def fit_pipeline(X: np.ndarray, spec: PipelineSpec) -> FeaturePipelineState:
    X = np.asarray(X, dtype=np.float64)
    mask = fit_variance_mask(X, spec.variance_threshold) if spec.use_mask else None
    Xm = mask.apply(X) if mask is not None else X
    pca = fit_pca(Xm, spec.pca_k) if spec.use_pca else None
    state = FeaturePipelineState(input_dim=X.shape[1], mask=mask, pca=pca)
    if not spec.scale:
        return state
    Z = transform(X, state)
    rms = float(np.sqrt(np.mean(Z * Z)))
    scale = 1.0 / rms if rms > 0 else 1.0
    return FeaturePipelineState(input_dim=X.shape[1], mask=mask, pca=pca, scale=scale)


def transform(X: np.ndarray, state: FeaturePipelineState) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.input_dim:
        got = X.shape[-1] if X.ndim else None
        raise PipelineError(f"dimension mismatch: expected {state.input_dim} columns, got {got}")
    out = X
    if state.mask is not None:
        out = out[:, state.mask.keep]
    if state.pca is not None:
        out = state.pca.project(out)
    if state.scale is not None:
        out = out * state.scale
    return out


# -- serialization ------------------------------------------------------------

def state_entries(state: FeaturePipelineState, prefix: str = "pipeline.") -> dict[str, container.Value]:
    e: dict[str, container.Value] = {
        prefix + "input_dim": np.int64(state.input_dim),
        prefix + "output_dim": np.int64(state.output_dim),
    }
    if state.mask is not None:
        e[prefix + "mask.keep"] = state.mask.keep
        e[prefix + "mask.threshold"] = np.float64(state.mask.threshold)
        e[prefix + "mask.variances"] = state.mask.variances
    if state.pca is not None:
        e[prefix + "pca.mean"] = state.pca.mean
        e[prefix + "pca.components"] = state.pca.components
        e[prefix + "pca.explained_variance"] = state.pca.explained_variance
    if state.scale is not None:
        e[prefix + "scale"] = np.float64(state.scale)
    return e


def state_from_entries(e: dict[str, container.Value], prefix: str = "pipeline.") -> FeaturePipelineState:
    mask = pca = None
    if prefix + "mask.keep" in e:
        mask = VarianceMask(
            keep=e[prefix + "mask.keep"],
            threshold=float(e[prefix + "mask.threshold"]),
            variances=e[prefix + "mask.variances"],
        )
    if prefix + "pca.mean" in e:
        pca = PcaModel(
            mean=e[prefix + "pca.mean"],
            components=e[prefix + "pca.components"],
            explained_variance=e[prefix + "pca.explained_variance"],
        )
    scale = float(e[prefix + "scale"]) if prefix + "scale" in e else None
    state = FeaturePipelineState(input_dim=int(e[prefix + "input_dim"]), mask=mask, pca=pca, scale=scale)
    if state.output_dim != int(e[prefix + "output_dim"]):
        raise PipelineError("corrupt pipeline state: output_dim disagrees with stored arrays")
    return state


def save_state(path, state: FeaturePipelineState) -> None:
    container.save(path, "pipeline", state_entries(state))


def load_state(path) -> FeaturePipelineState:
    return state_from_entries(container.load(path, expect_kind="pipeline"))
