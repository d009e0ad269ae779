"""The transformer classifier: input projection, encoder blocks, dropout, GAP, softmax head.

There is no positional encoding anywhere, so logits are invariant to the order
of the input tokens. Parameters live in a flat ordered dict of arrays, keyed
by dotted names (``blocks.0.attn.0.Wq``); gradients use the same keys.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .feature_pipeline import DEFAULT_VARIANCE_THRESHOLD, PipelineSpec


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    seq_len: int
    token_dim: int
    n_blocks: int = 1
    n_heads: int = 4
    d_model: int = 32
    d_ff: int = 64
    dropout_rate: float = 0.5
    n_attn: int = 1  # attention sublayers per block
    sublayer_dropout: float = 0.0
    ln_eps: float = nn.LN_EPS
    # width of the pipeline output; seq_len * token_dim - input_dim trailing zeros pad it
    input_dim: int | None = None

    def __post_init__(self):
        for name in ("n_classes", "seq_len", "token_dim", "n_blocks", "n_heads", "d_model", "d_ff", "n_attn"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("dropout_rate", "sublayer_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ModelError(f"{name} must be in [0, 1)")
        if self.input_dim is None:
            object.__setattr__(self, "input_dim", self.seq_len * self.token_dim)
        if not 1 <= self.input_dim <= self.seq_len * self.token_dim:
            raise ModelError("input_dim must fit in seq_len * token_dim")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Preset:
    name: str
    title: str
    use_mask: bool
    use_pca: bool
    n_blocks: int = 1
    n_attn: int = 1

    def pipeline_spec(self, *, variance_threshold=DEFAULT_VARIANCE_THRESHOLD, pca_k=4500,
                      compose_fs_pca=False, scale=True) -> PipelineSpec:
        return PipelineSpec(
            use_mask=self.use_mask or (compose_fs_pca and self.use_pca),
            variance_threshold=variance_threshold,
            use_pca=self.use_pca,
            pca_k=pca_k,
            scale=scale,
        )


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in [
        Preset("transformer", "Transformer", use_mask=False, use_pca=False),
        Preset("transformer_fs", "Transformer + FS", use_mask=True, use_pca=False),
        Preset("transformer_pca", "Transformer + PCA", use_mask=False, use_pca=True),
        Preset("transformer4m_pca", "Transformer4m + PCA", use_mask=False, use_pca=True, n_attn=3),
        Preset("transformer4b_pca", "Transformer4b + PCA", use_mask=False, use_pca=True, n_blocks=4),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- tokenization -----------------------------------------------------------------

def tokenize(v: np.ndarray, seq_len: int, token_dim: int) -> np.ndarray:
    """Row-major reshape of [..., L] into [..., seq_len, token_dim]."""
    v = np.asarray(v, dtype=np.float64)
    if seq_len * token_dim != v.shape[-1]:
        raise ModelError(f"tokenization mismatch: {seq_len} x {token_dim} != {v.shape[-1]}")
    return v.reshape(v.shape[:-1] + (seq_len, token_dim))


def choose_factorization(length: int, token_dim: int = 25, pad: bool = False) -> tuple[int, int]:
    """Pick (seq_len, token_dim) covering `length` features.

    Uses `token_dim` when it divides `length`; otherwise the divisor nearest to
    it (smaller on ties). With `pad`, instead rounds `length` up to a multiple
    of `token_dim`. A prime length without `pad` is an error.
    """
    if length < 1 or token_dim < 1:
        raise ModelError("length and token_dim must be positive")
    if length % token_dim == 0:
        return length // token_dim, token_dim
    if pad:
        return -(-length // token_dim), token_dim
    divisors = [d for d in range(2, length) if length % d == 0]
    if not divisors:
        raise ModelError(f"tokenization mismatch: feature length {length} is prime; enable padding")
    d = min(divisors, key=lambda d: (abs(d - token_dim), d))
    return length // d, d


def to_tokens(Z: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Pad pipeline outputs [B, input_dim] with zeros and tokenize to [B, S, D]."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != cfg.input_dim:
        raise ModelError(f"dimension mismatch: model expects {cfg.input_dim} features, got {Z.shape[-1]}")
    total = cfg.seq_len * cfg.token_dim
    if total != cfg.input_dim:
        pad = np.zeros(Z.shape[:-1] + (total - cfg.input_dim,))
        Z = np.concatenate([Z, pad], axis=-1)
    return tokenize(Z, cfg.seq_len, cfg.token_dim)


# -- parameters -----------------------------------------------------------------------

@dataclass
class ModelParams:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def block(self, i: int) -> nn.EncoderBlockParams:
        p, pre = self.params, f"blocks.{i}."
        n = self.config.n_attn
        return nn.EncoderBlockParams(
            attn=[nn.AttentionWeights(*(p[f"{pre}attn.{j}.{w}"] for w in ("Wq", "Wk", "Wv", "Wo")))
                  for j in range(n)],
            ln_attn_gain=[p[f"{pre}ln_attn.{j}.gain"] for j in range(n)],
            ln_attn_bias=[p[f"{pre}ln_attn.{j}.bias"] for j in range(n)],
            W1=p[pre + "ffn.W1"], b1=p[pre + "ffn.b1"], W2=p[pre + "ffn.W2"], b2=p[pre + "ffn.b2"],
            ln_ffn_gain=p[pre + "ln_ffn.gain"], ln_ffn_bias=p[pre + "ln_ffn.bias"],
        )

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.config, params)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    m, h, dh = cfg.d_model, cfg.n_heads, cfg.d_head
    shapes: dict[str, tuple[int, ...]] = {"input_proj.W": (cfg.token_dim, m), "input_proj.b": (m,)}
    for i in range(cfg.n_blocks):
        pre = f"blocks.{i}."
        for j in range(cfg.n_attn):
            for w in ("Wq", "Wk", "Wv"):
                shapes[f"{pre}attn.{j}.{w}"] = (h, m, dh)
            shapes[f"{pre}attn.{j}.Wo"] = (h * dh, m)
            shapes[f"{pre}ln_attn.{j}.gain"] = (m,)
            shapes[f"{pre}ln_attn.{j}.bias"] = (m,)
        shapes[pre + "ffn.W1"] = (m, cfg.d_ff)
        shapes[pre + "ffn.b1"] = (cfg.d_ff,)
        shapes[pre + "ffn.W2"] = (cfg.d_ff, m)
        shapes[pre + "ffn.b2"] = (m,)
        shapes[pre + "ln_ffn.gain"] = (m,)
        shapes[pre + "ln_ffn.bias"] = (m,)
    shapes["head.W"] = (m, cfg.n_classes)
    shapes["head.b"] = (cfg.n_classes,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    m, f, hd = cfg.d_model, cfg.d_ff, cfg.n_heads * cfg.d_head
    attn = 3 * m * hd + hd * m + 2 * m
    block = cfg.n_attn * attn + (m * f + f + f * m + m) + 2 * m
    return (cfg.token_dim * m + m) + cfg.n_blocks * block + (m * cfg.n_classes + cfg.n_classes)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_head(d_model: int, n_classes: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 1])
    return {"head.W": _xavier(rng, d_model, n_classes, (d_model, n_classes)),
            "head.b": np.zeros(n_classes)}


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng([seed, 0])
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("head."):
            continue
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gain":
            params[name] = np.ones(shape)
        elif leaf in ("b", "b1", "b2", "bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = shape[-2], shape[-1]
            params[name] = _xavier(rng, fan_in, fan_out, shape)
    params.update(_init_head(cfg.d_model, cfg.n_classes, seed))
    return ModelParams(cfg, params)


def build(preset: str | Preset, n_classes: int, init_seed: int, *, seq_len: int, token_dim: int,
          input_dim: int | None = None, **overrides) -> ModelParams:
    """Build and initialise the model for one of the five experiment presets."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    cfg = ModelConfig(n_classes=n_classes, seq_len=seq_len, token_dim=token_dim, input_dim=input_dim,
                      n_blocks=preset.n_blocks, n_attn=preset.n_attn, **overrides)
    return init_params(cfg, init_seed)


def replace_head(m: ModelParams, new_n_classes: int, seed: int) -> ModelParams:
    """Keep every body weight, re-initialise the classifier for a new class count."""
    if new_n_classes < 2:
        raise ModelError("new_n_classes must be at least 2")
    cfg = dataclasses.replace(m.config, n_classes=new_n_classes)
    params = {k: v.copy() for k, v in m.params.items() if not k.startswith("head.")}
    params.update(_init_head(cfg.d_model, new_n_classes, seed))
    return ModelParams(cfg, params)


# -- forward / backward -----------------------------------------------------------------

@dataclass
class Trace:
    tokens: np.ndarray
    block_caches: list
    encoded: np.ndarray
    drop_mask: np.ndarray | None
    pooled: np.ndarray


def forward(m: ModelParams, batch: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None, return_trace: bool = False):
    """Logits [B, n_classes] for token batches [B, S, D]."""
    cfg, p = m.config, m.params
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.token_dim:
        raise nn.ShapeError(f"expected batch [B, S, {cfg.token_dim}], got {x.shape}")
    if training and rng is None and (cfg.dropout_rate > 0 or cfg.sublayer_dropout > 0):
        raise ValueError("training forward with dropout needs an rng")
    h = nn.check_finite(nn.linear_forward(x, p["input_proj.W"], p["input_proj.b"]), "input projection")
    caches = []
    for i in range(cfg.n_blocks):
        h, c = nn.encoder_block_forward(h, m.block(i), eps=cfg.ln_eps, sublayer_dropout=cfg.sublayer_dropout,
                                        rng=rng, training=training)
        caches.append(c)
    encoded = h
    mask = None
    if training and cfg.dropout_rate > 0:
        mask = nn.dropout_mask(h.shape, cfg.dropout_rate, rng)
        h = h * mask
    pooled = nn.global_average_pool(h)
    logits = nn.check_finite(nn.linear_forward(pooled, p["head.W"], p["head.b"]), "classifier head")
    if return_trace:
        return logits, Trace(x, caches, encoded, mask, pooled)
    return logits


def backward(m: ModelParams, trace: Trace | None, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given d(loss)/d(logits) and a forward trace."""
    if trace is None:
        raise ValueError("backward needs the trace of a completed forward pass")
    cfg, p = m.config, m.params
    grads: dict[str, np.ndarray] = {}
    dpooled, grads["head.W"], grads["head.b"] = nn.linear_backward(dlogits, trace.pooled, p["head.W"])
    dh = nn.global_average_pool_backward(dpooled, trace.encoded.shape[-2])
    if trace.drop_mask is not None:
        dh = dh * trace.drop_mask
    for i in reversed(range(cfg.n_blocks)):
        dh, g = nn.encoder_block_backward(dh, trace.block_caches[i], m.block(i))
        for name, val in g.items():
            grads[f"blocks.{i}.{name}"] = val
    _, grads["input_proj.W"], grads["input_proj.b"] = nn.linear_backward(dh, trace.tokens, p["input_proj.W"])
    return {k: grads[k] for k in p}


def loss_and_grads(m: ModelParams, batch, labels, training=False, rng=None):
    logits, trace = forward(m, batch, training=training, rng=rng, return_trace=True)
    loss, probs = nn.softmax_cross_entropy(logits, labels)
    grads = backward(m, trace, nn.softmax_cross_entropy_backward(probs, labels))
    return loss, grads


def config_to_json(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)


def config_from_json(text: str) -> ModelConfig:
    return ModelConfig(**json.loads(text))
