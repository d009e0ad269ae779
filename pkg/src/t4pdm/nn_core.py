"""Layer kernels for the encoder-only transformer, forward and backward.

All arrays are float64 numpy arrays. Functions accept arbitrary leading batch
dimensions; the last axis is the feature axis and, where relevant, the
second-to-last is the sequence axis. Each `*_forward` returns its output and a
cache; the matching `*_backward` maps an upstream gradient and that cache to
input and parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-6


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


# -- dense ---------------------------------------------------------------------

def linear_forward(x, W, b=None):
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    y = x @ W
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, W):
    """Returns (dx, dW, db) with dW/db summed over all leading axes."""
    dx = dy @ W.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


# -- attention -------------------------------------------------------------------

def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def scaled_dot_product_attention(Q, K, V):
    """softmax(Q K^T / sqrt(d)) V; returns (output, attention weights)."""
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape} are inconsistent")
    d = Q.shape[-1]
    attn = softmax(Q @ np.swapaxes(K, -1, -2) / np.sqrt(d))
    return attn @ V, attn


def sdpa_backward(dout, Q, K, V, attn):
    d = Q.shape[-1]
    dattn = dout @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(attn, -1, -2) @ dout
    # softmax Jacobian-vector product, row-wise
    dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dlogits /= np.sqrt(d)
    dQ = dlogits @ K
    dK = np.swapaxes(dlogits, -1, -2) @ Q
    return dQ, dK, dV


@dataclass
class AttentionWeights:
    Wq: np.ndarray  # [h, d_model, d_head]
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray  # [h * d_head, d_model]

    @property
    def n_heads(self) -> int:
        return self.Wq.shape[0]

    def validate(self, d_model: int) -> None:
        h, m, dh = self.Wq.shape
        if m != d_model or self.Wk.shape != self.Wq.shape or self.Wv.shape != self.Wq.shape:
            raise ShapeError(f"attention projections {self.Wq.shape} do not match d_model={d_model}")
        if self.Wo.shape != (h * dh, d_model):
            raise ShapeError(f"output projection {self.Wo.shape} != {(h * dh, d_model)}")


def mha_forward(X, w: AttentionWeights):
    w.validate(X.shape[-1])
    # X[..., S, M] -> per-head [..., h, S, dh]
    Xh = X[..., None, :, :]
    Q = Xh @ w.Wq
    K = Xh @ w.Wk
    V = Xh @ w.Wv
    O, attn = scaled_dot_product_attention(Q, K, V)
    concat = np.swapaxes(O, -3, -2)  # [..., S, h, dh]
    concat = concat.reshape(concat.shape[:-2] + (-1,))
    out = concat @ w.Wo
    return out, (X, Q, K, V, attn, concat)


def mha_backward(dout, cache, w: AttentionWeights):
    X, Q, K, V, attn, concat = cache
    h, m, dh = w.Wq.shape
    dconcat, dWo, _ = linear_backward(dout, concat, w.Wo)
    dO = dconcat.reshape(dconcat.shape[:-1] + (h, dh))
    dO = np.swapaxes(dO, -3, -2)  # [..., h, S, dh]
    dQ, dK, dV = sdpa_backward(dO, Q, K, V, attn)
    Xh = X[..., None, :, :]
    XhT = np.swapaxes(Xh, -1, -2)
    lead = tuple(range(X.ndim - 2))

    def wgrad(dP):
        # sum over batch axes of X^T dP, per head
        g = XhT @ dP
        return g.sum(axis=lead) if lead else g

    dX = (dQ @ np.swapaxes(w.Wq, -1, -2) + dK @ np.swapaxes(w.Wk, -1, -2)
          + dV @ np.swapaxes(w.Wv, -1, -2)).sum(axis=-3)
    return dX, {"Wq": wgrad(dQ), "Wk": wgrad(dK), "Wv": wgrad(dV), "Wo": dWo}


def multi_head_attention(X, w: AttentionWeights):
    return mha_forward(X, w)[0]


# -- normalisation / feed-forward -----------------------------------------------

def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    flat = dy.reshape(-1, d)
    dgain = (flat * xhat.reshape(-1, d)).sum(axis=0)
    dbias = flat.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def layer_norm(x, gain, bias, eps=LN_EPS):
    if eps <= 0:
        raise ValueError("layer norm eps must be positive")
    return layer_norm_forward(x, gain, bias, eps)[0]


def ffn_forward(x, W1, b1, W2, b2):
    pre = linear_forward(x, W1, b1)
    hid = np.maximum(pre, 0.0)
    return linear_forward(hid, W2, b2), (x, pre, hid)


def ffn_backward(dy, cache, W1, W2):
    x, pre, hid = cache
    dhid, dW2, db2 = linear_backward(dy, hid, W2)
    dpre = dhid * (pre > 0)
    dx, dW1, db1 = linear_backward(dpre, x, W1)
    return dx, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


# -- regularisation / pooling / loss ---------------------------------------------

def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate: float, rng: np.random.Generator | None = None, training: bool = False):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    return x * dropout_mask(x.shape, rate, rng)


def global_average_pool(x):
    if x.shape[-2] < 1:
        raise ShapeError("global average pool over an empty sequence")
    return x.mean(axis=-2)


def global_average_pool_backward(dy, seq_len: int):
    return np.repeat(dy[..., None, :], seq_len, axis=-2) / seq_len


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer `labels`; returns (loss, probs)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    loss = -logp[np.arange(b), labels].mean()
    return float(loss), probs


def softmax_cross_entropy_backward(probs, labels):
    b = probs.shape[0]
    d = probs.copy()
    d[np.arange(b), labels] -= 1.0
    return d / b


# -- encoder block ----------------------------------------------------------------

@dataclass
class EncoderBlockParams:
    """One post-norm encoder block: one or more attention sublayers, then the FFN.

    `attn[j]` is followed by Add & Norm with (`ln_attn_gain[j]`, `ln_attn_bias[j]`).
    """

    attn: list[AttentionWeights]
    ln_attn_gain: list[np.ndarray]
    ln_attn_bias: list[np.ndarray]
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    ln_ffn_gain: np.ndarray
    ln_ffn_bias: np.ndarray


def encoder_block_forward(x, p: EncoderBlockParams, *, eps=LN_EPS, sublayer_dropout=0.0,
                          rng=None, training=False):
    caches = []
    for j, w in enumerate(p.attn):
        a, c_att = mha_forward(x, w)
        mask = dropout_mask(a.shape, sublayer_dropout, rng) if training and sublayer_dropout > 0 else None
        if mask is not None:
            a = a * mask
        x, c_ln = layer_norm_forward(x + a, p.ln_attn_gain[j], p.ln_attn_bias[j], eps)
        caches.append((c_att, mask, c_ln))
    f, c_ffn = ffn_forward(x, p.W1, p.b1, p.W2, p.b2)
    mask = dropout_mask(f.shape, sublayer_dropout, rng) if training and sublayer_dropout > 0 else None
    if mask is not None:
        f = f * mask
    out, c_ln = layer_norm_forward(x + f, p.ln_ffn_gain, p.ln_ffn_bias, eps)
    return check_finite(out, "encoder block"), (caches, (c_ffn, mask, c_ln))


def encoder_block_backward(dout, cache, p: EncoderBlockParams):
    """Returns (dx, grads) with grads keyed like the block's parameter names."""
    caches, (c_ffn, mask, c_ln) = cache
    grads = {}
    dsum, grads["ln_ffn.gain"], grads["ln_ffn.bias"] = layer_norm_backward(dout, c_ln)
    df = dsum * mask if mask is not None else dsum
    dx, g = ffn_backward(df, c_ffn, p.W1, p.W2)
    for name, val in g.items():
        grads["ffn." + name] = val
    dx = dx + dsum
    for j in reversed(range(len(p.attn))):
        c_att, mask, c_ln = caches[j]
        dsum, grads[f"ln_attn.{j}.gain"], grads[f"ln_attn.{j}.bias"] = layer_norm_backward(dx, c_ln)
        da = dsum * mask if mask is not None else dsum
        dxa, g = mha_backward(da, c_att, p.attn[j])
        for name, val in g.items():
            grads[f"attn.{j}.{name}"] = val
        dx = dxa + dsum
    return dx, grads
