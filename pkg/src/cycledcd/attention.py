"""Factorized temporal/frequency attention over (B, C, T, F) feature maps.

Attention along one axis treats every position of the other axis (and every
batch member) as an independent sequence, so the weight matrices are T x T or
F x F instead of (T F) x (T F).  No 1/sqrt(d) scaling is applied to the scores.
The output is ``lam * O + K``, with ``lam`` a learnable scalar that starts at 0.
"""
from __future__ import annotations

import numpy as np

from .nn import functional as fn
from .nn.layers import Conv2d, Module
from .nn.tensor import Parameter, Tensor

_PERM = {"time": (0, 3, 2, 1), "freq": (0, 2, 3, 1)}  # (B, C, T, F) -> (B, other, axis, C)
_INV = {"time": (0, 3, 2, 1), "freq": (0, 3, 1, 2)}


class TfaParams(Module):
    """Projection kernels of one TA or FA block: widths C/r, C/r and C (r = ``reduction``)."""

    def __init__(self, channels: int, reduction: int = 8, rng: np.random.Generator | None = None):
        if channels % reduction:
            raise ValueError(f"attention needs channels divisible by {reduction}, got {channels}")
        rng = rng or np.random.default_rng(0)
        d = channels // reduction
        self.channels = channels
        self.wq = Conv2d(channels, d, kernel=(1, 1), rng=rng)
        self.wk = Conv2d(channels, d, kernel=(1, 1), rng=rng)
        self.wv = Conv2d(channels, channels, kernel=(1, 1), rng=rng)
        self.lam = Parameter(np.array(0.0))


def _to_sequences(x: Tensor, axis: str) -> Tensor:
    b, c, t, f = x.shape
    other, length = (f, t) if axis == "time" else (t, f)
    return x.transpose(_PERM[axis]).reshape(b * other, length, c)


def _from_sequences(x: Tensor, shape: tuple, axis: str) -> Tensor:
    b, c, t, f = shape
    inner = (b, f, t, c) if axis == "time" else (b, t, f, c)
    return x.reshape(inner).transpose(_INV[axis])


def attention_weights(q: Tensor, k: Tensor, axis: str) -> Tensor:
    """Row-stochastic weights softmax(Q' K'^T) over already-projected queries and keys."""
    qs, ks = _to_sequences(q, axis), _to_sequences(k, axis)
    return fn.softmax(qs @ ks.transpose(0, 2, 1), axis=-1)


def attend(weights: Tensor, v: Tensor, axis: str) -> Tensor:
    return _from_sequences(weights @ _to_sequences(v, axis), v.shape, axis)


def axis_attention(Q: Tensor, K: Tensor, V: Tensor, p: TfaParams, axis: str, return_weights: bool = False):
    if not (Q.shape == K.shape == V.shape):
        raise ValueError(f"Q, K, V shapes differ: {Q.shape}, {K.shape}, {V.shape}")
    if Q.shape[1] != p.channels:
        raise ValueError(f"expected {p.channels} channels, got {Q.shape[1]}")
    beta = attention_weights(p.wq(Q), p.wk(K), axis)
    out = p.lam * attend(beta, p.wv(V), axis) + K
    return (out, beta) if return_weights else out


def temporal_attention(Q: Tensor, K: Tensor, V: Tensor, p: TfaParams, return_weights: bool = False):
    """TA: attention across frames, weights of shape (B*F', T, T)."""
    return axis_attention(Q, K, V, p, "time", return_weights)


def frequency_attention(Q: Tensor, K: Tensor, V: Tensor, p: TfaParams, return_weights: bool = False):
    """FA: attention across frequency bins, weights of shape (B*T, F', F')."""
    return axis_attention(Q, K, V, p, "freq", return_weights)


def tf_self_attention(x: Tensor, p_t: TfaParams, p_f: TfaParams) -> Tensor:
    y = temporal_attention(x, x, x, p_t)
    return frequency_attention(y, y, y, p_f)


def tf_attention_gate(skip: Tensor, gate: Tensor, p_t: TfaParams, p_f: TfaParams) -> Tensor:
    """Queries and values from the encoder skip, keys (and so the residual) from the gate path."""
    if skip.shape != gate.shape:
        raise ValueError(f"skip {skip.shape} and gate {gate.shape} shapes differ")
    y = temporal_attention(skip, gate, skip, p_t)
    return frequency_attention(y, y, y, p_f)


class TFSelfAttention(Module):
    def __init__(self, channels: int, reduction: int = 8, rng=None):
        rng = rng or np.random.default_rng(0)
        self.ta = TfaParams(channels, reduction, rng)
        self.fa = TfaParams(channels, reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return tf_self_attention(x, self.ta, self.fa)


class TFAttentionGate(TFSelfAttention):
    def forward(self, skip: Tensor, gate: Tensor) -> Tensor:
        return tf_attention_gate(skip, gate, self.ta, self.fa)
