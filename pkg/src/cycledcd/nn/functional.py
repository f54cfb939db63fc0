"""Differentiable primitives on (B, C, T, F) tensors.

Each op computes its forward value with numpy and registers an analytic
backward.  Convolutions unfold through :mod:`cycledcd.nn.kernels`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .tensor import DTYPE, Tensor, as_tensor


_kink_log: list | None = None  # sign patterns of piecewise-linear ops, recorded during grad checks


def _record_kinks(xd: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(xd > 0).tobytes())


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


# -- elementwise ----------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    xd = x.data
    _record_kinks(xd)
    return Tensor.from_op(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _record_kinks(x.data)
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with per-row max subtraction."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward)


# -- activations and normalization ------------------------------------------------

def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with one slope per channel (axis 1)."""
    xd = x.data
    a = alpha.data.reshape((1, -1) + (1,) * (xd.ndim - 2))
    neg = xd < 0
    _record_kinks(xd)
    out = np.where(neg, a * xd, xd)

    def backward(g):
        gx = np.where(neg, a * g, g)
        red = (0,) + tuple(range(2, xd.ndim))
        ga = (g * xd * neg).sum(axis=red).reshape(alpha.shape)
        return gx, ga

    return Tensor.from_op(out, (x, alpha), backward)


def glu(x: Tensor, axis: int = 1) -> Tensor:
    """Gated linear unit: first channel half times sigmoid of the second half."""
    c = x.shape[axis]
    if c % 2:
        raise ValueError(f"glu needs an even channel count, got {c}")
    a, b = np.split(x.data, 2, axis=axis)
    s = _sigmoid(b)
    out = a * s

    def backward(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)

    return Tensor.from_op(out, (x,), backward)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) standardization over the (T, F) plane, then affine."""
    xd = x.data
    n = xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gm = gamma.data.reshape(1, -1, 1, 1)
    out = xhat * gm + beta.data.reshape(1, -1, 1, 1)

    def backward(g):
        dxhat = g * gm
        s1 = dxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        gx = inv * (dxhat - s1 / n - xhat * s2 / n)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta), backward)


# -- convolution -------------------------------------------------------------------

def conv_out_size(n: int, k: int, s: int, p: int, d: int) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, dilation=1) -> Tensor:
    """Cross-correlation; ``w`` is (Cout, Cin, kT, kF); out-of-range taps read 0."""
    stride, padding, dilation = _pair(stride), _pair(padding), _pair(dilation)
    nb, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {cin_w}")
    ho = conv_out_size(h, kh, stride[0], padding[0], dilation[0])
    wo = conv_out_size(wd, kw, stride[1], padding[1], dilation[1])
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: empty output for input {x.shape} and kernel {w.shape}")
    w2 = w.data.reshape(cout, -1)
    pointwise = (kh, kw) == (1, 1) and stride == (1, 1) and padding == (0, 0)
    if pointwise:
        cols = x.data.reshape(nb, cin, h * wd)
    else:
        cols = kernels.im2col(x.data, (kh, kw), stride, padding, dilation, (ho, wo))
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data.reshape(1, -1, 1)
    out = out.reshape(nb, cout, ho, wo)

    def backward(g):
        g3 = g.reshape(nb, cout, ho * wo)
        gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gcols = np.matmul(w2.T, g3)
        if pointwise:
            gx = gcols.reshape(x.shape)
        else:
            gx = kernels.col2im(gcols, x.shape, (kh, kw), stride, padding, dilation, (ho, wo))
        grads = [gx, gw]
        if b is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


def deconv_out_size(n: int, k: int, s: int, p: int, d: int, output_padding: int = 0) -> int:
    return (n - 1) * s - 2 * p + d * (k - 1) + 1 + output_padding


def deconv2d(y: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, dilation=1,
             output_size: Sequence[int] | None = None) -> Tensor:
    """Transposed convolution, the exact adjoint of :func:`conv2d` with the same ``w``.

    ``w`` is (Cin, Cout, kT, kF): a conv2d kernel mapping Cout -> Cin read backwards.
    ``output_size`` (H, W) selects the output padding; it must lie within one stride
    of the minimal transposed size.
    """
    stride, padding, dilation = _pair(stride), _pair(padding), _pair(dilation)
    nb, cin, hy, wy = y.shape
    cin_w, cout, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"deconv2d: input has {cin} channels, kernel expects {cin_w}")
    hmin = deconv_out_size(hy, kh, stride[0], padding[0], dilation[0])
    wmin = deconv_out_size(wy, kw, stride[1], padding[1], dilation[1])
    h, wd = (hmin, wmin) if output_size is None else (int(output_size[0]), int(output_size[1]))
    if not (0 <= h - hmin < stride[0] and 0 <= wd - wmin < stride[1]):
        raise ValueError(f"deconv2d: output size {(h, wd)} unreachable from input {y.shape[2:]}")
    out_shape = (nb, cout, h, wd)
    w2 = w.data.reshape(cin, -1)
    y3 = y.data.reshape(nb, cin, hy * wy)
    cols = np.matmul(w2.T, y3)
    out = kernels.col2im(cols, out_shape, (kh, kw), stride, padding, dilation, (hy, wy))
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def backward(g):
        gcols = kernels.im2col(g, (kh, kw), stride, padding, dilation, (hy, wy))
        gy = np.matmul(w2, gcols).reshape(y.shape)
        gw = np.tensordot(y3, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        grads = [gy, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (y, w) if b is None else (y, w, b)
    return Tensor.from_op(out, parents, backward)


# -- spectral normalization -------------------------------------------------------------

def _normalize(v: np.ndarray) -> np.ndarray:
    return v / max(np.linalg.norm(v), 1e-12)


def power_iteration(w: np.ndarray, u: np.ndarray, n_iter: int) -> np.ndarray:
    """Refine the left singular-vector estimate ``u`` of ``w`` reshaped to (Cout, -1)."""
    w2 = w.reshape(w.shape[0], -1)
    for _ in range(n_iter):
        v = _normalize(w2.T @ u)
        u = _normalize(w2 @ v)
    return u


def spectral_norm(w: Tensor, u: np.ndarray, n_power_iterations: int = 1) -> tuple[Tensor, np.ndarray]:
    """Return ``(w / sigma_hat, u_new)``.

    ``sigma_hat = ||W^T u||`` for the refined ``u`` (W is ``w`` as a Cout x rest matrix);
    its gradient with ``u`` held fixed is exactly ``u v^T`` with ``v = W^T u / sigma_hat``.
    """
    u = power_iteration(w.data, np.asarray(u, dtype=DTYPE), n_power_iterations)
    w2 = w.data.reshape(w.shape[0], -1)
    wtu = w2.T @ u
    sigma = float(np.linalg.norm(wtu))
    v = wtu / sigma
    out = w.data / sigma
    uv = np.outer(u, v).reshape(w.shape)

    def backward(g):
        return (g / sigma - (float((g * w.data).sum()) / sigma ** 2) * uv,)

    return Tensor.from_op(out, (w,), backward), u
