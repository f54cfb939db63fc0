"""Complex-valued layers as pairs of real tensors, and complex ratio mask operations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TfaParams, attend, attention_weights
from .nn import functional as fn
from .nn.layers import Module, _uniform_kernel, same_padding
from .nn.tensor import Parameter, Tensor

CRM_FLOOR = 1e-10
MASK_MAX = 1.0 - 1e-12  # tanh rounds to exactly 1.0 beyond |raw| ~ 19


@dataclass
class ComplexTensor:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real {self.real.shape} and imag {self.imag.shape} shapes differ")

    @property
    def shape(self) -> tuple:
        return self.real.shape

    @classmethod
    def from_numpy(cls, z: np.ndarray) -> "ComplexTensor":
        return cls(Tensor(np.real(z)), Tensor(np.imag(z)))

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data

    def __add__(self, other: "ComplexTensor") -> "ComplexTensor":
        return ComplexTensor(self.real + other.real, self.imag + other.imag)

    def __mul__(self, other: "ComplexTensor") -> "ComplexTensor":
        a, b, c, d = self.real, self.imag, other.real, other.imag
        return ComplexTensor(a * c - b * d, a * d + b * c)


def concat(xs: list[ComplexTensor], axis: int = 1) -> ComplexTensor:
    return ComplexTensor(fn.concat([x.real for x in xs], axis), fn.concat([x.imag for x in xs], axis))


# -- primitives -------------------------------------------------------------------------

def complex_conv2d(x: ComplexTensor, w_real: Tensor, w_imag: Tensor, b_real=None, b_imag=None,
                   stride=1, padding=0, dilation=1) -> ComplexTensor:
    """(Wr*Xr - Wi*Xi) + j(Wr*Xi + Wi*Xr) as four real convolutions."""
    if w_real.shape != w_imag.shape:
        raise ValueError("real and imaginary kernels differ in shape")
    conv = lambda t, w: fn.conv2d(t, w, None, stride, padding, dilation)  # noqa: E731
    real = conv(x.real, w_real) - conv(x.imag, w_imag)
    imag = conv(x.imag, w_real) + conv(x.real, w_imag)
    if b_real is not None:
        real = real + b_real.reshape(1, -1, 1, 1)
        imag = imag + b_imag.reshape(1, -1, 1, 1)
    return ComplexTensor(real, imag)


def complex_deconv2d(x: ComplexTensor, w_real: Tensor, w_imag: Tensor, b_real=None, b_imag=None,
                     stride=1, padding=0, dilation=1, output_size=None) -> ComplexTensor:
    if w_real.shape != w_imag.shape:
        raise ValueError("real and imaginary kernels differ in shape")
    de = lambda t, w: fn.deconv2d(t, w, None, stride, padding, dilation, output_size)  # noqa: E731
    real = de(x.real, w_real) - de(x.imag, w_imag)
    imag = de(x.imag, w_real) + de(x.real, w_imag)
    if b_real is not None:
        real = real + b_real.reshape(1, -1, 1, 1)
        imag = imag + b_imag.reshape(1, -1, 1, 1)
    return ComplexTensor(real, imag)


def complex_instance_norm(x: ComplexTensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> ComplexTensor:
    """Instance norm applied to the real and imaginary parts independently."""
    return ComplexTensor(fn.instance_norm(x.real, gamma, beta, eps), fn.instance_norm(x.imag, gamma, beta, eps))


def cprelu(x: ComplexTensor, alpha_r: Tensor, alpha_i: Tensor) -> ComplexTensor:
    return ComplexTensor(fn.prelu(x.real, alpha_r), fn.prelu(x.imag, alpha_i))


def _complex_axis_attention(x: ComplexTensor, p: TfaParams, axis: str) -> ComplexTensor:
    """Eight real attentions sharing one projection set.

    real = A(r,r,r) - A(r,i,i) - A(i,r,i) - A(i,i,r)
    imag = A(r,r,i) + A(r,i,r) + A(i,r,r) - A(i,i,i)
    with A(q, k, v) = lam * softmax(q' k'^T) v' + k.  Projections and the four
    (q, k) weight matrices are computed once and reused.
    """
    if x.shape[1] != p.channels:
        raise ValueError(f"expected {p.channels} channels, got {x.shape[1]}")
    xr, xi = x.real, x.imag
    q = {"r": p.wq(xr), "i": p.wq(xi)}
    k = {"r": p.wk(xr), "i": p.wk(xi)}
    v = {"r": p.wv(xr), "i": p.wv(xi)}
    beta = {qk: attention_weights(q[qk[0]], k[qk[1]], axis) for qk in ("rr", "ri", "ir", "ii")}
    o = lambda qk, vv: attend(beta[qk], v[vv], axis)  # noqa: E731
    o_real = o("rr", "r") - o("ri", "i") - o("ir", "i") - o("ii", "r")
    o_imag = o("rr", "i") + o("ri", "r") + o("ir", "r") - o("ii", "i")
    # residual keys: real K slots (r, i, r, i) with signs (+, -, -, -); imag (r, i, r, i) with (+, +, +, -)
    k_real = xr - xi - xr - xi
    k_imag = xr + xi + xr - xi
    return ComplexTensor(p.lam * o_real + k_real, p.lam * o_imag + k_imag)


def complex_temporal_attention(x: ComplexTensor, p: TfaParams) -> ComplexTensor:
    return _complex_axis_attention(x, p, "time")


def complex_frequency_attention(x: ComplexTensor, p: TfaParams) -> ComplexTensor:
    return _complex_axis_attention(x, p, "freq")


def ct_f_sa(x: ComplexTensor, p_t: TfaParams, p_f: TfaParams) -> ComplexTensor:
    return complex_frequency_attention(complex_temporal_attention(x, p_t), p_f)


# -- complex ratio masks -------------------------------------------------------------------

@dataclass
class ComplexRatioMask:
    real: np.ndarray
    imag: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)

    @property
    def phase(self) -> np.ndarray:
        return np.arctan2(self.imag, self.real)

    def numpy(self) -> np.ndarray:
        return self.real + 1j * self.imag


def ideal_crm(noisy: np.ndarray, clean: np.ndarray, floor: float = CRM_FLOOR) -> ComplexRatioMask:
    """Cartesian ideal complex ratio mask clean / noisy.

    |noisy|^2 is clamped from below at ``floor`` so the ratio is exact wherever
    |noisy|^2 exceeds it and silent cells stay finite.
    """
    noisy, clean = np.asarray(noisy), np.asarray(clean)
    if noisy.shape != clean.shape:
        raise ValueError("noisy and clean spectra differ in shape")
    xr, xi, sr, si = noisy.real, noisy.imag, clean.real, clean.imag
    den = np.maximum(xr * xr + xi * xi, floor)
    if floor <= 0:
        den = np.where(den == 0, 1.0, den)
    return ComplexRatioMask((xr * sr + xi * si) / den, (xr * si - xi * sr) / den)


def _bound_arrays(xr: np.ndarray, xi: np.ndarray):
    r = np.hypot(xr, xi)
    small = r < 1e-4
    rs = np.where(small, 1.0, r)
    # ratio = tanh(r)/r and h = ratio'(r)/r, with series values near 0
    with np.errstate(over="ignore"):
        th = np.minimum(np.tanh(rs), MASK_MAX)
        rr = np.where(small, r * r, 0.0)
        ratio = np.where(small, 1.0 - rr / 3.0, th / rs)
        sech2 = np.where(th >= MASK_MAX, 0.0, 1.0 - th * th)
        h = np.where(small, -2.0 / 3.0 + 8.0 / 15.0 * rr, (sech2 * rs - th) / rs ** 3)
    return ratio, h


def bound_mask(raw: ComplexTensor) -> ComplexTensor:
    """Mask with magnitude tanh(|raw|) and the phase of ``raw`` (phase 0 at raw = 0)."""
    xr, xi = raw.real.data, raw.imag.data
    ratio, h = _bound_arrays(xr, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        cross = np.nan_to_num(h * xr * xi, nan=0.0, posinf=0.0, neginf=0.0)
        d_rr = np.nan_to_num(ratio + h * xr * xr, nan=0.0, posinf=0.0, neginf=0.0)
        d_ii = np.nan_to_num(ratio + h * xi * xi, nan=0.0, posinf=0.0, neginf=0.0)
    m_r = Tensor.from_op(ratio * xr, (raw.real, raw.imag), lambda g: (g * d_rr, g * cross))
    m_i = Tensor.from_op(ratio * xi, (raw.real, raw.imag), lambda g: (g * cross, g * d_ii))
    return ComplexTensor(m_r, m_i)


def apply_mask(x: ComplexTensor, m: ComplexTensor) -> ComplexTensor:
    """Elementwise complex product; equals |X| |M| exp(j(angle X + angle M))."""
    return x * m


def apply_mask_polar(x: np.ndarray, m: ComplexRatioMask) -> np.ndarray:
    return np.abs(x) * m.magnitude * np.exp(1j * (np.angle(x) + m.phase))


# -- layers ------------------------------------------------------------------------------------

class ComplexConv2d(Module):
    def __init__(self, cin: int, cout: int, kernel=(3, 5), stride=(1, 2), rng=None, transposed: bool = False):
        rng = rng or np.random.default_rng(0)
        kernel = fn._pair(kernel)
        self.stride = fn._pair(stride)
        self.padding = same_padding(kernel)
        self.transposed = transposed
        shape = ((cin, cout) if transposed else (cout, cin)) + kernel
        # real/imag parts each drawn at 1/sqrt(2) the real bound so |W| matches a real layer
        fan = cin * kernel[0] * kernel[1] * 2
        self.w_real = Parameter(_uniform_kernel(rng, shape, fan))
        self.w_imag = Parameter(_uniform_kernel(rng, shape, fan))
        self.b_real = Parameter(np.zeros(cout))
        self.b_imag = Parameter(np.zeros(cout))

    def forward(self, x: ComplexTensor, output_size=None) -> ComplexTensor:
        if self.transposed:
            return complex_deconv2d(x, self.w_real, self.w_imag, self.b_real, self.b_imag,
                                    self.stride, self.padding, 1, output_size)
        return complex_conv2d(x, self.w_real, self.w_imag, self.b_real, self.b_imag, self.stride, self.padding)


class ComplexInstanceNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        return complex_instance_norm(x, self.gamma, self.beta, self.eps)


class CPReLU(Module):
    def __init__(self, channels: int, init: float = 0.25):
        self.alpha_r = Parameter(np.full(channels, init))
        self.alpha_i = Parameter(np.full(channels, init))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        return cprelu(x, self.alpha_r, self.alpha_i)


class CTFSelfAttention(Module):
    def __init__(self, channels: int, reduction: int = 8, rng=None):
        rng = rng or np.random.default_rng(0)
        self.ta = TfaParams(channels, reduction, rng)
        self.fa = TfaParams(channels, reduction, rng)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        return ct_f_sa(x, self.ta, self.fa)
