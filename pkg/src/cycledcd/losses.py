"""Training objectives for the adversarial magnitude mapper and the complex denoiser.

Norms are per-element means (MAE / MSE) so the weights are independent of the
batch and crop size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex_nn import ComplexTensor
from .nn import functional as fn
from .nn.tensor import Tensor, as_tensor

MAG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 5.0
    lambda_id: float = 10.0
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("lambda_cycle", "lambda_id", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite value >= 0, got {v}")


def _scores(s) -> Tensor:
    s = as_tensor(s)
    if s.size == 0:
        raise ValueError("empty score batch")
    return s


def rals_d_loss(real_scores, fake_scores) -> Tensor:
    """Relativistic average least-squares discriminator loss (margin 1)."""
    r, f = _scores(real_scores), _scores(fake_scores)
    return ((r - f.mean() - 1.0) ** 2).mean() + ((f - r.mean() + 1.0) ** 2).mean()


def rals_g_loss(real_scores, fake_scores) -> Tensor:
    return rals_d_loss(fake_scores, real_scores)


def l1(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return fn.abs(a - b).mean()


def mse(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


def cycle_loss(x, x_rec, y, y_rec) -> Tensor:
    """L1(F(G(x)), x) + L1(G(F(y)), y)."""
    return l1(x_rec, x) + l1(y_rec, y)


def identity_loss(x, f_x, y, g_y) -> Tensor:
    """L1(F(x), x) + L1(G(y), y)."""
    return l1(f_x, x) + l1(g_y, y)


def cyclegan_total(adv_g, adv_f, cyc, idt, w: LossWeights = LossWeights(), include_identity: bool = True) -> Tensor:
    total = as_tensor(adv_g) + as_tensor(adv_f) + w.lambda_cycle * as_tensor(cyc)
    if include_identity:
        total = total + w.lambda_id * as_tensor(idt)
    return total


def _complex(z) -> ComplexTensor:
    if isinstance(z, ComplexTensor):
        return z
    z = np.asarray(z)
    return ComplexTensor(Tensor(np.real(z).astype(np.float64)), Tensor(np.imag(z).astype(np.float64)))


def _mag(z: ComplexTensor) -> Tensor:
    return fn.sqrt(z.real * z.real + z.imag * z.imag + MAG_EPS)


def dcd_mag_loss(est, ref) -> Tensor:
    """MSE between magnitudes; a per-cell phase rotation of ``est`` leaves it unchanged."""
    e, r = _complex(est), _complex(ref)
    return mse(_mag(e), _mag(r))


def dcd_ri_loss(est, ref) -> Tensor:
    e, r = _complex(est), _complex(ref)
    return mse(e.real, r.real) + mse(e.imag, r.imag)


def full_loss(dcd_ri, dcd_mag, cyclegan, gamma: float = 0.5) -> Tensor:
    return as_tensor(dcd_ri) + as_tensor(dcd_mag) + gamma * as_tensor(cyclegan)
