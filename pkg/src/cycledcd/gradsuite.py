"""Finite-difference gradient suite shared by the ``gradcheck`` command and the tests."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from .attention import TfaParams, frequency_attention, temporal_attention
from .complex_nn import (ComplexTensor, apply_mask, bound_mask, complex_frequency_attention,
                         complex_temporal_attention)
from .models import ModelConfig, TwoStageModel, compose_with_phase, to_net
from .nn import functional as fn
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.layers import Conv2d
from .nn.tensor import Parameter, Tensor

SCOPES = ("layers", "losses", "model")


@dataclass
class Case:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Parameter]]]
    max_elements: int = 12
    skip_kinks: bool = False


def _p(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(scale * rng.standard_normal(shape))


def _probe(rng, shape) -> np.ndarray:
    """Fixed random weights that turn a tensor output into a scalar objective."""
    return rng.standard_normal(shape)


def _scalar(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


def _attn_params(rng, c=4, r=2) -> TfaParams:
    p = TfaParams(c, r, rng)
    p.lam.data = np.array(0.7)  # exercise the attention branch, not only the residual
    return p


def _named(params: dict[str, Parameter]) -> list[Parameter]:
    for k, v in params.items():
        v.name = k
    return list(params.values())


# -- layer cases -------------------------------------------------------------------------------

def _conv(rng):
    x, w, b = _p(rng, 2, 2, 5, 9), _p(rng, 3, 2, 3, 5), _p(rng, 3)
    probe = _probe(rng, (2, 3, 5, 5))
    return (lambda: _scalar(fn.conv2d(x, w, b, (1, 2), (1, 2)), probe)), _named({"x": x, "w": w, "b": b})


def _deconv(rng):
    y, w, b = _p(rng, 2, 3, 5, 5), _p(rng, 3, 2, 3, 5), _p(rng, 2)
    probe = _probe(rng, (2, 2, 5, 9))
    return (lambda: _scalar(fn.deconv2d(y, w, b, (1, 2), (1, 2), 1, (5, 9)), probe)), _named({"y": y, "w": w, "b": b})


def _in(rng):
    x, g, b = _p(rng, 2, 3, 4, 6), _p(rng, 3), _p(rng, 3)
    probe = _probe(rng, x.shape)
    return (lambda: _scalar(fn.instance_norm(x, g, b), probe)), _named({"x": x, "gamma": g, "beta": b})


def _prelu(rng):
    x, a = _p(rng, 2, 3, 4, 5), Parameter(np.array([0.1, 0.25, -0.3]))
    x.data[np.abs(x.data) < 1e-2] = 0.5  # keep away from the kink
    probe = _probe(rng, x.shape)
    return (lambda: _scalar(fn.prelu(x, a), probe)), _named({"x": x, "alpha": a})


def _glu(rng):
    x = _p(rng, 2, 4, 3, 5)
    probe = _probe(rng, (2, 2, 3, 5))
    return (lambda: _scalar(fn.glu(x), probe)), _named({"x": x})


def _axis_attn(fn_attn):
    def build(rng):
        p = _attn_params(rng)
        q, k, v = _p(rng, 1, 4, 5, 6), _p(rng, 1, 4, 5, 6), _p(rng, 1, 4, 5, 6)
        probe = _probe(rng, q.shape)
        params = {"Q": q, "K": k, "V": v, "wq": p.wq.weight, "wk": p.wk.weight, "wv": p.wv.weight, "lam": p.lam}
        return (lambda: _scalar(fn_attn(q, k, v, p), probe)), _named(params)
    return build


def _complex_attn(fn_attn):
    def build(rng):
        p = _attn_params(rng)
        xr, xi = _p(rng, 1, 4, 4, 5), _p(rng, 1, 4, 4, 5)
        pr, pi = _probe(rng, xr.shape), _probe(rng, xr.shape)

        def f():
            out = fn_attn(ComplexTensor(xr, xi), p)
            return _scalar(out.real, pr) + _scalar(out.imag, pi)
        params = {"x_real": xr, "x_imag": xi, "wq": p.wq.weight, "wk": p.wk.weight, "wv": p.wv.weight, "lam": p.lam}
        return f, _named(params)
    return build


def _mask(rng):
    rr, ri = _p(rng, 2, 1, 3, 7, scale=1.5), _p(rng, 2, 1, 3, 7, scale=1.5)
    rr.data[0, 0, 0, :2] = [1e-6, -3e-5]  # series branch near the origin
    ri.data[0, 0, 0, :2] = [2e-6, 1e-5]
    x = ComplexTensor(Tensor(rng.standard_normal(rr.shape)), Tensor(rng.standard_normal(rr.shape)))
    pr, pi = _probe(rng, rr.shape), _probe(rng, rr.shape)

    def f():
        y = apply_mask(x, bound_mask(ComplexTensor(rr, ri)))
        return _scalar(y.real, pr) + _scalar(y.imag, pi)
    return f, _named({"raw_real": rr, "raw_imag": ri})


LAYER_CASES = [
    Case("conv2d", _conv), Case("deconv2d", _deconv), Case("instance_norm", _in), Case("prelu", _prelu),
    Case("glu", _glu), Case("temporal_attention", _axis_attn(temporal_attention)),
    Case("frequency_attention", _axis_attn(frequency_attention)),
    Case("complex_temporal_attention", _complex_attn(complex_temporal_attention)),
    Case("complex_frequency_attention", _complex_attn(complex_frequency_attention)),
    Case("bound_mask_apply_mask", _mask),
]


# -- loss cases: every loss evaluated on the output of a small conv layer ---------------------------

def _tiny_net(rng):
    conv = Conv2d(1, 2, (3, 3), rng=rng)
    conv.bias.data = rng.standard_normal(2)
    x = Tensor(rng.standard_normal((2, 1, 4, 5)))
    return conv, x, _named({"weight": conv.weight, "bias": conv.bias})


def _loss_case(make):
    def build(rng):
        conv, x, params = _tiny_net(rng)
        ref = rng.standard_normal((2, 2, 4, 5))
        return (lambda: make(conv(x), ref)), params
    return build


def _scores(out: Tensor) -> Tensor:
    return out.mean(axis=(1, 2, 3))


def _rals_d(out, ref):
    return L.rals_d_loss(_scores(out), Tensor(ref).mean(axis=(1, 2, 3)) * 0.3)


def _rals_g(out, ref):
    return L.rals_g_loss(Tensor(ref).mean(axis=(1, 2, 3)) * 0.3, _scores(out))


def _cycle(out, ref):
    return L.cycle_loss(Tensor(ref), out, Tensor(ref[::-1].copy()), out * 0.5)


def _identity(out, ref):
    return L.identity_loss(Tensor(ref), out, Tensor(ref * 2.0), out * 1.5)


def _total(out, ref):
    a = L.rals_g_loss(Tensor(ref).mean(axis=(1, 2, 3)), _scores(out))
    return L.cyclegan_total(a, a * 0.5, L.l1(out, ref), L.l1(out * 2.0, ref))


def _split(out):
    return ComplexTensor(out[:, :1], out[:, 1:])


def _mag(out, ref):
    return L.dcd_mag_loss(_split(out), ref[:, :1] + 1j * ref[:, 1:])


def _ri(out, ref):
    return L.dcd_ri_loss(_split(out), ref[:, :1] + 1j * ref[:, 1:])


def _full(out, ref):
    s = ref[:, :1] + 1j * ref[:, 1:]
    cg = L.cyclegan_total(L.rals_g_loss(Tensor(ref).mean(axis=(1, 2, 3)), _scores(out)), Tensor(0.0),
                          L.l1(out, ref), Tensor(0.0), include_identity=False)
    return L.full_loss(L.dcd_ri_loss(_split(out), s), L.dcd_mag_loss(_split(out), s), cg, 0.5)


LOSS_CASES = [Case(n, _loss_case(m)) for n, m in (
    ("rals_d_loss", _rals_d), ("rals_g_loss", _rals_g), ("cycle_loss", _cycle), ("identity_loss", _identity),
    ("cyclegan_total", _total), ("dcd_mag_loss", _mag), ("dcd_ri_loss", _ri), ("full_loss", _full))]


# -- end-to-end model case -------------------------------------------------------------------------------

def tiny_model_config() -> ModelConfig:
    return ModelConfig().scaled(1 / 8, attn_reduction=4)


def _model(rng):
    model = TwoStageModel(tiny_model_config(), seed=int(rng.integers(1 << 31)))
    model.eval()  # fixed spectral-norm vectors make the objective a pure function of the weights
    for m in model.modules():
        if isinstance(m, TfaParams):
            m.lam.data = np.array(0.5)
    t = 2  # short input keeps the number of relu/prelu sites (and kink crossings) low
    noisy = rng.standard_normal((1, t, 161)) + 1j * rng.standard_normal((1, t, 161))
    clean = 0.5 * noisy + 0.1 * (rng.standard_normal(noisy.shape) + 1j * rng.standard_normal(noisy.shape))
    y = to_net(np.abs(clean))

    def f():
        mag = model.g_xy(to_net(np.abs(noisy)))
        _, enhanced = model.dcd(compose_with_phase(mag, noisy))
        ref = L._complex(clean[:, None])
        r, fk = model.d_y.score(y), model.d_y.score(mag)
        cyc = L.cycle_loss(to_net(np.abs(noisy)), model.f_yx(mag), y, y)
        cg = L.cyclegan_total(L.rals_g_loss(r, fk), Tensor(0.0), cyc, Tensor(0.0), include_identity=False)
        return L.full_loss(L.dcd_ri_loss(enhanced, ref), L.dcd_mag_loss(enhanced, ref), cg, 0.5)

    named = dict(model.named_parameters())
    # a representative slice of every sub-network: first/last layers, norms, attention, mask head
    picks = ["g_xy.down.0.conv.weight", "g_xy.down.2.norm.gamma", "g_xy.dra.0.conv.weight",
             "g_xy.dra.5.attn.ta.wq.weight", "g_xy.dra.3.attn.fa.lam", "g_xy.gates.0.ta.wk.weight",
             "g_xy.up.0.act.alpha", "g_xy.up.2.deconv.weight", "f_yx.down.0.conv.weight", "f_yx.up.2.deconv.weight",
             "d_y.convs.0.weight", "d_y.acts.2.alpha", "d_y.out.weight",
             "dcd.encoder.0.conv.w_real", "dcd.encoder.7.conv.w_imag", "dcd.encoder.3.norm.beta",
             "dcd.encoder.1.act.alpha_i", "dcd.attn.0.ta.wv.weight", "dcd.attn.5.fa.wq.weight",
             "dcd.decoder.0.conv.w_real", "dcd.decoder.7.conv.w_imag", "dcd.decoder.7.conv.b_real"]
    return f, _named({k: named[k] for k in picks})


MODEL_CASES = [Case("two_stage_model", _model, max_elements=3, skip_kinks=True)]

CASES = {"layers": LAYER_CASES, "losses": LOSS_CASES, "model": MODEL_CASES}


def run_case(case: Case, tol: float = 1e-3, eps: float = 1e-4, seed: int = 0) -> GradCheckReport:
    f, params = case.build(np.random.default_rng(seed))
    return grad_check(f, params, eps=eps, tol=tol, max_elements=case.max_elements, seed=seed,
                      skip_kinks=case.skip_kinks)


def run_scope(scope: str, tol: float = 1e-3, eps: float = 1e-4, seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    if scope not in CASES:
        raise ValueError(f"scope must be one of {SCOPES}")
    return [(c.name, run_case(c, tol, eps, seed)) for c in CASES[scope]]
