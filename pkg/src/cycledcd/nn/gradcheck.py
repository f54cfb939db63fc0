"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import functional as fn
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    per_param: dict[str, float] = field(default_factory=dict)
    skipped: int = 0  # probes discarded because the perturbation crossed a kink

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


class _KinkTrace:
    """Collects the sign pattern of every relu/prelu/abs input evaluated inside the block."""

    def __enter__(self):
        self.prev, fn._kink_log = fn._kink_log, []
        return self

    def __exit__(self, *exc):
        self.pattern = tuple(fn._kink_log)
        fn._kink_log = self.prev


def _eval(f, trace: bool):
    if not trace:
        return f().item(), None
    with _KinkTrace() as t:
        v = f().item()
    return v, t.pattern


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4, tol: float = 1e-3,
               max_elements: int | None = 40, seed: int = 0, skip_kinks: bool = False) -> GradCheckReport:
    """Compare backward() against (f(p+eps) - f(p-eps)) / (2 eps) element by element.

    ``f`` must be deterministic and rebuild its graph on each call.  With
    ``max_elements`` set, at most that many entries per parameter are perturbed
    (a seeded random subsample).  With ``skip_kinks``, a probe whose +/-eps
    evaluations change the activation pattern of any piecewise-linear op is
    discarded and replaced by another entry, since the central difference is
    not a derivative estimate there.
    """
    for p in params:
        p.grad = None
    with _KinkTrace() as base:
        out = f()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: objective is not finite")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    skipped = 0
    per_param: dict[str, float] = {}
    for k, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        want = flat.size if max_elements is None else min(max_elements, flat.size)
        order = rng.permutation(flat.size) if want < flat.size else np.arange(flat.size)
        err = 0.0
        done = 0
        for i in order:
            if done >= want:
                break
            orig = flat[i]
            flat[i] = orig + eps
            fp, pat_p = _eval(f, skip_kinks)
            flat[i] = orig - eps
            fm, pat_m = _eval(f, skip_kinks)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: objective is not finite")
            if skip_kinks and not (pat_p == base.pattern == pat_m):
                skipped += 1
                continue
            err = max(err, relative_error(float(analytic.reshape(-1)[i]), (fp - fm) / (2 * eps)))
            checked += 1
            done += 1
        per_param[p.name or f"param{k}"] = err
        worst = max(worst, err)
    return GradCheckReport(max_rel_error=worst, tol=tol, checked=checked, per_param=per_param, skipped=skipped)
