"""Backend selection for the convolution unfold/fold kernels.

The compiled extension is used when it imports; setting ``CYCLEDCD_PURE_PYTHON=1``
forces the numpy fallback. :func:`use_backend` switches at runtime (benchmarks, tests).
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("CYCLEDCD_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"
_impl = _BACKENDS[BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available (have {available_backends()})")
    BACKEND = name
    _impl = _BACKENDS[name]


def im2col(x: np.ndarray, kernel, stride, padding, dilation, out_hw) -> np.ndarray:
    """Unfold ``x`` (B, C, H, W) into columns (B, C*kh*kw, Ho*Wo); out-of-range taps read 0."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.im2col(x, kernel[0], kernel[1], stride[0], stride[1], padding[0], padding[1],
                        dilation[0], dilation[1], out_hw[0], out_hw[1])


def col2im(cols: np.ndarray, in_shape, kernel, stride, padding, dilation, out_hw) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto a (B, C, H, W) grid."""
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    _, c, h, w = in_shape
    return _impl.col2im(cols, c, h, w, kernel[0], kernel[1], stride[0], stride[1],
                        padding[0], padding[1], dilation[0], dilation[1], out_hw[0], out_hw[1])
