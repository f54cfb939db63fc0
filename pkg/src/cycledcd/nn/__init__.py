"""Minimal reverse-mode autodiff engine and layers on numpy."""
from . import functional, kernels
from .gradcheck import GradCheckReport, grad_check
from .layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Module, PReLU
from .tensor import NonFiniteError, Parameter, Tensor, no_grad, set_check_finite

__all__ = [
    "Conv2d", "ConvTranspose2d", "GradCheckReport", "InstanceNorm2d", "Module", "NonFiniteError",
    "PReLU", "Parameter", "Tensor", "functional", "grad_check", "kernels", "no_grad",
    "set_check_finite",
]
