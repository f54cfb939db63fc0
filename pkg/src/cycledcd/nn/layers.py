"""Parameterized layers built on :mod:`cycledcd.nn.functional`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as fn
from .tensor import Parameter, Tensor


class Module:
    """Container that discovers :class:`Parameter` attributes and child modules.

    Buffers are non-trainable numpy arrays (e.g. power-iteration vectors) that are
    still part of the saved state.  Names are dotted attribute paths.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        names = list(getattr(self, "_buffer_names", ()))
        if name not in names:
            names.append(name)
        self._buffer_names = tuple(names)
        setattr(self, name, np.asarray(value, dtype=np.float64))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state["buffer:" + name] = np.array(buf, copy=True)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = {name for name, _ in self.named_buffers()}
        expected = set(params) | {"buffer:" + b for b in buffers}
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name in buffers:
            owner, attr = self._resolve(name)
            setattr(owner, attr, np.array(state["buffer:" + name], dtype=np.float64))

    def _resolve(self, dotted: str):
        parts = dotted.split(".")
        obj = self
        for part in parts[:-1]:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        return obj, parts[-1]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform_kernel(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def same_padding(kernel, dilation=(1, 1)) -> tuple[int, int]:
    """Padding that keeps T at stride 1 and yields ceil(F/2) at frequency stride 2."""
    return ((kernel[0] - 1) // 2 * dilation[0], (kernel[1] - 1) // 2 * dilation[1])


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel=(3, 5), stride=(1, 1), dilation=(1, 1),
                 padding=None, rng: np.random.Generator | None = None, spectral_norm: bool = False):
        rng = rng or np.random.default_rng(0)
        kernel, stride, dilation = fn._pair(kernel), fn._pair(stride), fn._pair(dilation)
        self.stride, self.dilation = stride, dilation
        self.padding = same_padding(kernel, dilation) if padding is None else fn._pair(padding)
        self.weight = Parameter(_uniform_kernel(rng, (cout, cin) + kernel, cin * kernel[0] * kernel[1]))
        self.bias = Parameter(np.zeros(cout))
        self.spectral_norm = spectral_norm
        if spectral_norm:
            self.register_buffer("sn_u", rng.standard_normal(cout))
            self.sn_u = self.sn_u / np.linalg.norm(self.sn_u)

    def effective_weight(self) -> Tensor:
        if not self.spectral_norm:
            return self.weight
        w, u = fn.spectral_norm(self.weight, self.sn_u, 1 if self.training else 0)
        if self.training:
            self.sn_u = u
        return w

    def forward(self, x: Tensor) -> Tensor:
        return fn.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel=(3, 5), stride=(1, 1), dilation=(1, 1),
                 padding=None, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        kernel, stride, dilation = fn._pair(kernel), fn._pair(stride), fn._pair(dilation)
        self.stride, self.dilation = stride, dilation
        self.padding = same_padding(kernel, dilation) if padding is None else fn._pair(padding)
        self.weight = Parameter(_uniform_kernel(rng, (cin, cout) + kernel, cin * kernel[0] * kernel[1]))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x: Tensor, output_size=None) -> Tensor:
        return fn.deconv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, output_size)


class InstanceNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return fn.instance_norm(x, self.gamma, self.beta, self.eps)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25):
        self.alpha = Parameter(np.full(channels, init))

    def forward(self, x: Tensor) -> Tensor:
        return fn.prelu(x, self.alpha)
