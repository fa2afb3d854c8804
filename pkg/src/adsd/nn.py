"""Parameter containers and the layers built from :mod:`adsd.ops`.

Every parameter is initialized from its own random stream derived from
``(seed, qualified parameter name)``. Adding or removing a submodule
therefore never changes the initial values of any other parameter, which
the decoder ablations rely on.
"""

from __future__ import annotations

import zlib
from typing import Iterator, Optional

import numpy as np

from . import ops
from .ops import BatchNormState, ConvSpec
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable tensor tagged with its initialization rule."""

    __slots__ = ("init", "fan_in")

    def __init__(self, shape, init: str = "zeros", fan_in: int = 1, dtype=np.float32):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.init = init
        self.fan_in = fan_in

    def reset(self, rng: np.random.Generator) -> None:
        if self.init == "fan_in_normal":
            std = np.sqrt(2.0 / self.fan_in)
            self.data[...] = rng.standard_normal(self.shape) * std
        elif self.init == "ones":
            self.data[...] = 1
        else:
            self.data[...] = 0


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, zlib.crc32(name.encode())])))


class Module:
    """Minimal container: attributes that are Parameters or Modules are registered."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def __delattr__(self, key):
        self._params.pop(key, None)
        self._modules.pop(key, None)
        object.__delattr__(self, key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def initialize(self, seed: int, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.reset(param_rng(seed, name))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, i) -> Module:
        return self._items[i]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.spec = spec
        kh, kw = spec.kernel
        fan_in = spec.in_channels * kh * kw
        self.weight = Parameter((spec.out_channels, spec.in_channels, kh, kw), "fan_in_normal", fan_in, dtype)
        self.bias = Parameter((spec.out_channels,), "zeros", dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class ConvTranspose2d(Module):
    def __init__(self, spec: ConvSpec, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.spec = spec
        kh, kw = spec.kernel
        # Each output pixel of a stride-s kernel-k layer sees in_channels * (k/s)^2 taps.
        sh, sw = spec.stride
        fan_in = max(1, spec.in_channels * max(1, kh // sh) * max(1, kw // sw))
        self.weight = Parameter((spec.in_channels, spec.out_channels, kh, kw), "fan_in_normal", fan_in, dtype)
        self.bias = Parameter((spec.out_channels,), "zeros", dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter((channels,), "ones", dtype=dtype)
        self.beta = Parameter((channels,), "zeros", dtype=dtype)
        self.state = BatchNormState(channels, momentum, eps, dtype)

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.state.running_mean
        yield prefix + "running_var", self.state.running_var

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state, training)


class ConvBNReLU(Module):
    """conv -> batch norm -> (optional) ReLU; the conv carries no bias."""

    def __init__(self, spec: ConvSpec, relu: bool = True, transposed: bool = False, dtype=np.float32):
        super().__init__()
        self.conv = (ConvTranspose2d if transposed else Conv2d)(spec, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(spec.out_channels, dtype=dtype)
        self.relu = relu

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.bn(self.conv(x), training)
        return ops.relu(y) if self.relu else y


def set_parameters_zero(module: Module, names: Optional[list[str]] = None) -> None:
    """Zero all (or the named) parameters of ``module`` in place."""
    for name, p in module.named_parameters():
        if names is None or name in names:
            p.data[...] = 0
