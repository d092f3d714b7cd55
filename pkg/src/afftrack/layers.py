"""Network building blocks assembled from layer specifications.

A :class:`LayerSpec` describes one unit of a sub-network. Conv specs expand
into up to three indexable units (conv, batchnorm, relu) so that layer ids
inside a :class:`LayerStack` count normalization and activation separately;
feature taps reference those expanded ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import autograd as ag
from .autograd import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_KINDS = ("conv2d", "batchnorm2d", "relu", "maxpool2d")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    has_bn: bool = False
    has_relu: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if self.kernel < 0 or self.padding < 0:
            raise ValueError(f"{self.kind}: kernel and padding must be nonnegative")
        if self.kind == "conv2d" and (self.in_channels < 1 or self.out_channels < 1 or self.kernel < 1):
            raise ValueError("conv2d spec needs positive channel counts and kernel")
        if self.kind == "maxpool2d" and self.kernel < 1:
            raise ValueError("maxpool2d spec needs a positive kernel")

    def unit_count(self) -> int:
        if self.kind == "conv2d":
            return 1 + int(self.has_bn) + int(self.has_relu)
        return 1


def conv(in_c: int, out_c: int, kernel: int = 3, stride: int = 1, padding: int = 1,
         bn: bool = True, relu: bool = True) -> LayerSpec:
    return LayerSpec("conv2d", in_c, out_c, kernel, stride, padding, bn, relu)


def pool(kernel: int = 2, stride: int | None = None, padding: int = 0) -> LayerSpec:
    return LayerSpec("maxpool2d", kernel=kernel, stride=kernel if stride is None else stride,
                     padding=padding)


def layer_output_shapes(specs: Iterable[LayerSpec], in_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    """(C, H, W) after each expanded unit, computed from the floor formula."""
    chan, height, width = in_shape
    shapes: list[tuple[int, int, int]] = []
    for spec in specs:
        if spec.kind == "conv2d":
            height = (height + 2 * spec.padding - spec.kernel) // spec.stride + 1
            width = (width + 2 * spec.padding - spec.kernel) // spec.stride + 1
            chan = spec.out_channels
            shapes.extend([(chan, height, width)] * spec.unit_count())
        elif spec.kind == "maxpool2d":
            height = (height + 2 * spec.padding - spec.kernel) // spec.stride + 1
            width = (width + 2 * spec.padding - spec.kernel) // spec.stride + 1
            shapes.append((chan, height, width))
        else:
            shapes.append((chan, height, width))
    return shapes


class Conv2d:
    def __init__(self, in_c: int, out_c: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator, dtype=np.float32):
        fan_in = in_c * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(out_c, in_c, kernel, kernel))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_c, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class BatchNorm2d:
    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ag.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               training=training, momentum=BN_MOMENTUM, eps=BN_EPS)

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU:
    def __call__(self, x: Tensor) -> Tensor:
        return ag.relu(x)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class MaxPool2d:
    def __init__(self, kernel: int, stride: int, padding: int):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.maxpool2d(x, self.kernel, self.stride, self.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class LayerStack:
    """A sequential sub-network with per-unit output taps."""

    def __init__(self, specs: Iterable[LayerSpec], rng: np.random.Generator, dtype=np.float32):
        self.specs = tuple(specs)
        self.units: list = []
        for spec in self.specs:
            if spec.kind == "conv2d":
                self.units.append(Conv2d(spec.in_channels, spec.out_channels, spec.kernel,
                                         spec.stride, spec.padding, rng, dtype))
                if spec.has_bn:
                    self.units.append(BatchNorm2d(spec.out_channels, dtype))
                if spec.has_relu:
                    self.units.append(ReLU())
            elif spec.kind == "batchnorm2d":
                self.units.append(BatchNorm2d(spec.out_channels or spec.in_channels, dtype))
            elif spec.kind == "relu":
                self.units.append(ReLU())
            else:
                self.units.append(MaxPool2d(spec.kernel, spec.stride, spec.padding))

    def __len__(self) -> int:
        return len(self.units)

    def forward(self, x: Tensor, training: bool, taps: Iterable[int] = ()) -> tuple[Tensor, dict[int, Tensor]]:
        wanted = set(taps)
        bad = [t for t in wanted if t < 0 or t >= len(self.units)]
        if bad:
            raise ag.ShapeError(f"tap ids {bad} outside stack of {len(self.units)} units")
        grabbed: dict[int, Tensor] = {}
        for index, unit in enumerate(self.units):
            if isinstance(unit, BatchNorm2d):
                x = unit(x, training)
            else:
                x = unit(x)
            if index in wanted:
                grabbed[index] = x
        return x, grabbed

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for index, unit in enumerate(self.units):
            for key, tensor in unit.parameters().items():
                named[f"{index}.{key}"] = tensor
        return named

    def buffers(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for index, unit in enumerate(self.units):
            for key, arr in unit.buffers().items():
                named[f"{index}.{key}"] = arr
        return named


def sgd_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
               lr: float, momentum: float = 0.9, weight_decay: float = 5e-4) -> None:
    """One in-place momentum step: v = m*v + g + wd*p, then p -= lr*v."""
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            sgd_update(t.data, t.grad, self.velocity[name], self.lr, self.momentum, self.weight_decay)
