"""Parameter containers and the dense layers the model is built from."""
from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from moef.numerics import tensor as T
from moef.numerics.tensor import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Anything that owns parameters, discovered through its attributes in definition order."""

    def named_parameters(self, prefix: str = "", include_frozen: bool = False) -> Iterator[tuple[str, Tensor]]:
        """``(dotted name, tensor)`` pairs; frozen tensors only when ``include_frozen``."""
        seen: set[int] = set()
        for name, value in self._walk(prefix, include_frozen):
            if id(value) not in seen:
                seen.add(id(value))
                yield name, value

    def _walk(self, prefix, include_frozen=False):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield from _walk_value(f"{prefix}{key}", value, include_frozen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk_value(name, value, include_frozen=False):
    if isinstance(value, Tensor):
        if value.requires_grad or include_frozen:
            if value.name is None:
                value.name = name
            yield name, value
    elif isinstance(value, Module):
        yield from value._walk(name + ".", include_frozen)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{name}.{i}", item, include_frozen)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_value(f"{name}.{key}", item, include_frozen)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` stored as (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(glorot_uniform(rng, in_features, out_features))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Stack of Linear layers; ReLU between layers, configurable output activation."""

    def __init__(
        self,
        in_features: int,
        sizes: Sequence[int],
        rng: np.random.Generator,
        output_activation: Optional[str] = None,
    ):
        self.layers = []
        width = in_features
        for size in sizes:
            self.layers.append(Linear(width, size, rng))
            width = size
        self.output_activation = output_activation
        self.out_features = width

    def __call__(self, x) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = T.relu(x)
        if self.output_activation == "sigmoid":
            x = T.sigmoid(x)
        elif self.output_activation == "tanh":
            x = T.tanh(x)
        elif self.output_activation == "relu":
            x = T.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(width))
        self.shift = parameter(np.zeros(width))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        centered = x - T.mean(x, axis=-1, keepdims=True)
        var = T.mean(centered * centered, axis=-1, keepdims=True)
        return centered / T.sqrt(var + self.eps) * self.gain + self.shift
