"""Adagrad."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from moef import _kernels
from moef.errors import DimensionError
from moef.numerics.tensor import Tensor


@dataclass
class AdagradState:
    learning_rate: float = 0.01
    epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)

    def accumulator(self, name: str, shape) -> np.ndarray:
        acc = self.accumulators.get(name)
        if acc is None:
            acc = self.accumulators[name] = np.zeros(shape)
        elif acc.shape != tuple(shape):
            raise DimensionError(f"accumulator {name!r} has shape {acc.shape}, parameter has {tuple(shape)}")
        return acc


def adagrad_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdagradState,
    rows: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Apply one Adagrad update in place.

    ``acc += g**2`` then ``p -= lr * g / (sqrt(acc) + eps)``. When ``rows`` names a
    parameter, only those rows are visited; rows with zero gradient would be left
    unchanged by the dense update anyway.
    """
    rows = rows or {}
    lr, eps = state.learning_rate, state.epsilon
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        acc = state.accumulator(name, p.shape)
        touched = rows.get(name)
        if touched is None:
            _kernels.adagrad_update(p, g, acc, lr, eps)
        else:
            p_rows, acc_rows = p[touched], acc[touched]
            _kernels.adagrad_update(p_rows, np.ascontiguousarray(g[touched]), acc_rows, lr, eps)
            p[touched] = p_rows
            acc[touched] = acc_rows


class Adagrad:
    def __init__(self, named_params: Iterable[tuple[str, Tensor]], lr: float = 0.01, eps: float = 1e-8):
        self.params = dict(named_params)
        self.state = AdagradState(learning_rate=lr, epsilon=eps)

    def step(self) -> None:
        data = {n: p.data for n, p in self.params.items()}
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        rows = {n: p.grad_rows for n, p in self.params.items() if p.grad_rows is not None}
        adagrad_step(data, grads, self.state, rows)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
