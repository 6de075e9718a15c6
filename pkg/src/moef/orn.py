"""Occasion representation network: spectrum sequence -> occasion vector h_L.

The occasion evolution layer is an LSTM by default. A one-layer Transformer
encoder (sinusoidal positions, last-position readout) and a mean-pool MLP
(used by the ablations that drop the recurrent layer or the FFT) are
available through :class:`EncoderConfig`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from moef import numerics as nm
from moef.attention import multi_head_attention, sinusoidal_positions
from moef.errors import ConfigError, DimensionError, InsufficientHistoryError
from moef.numerics import Linear, LayerNorm, MLP, Module, glorot_uniform, parameter
from moef.signals import SpectrumSequence

OEL_KINDS = ("lstm", "transformer_encoder", "mlp_pool")
GATES = ("i", "f", "o", "c")


@dataclass(frozen=True)
class EncoderConfig:
    oel_kind: str = "lstm"
    hidden_size: int = 96
    transformer_heads: int = 4
    transformer_layers: int = 1
    transformer_ff: Optional[int] = None
    positional_encoding: str = "sinusoidal"

    def __post_init__(self):
        if self.oel_kind not in OEL_KINDS:
            raise ConfigError(f"oel_kind must be one of {OEL_KINDS}, got {self.oel_kind!r}")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be positive")
        if self.positional_encoding != "sinusoidal":
            raise ConfigError("only sinusoidal positional encoding is supported")
        if self.oel_kind == "transformer_encoder" and self.hidden_size % self.transformer_heads:
            raise ConfigError("hidden_size must be divisible by transformer_heads")

    @property
    def feed_forward(self) -> int:
        return self.transformer_ff or 2 * self.hidden_size


class LstmParams(Module):
    """Per-gate input (d x d_h), recurrent (d_h x d_h) matrices and biases.

    Matrices are stored transposed relative to the column-vector convention
    (``x @ W`` rather than ``W x``). The forget-gate bias starts at 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_input = {g: parameter(glorot_uniform(rng, input_size, hidden_size)) for g in GATES}
        self.w_hidden = {g: parameter(glorot_uniform(rng, hidden_size, hidden_size)) for g in GATES}
        self.bias = {g: parameter(np.full(hidden_size, 1.0 if g == "f" else 0.0)) for g in GATES}


def lstm_step(x, h_prev, c_prev, params: LstmParams, return_gates: bool = False):
    """One LSTM transition on (S, d) inputs and (S, d_h) states."""
    x, h_prev, c_prev = nm.as_tensor(x), nm.as_tensor(h_prev), nm.as_tensor(c_prev)
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise DimensionError(
            f"lstm_step: input {x.shape} / state {h_prev.shape} do not match "
            f"d={params.input_size}, d_h={params.hidden_size}"
        )

    def pre(g):
        return nm.matmul(x, params.w_input[g]) + nm.matmul(h_prev, params.w_hidden[g]) + params.bias[g]

    i = nm.sigmoid(pre("i"))
    f = nm.sigmoid(pre("f"))
    o = nm.sigmoid(pre("o"))
    candidate = nm.tanh(pre("c"))
    c = f * c_prev + i * candidate
    h = o * nm.tanh(c)
    if return_gates:
        return h, c, {"i": i, "f": f, "o": o, "candidate": candidate}
    return h, c


class LstmEncoder(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.cell = LstmParams(input_size, hidden_size, rng)

    def __call__(self, seq: nm.Tensor) -> nm.Tensor:
        s, length, _ = seq.shape
        h = nm.Tensor(np.zeros((s, self.cell.hidden_size)))
        c = nm.Tensor(np.zeros((s, self.cell.hidden_size)))
        for t in range(length):
            h, c = lstm_step(seq[:, t, :], h, c, self.cell)
        return h


class TransformerLayer(Module):
    def __init__(self, width: int, heads: int, ff: int, rng: np.random.Generator):
        self.heads = heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.out = Linear(width, width, rng)
        self.norm1 = LayerNorm(width)
        self.ff = MLP(width, [ff, width], rng)
        self.norm2 = LayerNorm(width)

    def __call__(self, x: nm.Tensor) -> nm.Tensor:
        attended = multi_head_attention(self.query(x), self.key(x), self.value(x), self.heads)
        x = self.norm1(x + self.out(attended))
        return self.norm2(x + self.ff(x))


class TransformerEncoder(Module):
    def __init__(self, input_size: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.project = Linear(input_size, cfg.hidden_size, rng)
        self.layers = [
            TransformerLayer(cfg.hidden_size, cfg.transformer_heads, cfg.feed_forward, rng)
            for _ in range(cfg.transformer_layers)
        ]

    def __call__(self, seq: nm.Tensor) -> nm.Tensor:
        x = self.project(seq)
        x = x + sinusoidal_positions(seq.shape[1], x.shape[-1])
        for layer in self.layers:
            x = layer(x)
        return x[:, -1, :]


class MlpPoolEncoder(Module):
    """Mean over sequence positions, then a two-layer perceptron with tanh output."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.mlp = MLP(input_size, [hidden_size, hidden_size], rng, output_activation="tanh")

    def __call__(self, seq: nm.Tensor) -> nm.Tensor:
        return self.mlp(nm.mean(seq, axis=1))


class OccasionEncoder(Module):
    """Maps (S, L, d) sequences to (S, d_h) occasion representations."""

    def __init__(self, input_size: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.input_size = input_size
        self.cfg = cfg
        if cfg.oel_kind == "lstm":
            self.body = LstmEncoder(input_size, cfg.hidden_size, rng)
        elif cfg.oel_kind == "transformer_encoder":
            self.body = TransformerEncoder(input_size, cfg, rng)
        else:
            self.body = MlpPoolEncoder(input_size, cfg.hidden_size, rng)

    @property
    def hidden_size(self) -> int:
        return self.cfg.hidden_size

    def __call__(self, seq) -> nm.Tensor:
        seq = nm.as_tensor(seq)
        if seq.ndim == 2:
            seq = nm.reshape(seq, (1,) + seq.shape)
        if seq.shape[-1] != self.input_size:
            raise DimensionError(f"sequence width {seq.shape[-1]} != configured width {self.input_size}")
        if seq.shape[1] == 0:
            raise InsufficientHistoryError("empty spectrum sequence")
        return self.body(seq)


def oel_forward(spectrum: SpectrumSequence, encoder: OccasionEncoder) -> nm.Tensor:
    """Occasion representation h_L (length d_h) for a single spectrum sequence."""
    h = encoder(spectrum.values)
    return nm.reshape(h, (encoder.hidden_size,))
