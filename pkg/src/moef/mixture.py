"""Occasion-gated mixture of experts, the prediction head, the loss and model assembly.

For every record the gate scores each expert output ``r_k`` together with the
occasion representation ``h`` of the record's signal snapshot,
``f(h, r) = w . tanh(h W_h + r W_r + b)``, and mixes the expert outputs with
the softmax of those scores. The head maps the mixture to a click
probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from moef import numerics as nm
from moef.errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from moef.experts import EmbeddingTables, Expert, ExpertConfig, FeatureSchema, embed
from moef.numerics import MLP, Module, glorot_uniform, parameter
from moef.orn import EncoderConfig, OccasionEncoder
from moef.signals import (
    OccasionSignalSeries,
    SignalStats,
    WindowingConfig,
    build_spectrum_sequence,
    time_domain_sequence,
)

VARIANTS = ("full", "one_expert", "no_fft", "no_lstm", "transformer_encoder")
_VARIANT_OEL = {
    "full": "lstm",
    "one_expert": "lstm",
    "no_fft": "mlp_pool",
    "no_lstm": "mlp_pool",
    "transformer_encoder": "transformer_encoder",
}
CLIP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    num_experts: int = 2
    gate_hidden: int = 64
    head_sizes: tuple = (144, 64, 1)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    num_signals: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_experts < 1:
            raise ConfigError("num_experts must be >= 1")
        if self.variant == "one_expert":
            object.__setattr__(self, "num_experts", 1)
        object.__setattr__(self, "head_sizes", tuple(self.head_sizes))
        if not self.head_sizes or self.head_sizes[-1] != 1:
            raise ConfigError("the prediction head must end in a single unit")
        wanted = _VARIANT_OEL[self.variant]
        if self.encoder.oel_kind != wanted:
            if self.encoder.oel_kind != "lstm":
                raise ConfigError(
                    f"oel_kind {self.encoder.oel_kind!r} conflicts with variant {self.variant!r} (needs {wanted!r})"
                )
            object.__setattr__(self, "encoder", replace(self.encoder, oel_kind=wanted))
        if self.gate_hidden < 1 or self.num_signals < 1:
            raise ConfigError("gate_hidden and num_signals must be positive")

    @property
    def time_domain(self) -> bool:
        return self.variant == "no_fft"

    @property
    def occasion_width(self) -> int:
        w = self.windowing
        return self.num_signals * (w.window_size if self.time_domain else w.bins)


class OccasionFeaturizer:
    """Per-snapshot encoder inputs, cached by snapshot timestamp.

    The input for a snapshot is built from the ``history_steps`` columns of the
    series ending at the latest column observed at the snapshot time.
    """

    def __init__(self, series: OccasionSignalSeries, cfg: ModelConfig, stats: Optional[SignalStats] = None):
        if series.num_signals != cfg.num_signals:
            raise DimensionError(f"series has {series.num_signals} signals, model expects {cfg.num_signals}")
        self.series = series
        self.cfg = cfg
        self.stats = stats if stats is not None else SignalStats.identity(series.num_signals)
        self._cache: dict = {}

    def sequence(self, snapshot: int) -> np.ndarray:
        snapshot = int(snapshot)
        seq = self._cache.get(snapshot)
        if seq is None:
            try:
                column = self.series.column_at(snapshot)
            except DataError:
                raise DataError(f"no signal snapshot covers timestamp {snapshot}") from None
            history = self.series.history(column, self.cfg.windowing.history_steps)
            if self.cfg.time_domain:
                seq = time_domain_sequence(history, self.cfg.windowing).values
            else:
                seq = build_spectrum_sequence(history, self.cfg.windowing, self.stats).values
            self._cache[snapshot] = seq
        return seq

    def batch(self, snapshots: np.ndarray) -> tuple:
        """(distinct snapshot inputs stacked as (S, L, d), per-record index into S)."""
        unique, inverse = np.unique(np.asarray(snapshots, dtype=np.int64), return_inverse=True)
        return np.stack([self.sequence(s) for s in unique]), inverse


class GateParams(Module):
    def __init__(self, occasion_width: int, expert_width: int, hidden: int, rng: np.random.Generator):
        self.w_occasion = parameter(glorot_uniform(rng, occasion_width, hidden))
        self.w_expert = parameter(glorot_uniform(rng, expert_width, hidden))
        self.bias = parameter(np.zeros(hidden))
        self.readout = parameter(glorot_uniform(rng, hidden, 1, shape=(hidden,)))

    def score(self, h, r) -> nm.Tensor:
        """f_g for (B, d_h) occasions and (B, K, width) expert outputs -> (B, K)."""
        b, k, width = r.shape
        occ = nm.reshape(nm.matmul(h, self.w_occasion), (b, 1, -1))
        hidden = nm.tanh(occ + nm.matmul(r, self.w_expert) + self.bias)
        return nm.reshape(nm.matmul(hidden, nm.reshape(self.readout, (-1, 1))), (b, k))


def mixture_weights(h, expert_outputs, gate: GateParams) -> nm.Tensor:
    """alpha (B, K): softmax over experts of the shared gate score."""
    if len(expert_outputs) == 0:
        raise ConfigError("the mixture needs at least one expert")
    r = nm.stack(list(expert_outputs), axis=1)
    return nm.softmax(gate.score(h, r), axis=-1)


@dataclass
class Prediction:
    y_hat: np.ndarray
    alpha: np.ndarray
    expert_outputs: Optional[np.ndarray] = None
    occasion: Optional[np.ndarray] = None


@dataclass
class ForwardResult:
    y_hat: nm.Tensor
    alpha: nm.Tensor
    expert_outputs: list
    occasion: nm.Tensor

    def prediction(self, keep_experts: bool = False) -> Prediction:
        experts = np.stack([r.data for r in self.expert_outputs], axis=1) if keep_experts else None
        return Prediction(self.y_hat.data.copy(), self.alpha.data.copy(), experts, self.occasion.data.copy())


def predict(h, expert_outputs, gate: GateParams, head: MLP) -> ForwardResult:
    """mix = sum_k alpha_k r_k, y_hat = head(mix)."""
    width = head.layers[0].in_features
    for r in expert_outputs:
        if r.shape[-1] != width:
            raise DimensionError(f"expert output width {r.shape[-1]} != head input width {width}")
    alpha = mixture_weights(h, expert_outputs, gate)
    r = nm.stack(list(expert_outputs), axis=1)
    b, k = alpha.shape
    mix = nm.reshape(nm.matmul(nm.reshape(alpha, (b, 1, k)), r), (b, width))
    y_hat = nm.reshape(head(mix), (b,))
    return ForwardResult(y_hat, alpha, list(expert_outputs), nm.as_tensor(h))


def logloss(labels, y_hat) -> nm.Tensor:
    """Mean binary cross-entropy with predictions clipped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    y_hat = nm.as_tensor(y_hat)
    if y.size == 0:
        raise ContractError("logloss of an empty batch")
    if y_hat.data.size != y.size:
        raise DimensionError(f"{y.size} labels for {y_hat.data.size} predictions")
    p = nm.clip(nm.reshape(y_hat, (y.size,)), CLIP, 1.0 - CLIP)
    ll = y * nm.log(p) + (1.0 - y) * nm.log(1.0 - p)
    return -nm.mean(ll)


class MoefModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.embeddings = EmbeddingTables(cfg.schema, rng)
        self.encoder = OccasionEncoder(cfg.occasion_width, cfg.encoder, rng)
        self.experts = [Expert(cfg.schema, cfg.expert, rng) for _ in range(cfg.num_experts)]
        width = cfg.expert.output_width
        self.gate = GateParams(cfg.encoder.hidden_size, width, cfg.gate_hidden, rng)
        self.head = MLP(width, cfg.head_sizes, rng, output_activation="sigmoid")

    def expert_outputs(self, batch) -> list:
        embedded = embed(batch, self.cfg.schema, self.embeddings)
        return [expert(embedded) for expert in self.experts]

    def forward(self, batch, occasion_inputs: np.ndarray, snapshot_index: np.ndarray) -> ForwardResult:
        """``occasion_inputs`` is (S, L, d); record b uses snapshot ``snapshot_index[b]``."""
        h_all = self.encoder(occasion_inputs)
        h = nm.getitem(h_all, np.asarray(snapshot_index, dtype=np.int64))
        result = predict(h, self.expert_outputs(batch), self.gate, self.head)
        checks = [("occasion representation", h), ("prediction", result.y_hat)]
        checks += [(f"expert {i + 1} output", r) for i, r in enumerate(result.expert_outputs)]
        for what, t in checks:
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"non-finite {what} in the forward pass")
        return result


def moef_forward(model: MoefModel, featurizer: OccasionFeaturizer, batch) -> ForwardResult:
    """Full forward pass: one occasion representation per distinct snapshot in the batch."""
    inputs, index = featurizer.batch(batch.snapshot)
    return model.forward(batch, inputs, index)
