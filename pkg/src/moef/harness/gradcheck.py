"""Finite-difference verification of the full model's reverse-mode gradients.

Each parameter tensor is one group. Checking every coordinate of every group
would need thousands of forward passes per restart, so each group is probed
at its largest-gradient coordinates plus a few random ones (for embedding
tables, random rows among those the batch touched), and the whole parameter
vector is additionally checked along one random direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from moef import numerics as nm
from moef.data import Dataset, SampleRecord
from moef.experts import ExpertConfig, FeatureSchema, FeatureSpec
from moef.mixture import ModelConfig, MoefModel, OccasionFeaturizer, logloss, moef_forward
from moef.numerics.gradcheck import numerical_gradient, relative_error
from moef.orn import EncoderConfig
from moef.signals import OccasionSignalSeries, SignalStats, WindowingConfig

STEP = 1e-5
TOLERANCE = 1e-3
# Central differences of an O(1) loss carry round-off near 1e-11; a group whose
# gradients are all below this floor (e.g. attention key biases, which softmax
# cancels exactly) is compared in absolute rather than relative terms.
NOISE_FLOOR = 1e-7


def tiny_config(variant: str = "full", num_experts: int = 2) -> ModelConfig:
    """M=2 signals, 32-step history, 8/4/8 windows, d_h=8, every width <= 16."""
    schema = FeatureSchema(
        user=(FeatureSpec("user_id", 16, 4), FeatureSpec("gender", 4, 2), FeatureSpec("age_bucket", 6, 2)),
        item=(FeatureSpec("item_id", 16, 4), FeatureSpec("category_id", 8, 4), FeatureSpec("brand_id", 8, 4)),
        context=(FeatureSpec("hour_of_day", 8, 2), FeatureSpec("position", 8, 2)),
        max_sequence_length=4,
    )
    return ModelConfig(
        variant=variant,
        num_experts=num_experts,
        gate_hidden=6,
        head_sizes=(12, 6, 1),
        encoder=EncoderConfig(hidden_size=8, transformer_heads=2),
        expert=ExpertConfig(attention_heads=2, attention_hidden=8, pooled_hidden=8, main_sizes=(16, 8), bias_sizes=(6, 4)),
        windowing=WindowingConfig(window_size=8, stride=4, fft_points=8, history_steps=32),
        schema=schema,
        num_signals=2,
    )


def random_batch(cfg: ModelConfig, rng: np.random.Generator, size: int = 4, snapshots=(0,)) -> Dataset:
    schema = cfg.schema

    def value():
        return int(rng.integers(0, 40))

    records = []
    for b in range(size):
        length = int(rng.integers(0, schema.max_sequence_length + 1))
        records.append(
            SampleRecord(
                value(), value(), value(), value(),
                tuple(value() for _ in schema.user[1:]),
                tuple(value() for _ in schema.context),
                tuple((value(), value(), value()) for _ in range(length)),
                int(rng.integers(0, 2)),
                int(snapshots[b % len(snapshots)]),
                int(snapshots[b % len(snapshots)]),
            )
        )
    return Dataset.from_records(records, schema)


def random_series(cfg: ModelConfig, rng: np.random.Generator, extra: int = 8) -> OccasionSignalSeries:
    n = cfg.windowing.history_steps + extra
    values = rng.uniform(0.0, 5.0, (cfg.num_signals, n))
    return OccasionSignalSeries(values, tuple(f"s{i}" for i in range(cfg.num_signals)), 5, 300 * (n - 1))


@dataclass
class GradCheckReport:
    seed: int
    errors: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    directional_error: float = 0.0

    @property
    def max_error(self) -> float:
        return max([self.directional_error, *self.errors.values()])

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.max_error < tolerance


def _probe_positions(grad: np.ndarray, rows: Optional[np.ndarray], rng, top: int, extra: int) -> np.ndarray:
    flat = np.abs(grad.reshape(-1))
    if rows is not None:
        width = grad.shape[1]
        candidates = (rows[:, None] * width + np.arange(width)[None, :]).reshape(-1)
    else:
        candidates = np.arange(flat.size)
    order = candidates[np.argsort(-flat[candidates], kind="stable")]
    chosen = list(order[:top])
    rest = order[top:]
    if len(rest):
        chosen.extend(rng.choice(rest, size=min(extra, len(rest)), replace=False))
    return np.array(chosen, dtype=np.int64)


def grad_check(
    cfg: Optional[ModelConfig] = None,
    seed: int = 0,
    frozen: Iterable[str] = (),
    top: int = 2,
    extra: int = 2,
) -> GradCheckReport:
    """Compare reverse-mode and central-difference gradients of the logloss.

    Parameter groups whose name starts with an entry of ``frozen`` get
    ``requires_grad=False`` and are reported as skipped.
    """
    cfg = cfg or tiny_config()
    rng = np.random.default_rng(seed)
    model = MoefModel(cfg, seed=seed)
    frozen = tuple(frozen)
    for name, p in model.named_parameters():
        if name.startswith(frozen) and frozen:
            p.requires_grad = False
    series = random_series(cfg, rng)
    step = series.step_seconds
    snaps = (int(series.end_timestamp - 4 * step), int(series.end_timestamp))
    batch = random_batch(cfg, rng, size=4, snapshots=snaps)
    featurizer = OccasionFeaturizer(series, cfg, SignalStats.from_series(series))

    def loss_value() -> float:
        with nm.no_grad():
            return logloss(batch.label, moef_forward(model, featurizer, batch).y_hat).item()

    params = list(model.named_parameters(include_frozen=True))
    loss = logloss(batch.label, moef_forward(model, featurizer, batch).y_hat)
    loss.backward()

    report = GradCheckReport(seed=seed)
    for name, p in params:
        if not p.requires_grad:
            report.skipped.append(name)
            continue
        grad = p.grad if p.grad is not None else np.zeros(p.shape)
        positions = _probe_positions(grad, p.grad_rows, rng, top, extra)
        numeric = numerical_gradient(loss_value, p.data, STEP, positions)
        report.errors[name] = relative_error(grad.reshape(-1)[positions], numeric, NOISE_FLOOR)

    live = [(p, p.grad if p.grad is not None else np.zeros(p.shape)) for _, p in params if p.requires_grad]
    directions = [rng.normal(size=p.shape) for p, _ in live]
    analytic = sum(float(np.sum(g * d)) for (_, g), d in zip(live, directions))
    numeric = _joint_directional(loss_value, [p.data for p, _ in live], directions)
    report.directional_error = relative_error([analytic], [numeric], NOISE_FLOOR)
    model.zero_grad()
    return report


def _joint_directional(f, arrays, directions) -> float:
    originals = [a.copy() for a in arrays]
    for a, d in zip(arrays, directions):
        a += STEP * d
    up = f()
    for a, o, d in zip(arrays, originals, directions):
        a[...] = o - STEP * d
    down = f()
    for a, o in zip(arrays, originals):
        a[...] = o
    return (up - down) / (2.0 * STEP)
