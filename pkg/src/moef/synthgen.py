"""Synthetic promotion world: regime schedule, occasion signals and click logs.

Time is split into regime segments (normal, pre-promotion, promotion peak,
post-promotion). Each regime has an intensity that scales a fast periodic
burst in the occasion signals and a preference shift that rotates how users
value items:

    p(click) = sigmoid(intercept + scale * u' Phi v + position/hour bias)

with ``Phi = (1 - s) I + s * gain * R`` for a fixed random rotation ``R``.
The signal level and daily cycle do not depend on the regime, so the regime
is visible in the signals only through their frequency content.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import ortho_group

from moef.data import Dataset, concat_datasets, write_dataset_file
from moef.errors import ConfigError, DataError
from moef.experts import FeatureSchema
from moef.signals import OccasionSignalSeries, write_signals

logger = logging.getLogger(__name__)

REGIME_KINDS = ("normal", "pre_promo", "promo_peak", "post_promo")
DAY = 86_400
HOUR = 3_600
PROFILE_CARDINALITY = (2, 6, 4, 5, 4, 5, 3)  # gender, age, city tier, purchase power, activity, member, device
CONTEXT_NAMES = ("hour_of_day", "day_of_week", "position", "page", "platform", "network", "channel", "is_weekend")


@dataclass(frozen=True)
class RegimeParams:
    intensity: float
    shift: float
    gain: float = 1.0

    def __post_init__(self):
        if self.intensity < 0 or not 0 <= self.shift <= 1 or self.gain <= 0:
            raise ConfigError("regime intensity must be >= 0, shift in [0, 1], gain > 0")


def _default_regimes() -> dict:
    return {
        "normal": RegimeParams(0.0, 0.0),
        "pre_promo": RegimeParams(0.5, 0.5, 1.5),
        "promo_peak": RegimeParams(1.0, 1.0, 2.0),
        "post_promo": RegimeParams(0.5, 0.5, 1.5),
    }


@dataclass(frozen=True)
class SignalParams:
    name: str
    base: float
    daily_amplitude: float = 0.4
    burst_amplitude: float = 0.6
    noise: float = 0.03


def _default_signals() -> tuple:
    return (
        SignalParams("active_users", 5_000.0),
        SignalParams("gmv", 80_000.0, burst_amplitude=0.8),
        SignalParams("add_to_cart", 1_200.0, daily_amplitude=0.5),
    )


@dataclass(frozen=True)
class WorldConfig:
    """Everything the generator draws from; amplitudes and noise are relative to each signal's base."""

    seed: int = 7
    num_users: int = 10_000
    num_items: int = 2_000
    num_categories: int = 50
    num_brands: int = 200
    latent_dim: int = 8
    horizon_days: float = 14.0
    start_timestamp: int = 1_601_510_400
    sampling_interval_minutes: int = 5
    history_steps: int = 96
    snapshot_every: int = 6
    impressions_per_snapshot: int = 180
    promotions: tuple = ((3.5, 24.0), (11.5, 24.0))
    pre_promo_hours: float = 12.0
    post_promo_hours: float = 12.0
    split_day: float = 11.0
    burst_period_steps: int = 4
    day_drift: float = 0.05
    signals: tuple = field(default_factory=_default_signals)
    regimes: dict = field(default_factory=_default_regimes)
    click_intercept: float = -1.6
    click_scale: float = 1.2
    user_noise: float = 0.5
    user_bias: float = 1.5
    position_bias: float = 0.06
    hour_bias: float = 0.0
    initial_history: tuple = (5, 15)
    max_sequence_length: int = 20

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(s if isinstance(s, SignalParams) else SignalParams(**s) for s in self.signals))
        object.__setattr__(
            self,
            "regimes",
            {k: v if isinstance(v, RegimeParams) else RegimeParams(**v) for k, v in dict(self.regimes).items()},
        )
        object.__setattr__(self, "promotions", tuple(tuple(float(x) for x in p) for p in self.promotions))
        object.__setattr__(self, "initial_history", tuple(self.initial_history))
        counts = (self.num_users, self.num_items, self.num_categories, self.num_brands, self.latent_dim)
        if min(counts) < 1:
            raise ConfigError("user, item, category, brand counts and latent_dim must be positive")
        if self.num_brands < self.num_categories or self.num_items < self.num_brands:
            raise ConfigError("need num_items >= num_brands >= num_categories")
        if any(s.noise < 0 or s.base <= 0 for s in self.signals) or not self.signals:
            raise ConfigError("signals need a positive base and noise >= 0")
        if set(self.regimes) != set(REGIME_KINDS):
            raise ConfigError(f"regimes must define exactly {REGIME_KINDS}")
        if self.sampling_interval_minutes < 1 or self.snapshot_every < 1 or self.burst_period_steps < 2:
            raise ConfigError("sampling interval, snapshot cadence must be >= 1 and burst period >= 2")
        if self.impressions_per_snapshot < 0:
            raise ConfigError("impressions_per_snapshot must be >= 0")
        if self.horizon_seconds < self.history_steps * self.step_seconds:
            raise ConfigError(
                f"horizon of {self.horizon_days} days is shorter than the {self.history_steps}-step signal history"
            )

    @property
    def step_seconds(self) -> int:
        return self.sampling_interval_minutes * 60

    @property
    def horizon_seconds(self) -> int:
        return int(round(self.horizon_days * DAY))

    @property
    def split_timestamp(self) -> int:
        return self.start_timestamp + int(round(self.split_day * DAY))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["promotions"] = [list(p) for p in self.promotions]
        d["initial_history"] = list(self.initial_history)
        d["signals"] = [asdict(s) for s in self.signals]
        d["regimes"] = {k: asdict(v) for k, v in self.regimes.items()}
        return d


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    end: int
    intensity: float


@dataclass(frozen=True)
class RegimeSchedule:
    segments: tuple

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise ConfigError("empty regime schedule")
        for a, b in zip(segs, segs[1:]):
            if a.end != b.start:
                raise ConfigError(f"regime segments are not contiguous at {a.end} / {b.start}")
        for s in segs:
            if s.end <= s.start or s.kind not in REGIME_KINDS or s.intensity < 0:
                raise ConfigError(f"invalid regime segment {s}")

    @property
    def start(self) -> int:
        return self.segments[0].start

    @property
    def end(self) -> int:
        return self.segments[-1].end

    def segment_index(self, timestamps) -> np.ndarray:
        ts = np.asarray(timestamps, dtype=np.int64)
        starts = np.array([s.start for s in self.segments])
        idx = np.searchsorted(starts, ts, side="right") - 1
        if np.any(idx < 0) or np.any(ts >= self.end):
            raise DataError("timestamp outside the regime schedule")
        return idx

    def kinds_at(self, timestamps) -> np.ndarray:
        kinds = np.array([s.kind for s in self.segments])
        return kinds[self.segment_index(timestamps)]

    def to_list(self) -> list:
        return [asdict(s) for s in self.segments]

    @classmethod
    def from_list(cls, items) -> "RegimeSchedule":
        return cls(tuple(Segment(**s) for s in items))


def build_schedule(cfg: WorldConfig) -> RegimeSchedule:
    start, end = cfg.start_timestamp, cfg.start_timestamp + cfg.horizon_seconds
    marks = []
    for peak_day, peak_hours in sorted(cfg.promotions):
        peak = start + int(round(peak_day * DAY))
        peak_end = peak + int(round(peak_hours * HOUR))
        marks += [
            ("pre_promo", peak - int(round(cfg.pre_promo_hours * HOUR)), peak),
            ("promo_peak", peak, peak_end),
            ("post_promo", peak_end, peak_end + int(round(cfg.post_promo_hours * HOUR))),
        ]
    segments, cursor = [], start
    for kind, a, b in marks:
        a, b = max(a, start), min(b, end)
        if a < cursor:
            raise ConfigError("promotions overlap")
        if b <= a:
            continue
        if a > cursor:
            segments.append(Segment("normal", cursor, a, cfg.regimes["normal"].intensity))
        segments.append(Segment(kind, a, b, cfg.regimes[kind].intensity))
        cursor = b
    if cursor < end:
        segments.append(Segment("normal", cursor, end, cfg.regimes["normal"].intensity))
    return RegimeSchedule(tuple(segments))


def _streams(seed: int) -> dict:
    names = ("signals", "latent", "traffic", "history")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def generate_signals(schedule: RegimeSchedule, cfg: WorldConfig) -> OccasionSignalSeries:
    """One column per sampling step from the schedule start up to (not including) its end."""
    if schedule.end - schedule.start < cfg.history_steps * cfg.step_seconds:
        raise ConfigError("schedule horizon is shorter than the signal history N*T")
    rng = _streams(cfg.seed)["signals"]
    n = (schedule.end - schedule.start) // cfg.step_seconds
    ts = schedule.start + np.arange(n) * cfg.step_seconds
    seg = schedule.segment_index(ts)
    intensity = np.array([s.intensity for s in schedule.segments])[seg]
    seg_phase = rng.uniform(0, 2 * np.pi, len(schedule.segments))[seg]
    hours = (ts - schedule.start) / HOUR
    day = ((ts - schedule.start) // DAY).astype(int)
    steps = np.arange(n)
    rows = []
    for p in cfg.signals:
        daily_phase = rng.uniform(0, 2 * np.pi)
        drift = 1.0 + cfg.day_drift * rng.uniform(-1, 1, day.max() + 1)
        level = p.base * drift[day] * (1.0 + p.daily_amplitude * np.sin(2 * np.pi * hours / 24.0 + daily_phase))
        burst = intensity * p.burst_amplitude * p.base * np.sin(2 * np.pi * steps / cfg.burst_period_steps + seg_phase)
        noise = p.noise * p.base * rng.standard_normal(n)
        rows.append(np.maximum(level + burst + noise, 0.0))
    return OccasionSignalSeries(
        np.vstack(rows), tuple(p.name for p in cfg.signals), cfg.sampling_interval_minutes, int(ts[-1])
    )


@dataclass
class Latents:
    profile: list  # per profile feature: (cardinality, latent_dim)
    category: np.ndarray
    brand: np.ndarray
    item_category: np.ndarray
    item_brand: np.ndarray
    item_popularity: np.ndarray
    user_profile: np.ndarray
    user_offset: np.ndarray
    user_activity: np.ndarray
    rotation: np.ndarray

    def user_vectors(self, users: np.ndarray) -> np.ndarray:
        u = self.user_offset[users].copy()
        for j, table in enumerate(self.profile):
            u += table[self.user_profile[users, j]]
        return u

    def item_vectors(self, items: np.ndarray) -> np.ndarray:
        return self.category[self.item_category[items]] + 0.5 * self.brand[self.item_brand[items]]


def draw_latents(cfg: WorldConfig) -> Latents:
    rng = _streams(cfg.seed)["latent"]
    d = cfg.latent_dim
    profile = [rng.normal(scale=1.0 / np.sqrt(len(PROFILE_CARDINALITY)), size=(c, d)) for c in PROFILE_CARDINALITY]
    category = rng.normal(scale=0.4, size=(cfg.num_categories, d))
    brand_category = np.concatenate(
        [np.arange(cfg.num_categories), rng.integers(0, cfg.num_categories, cfg.num_brands - cfg.num_categories)]
    )
    brand = rng.normal(scale=0.3, size=(cfg.num_brands, d))
    item_brand = np.concatenate([np.arange(cfg.num_brands), rng.integers(0, cfg.num_brands, cfg.num_items - cfg.num_brands)])
    item_category = brand_category[item_brand]
    popularity = rng.pareto(1.5, cfg.num_items) + 1.0
    user_profile = np.column_stack([rng.integers(0, c, cfg.num_users) for c in PROFILE_CARDINALITY])
    offset = rng.normal(scale=cfg.user_noise / np.sqrt(d), size=(cfg.num_users, d))
    offset[:, 0] += cfg.user_bias  # shared component: the preference shift then moves item-level CTR
    activity = (1.0 + user_profile[:, 4]) * rng.uniform(0.5, 1.5, cfg.num_users)
    rotation = ortho_group.rvs(d, random_state=rng) if d > 1 else -np.ones((1, 1))
    return Latents(
        profile, category, brand, item_category, item_brand, popularity / popularity.sum(),
        user_profile, offset, activity / activity.sum(), rotation,
    )


def preference_matrix(cfg: WorldConfig, kind: str, rotation: np.ndarray) -> np.ndarray:
    r = cfg.regimes[kind]
    return (1.0 - r.shift) * np.eye(cfg.latent_dim) + r.shift * r.gain * rotation


@dataclass
class World:
    config: WorldConfig
    schedule: RegimeSchedule
    signals: OccasionSignalSeries
    dataset: Dataset
    click_probability: np.ndarray
    regime: np.ndarray


def generate_interactions(
    schedule: RegimeSchedule,
    cfg: WorldConfig,
    signals: OccasionSignalSeries,
    latents: Optional[Latents] = None,
    schema: Optional[FeatureSchema] = None,
) -> tuple:
    """(dataset sorted by timestamp, ground-truth click probabilities, regime kind per record).

    Impressions start once a full signal history is available; each snapshot
    (every ``snapshot_every`` signal columns) receives a batch of impressions
    whose timestamps fall before the next snapshot.
    """
    schema = schema or FeatureSchema(max_sequence_length=max(cfg.max_sequence_length, 1))
    latents = latents or draw_latents(cfg)
    streams = _streams(cfg.seed)
    rng, hist_rng = streams["traffic"], streams["history"]
    m = schema.max_sequence_length
    phis = {k: preference_matrix(cfg, k, latents.rotation) for k in REGIME_KINDS}

    histories = _initial_histories(cfg, latents, phis["normal"], hist_rng, m)
    timestamps = signals.timestamps()
    first = cfg.history_steps - 1
    snap_cols = np.arange(first, signals.length, cfg.snapshot_every)
    snap_seconds = cfg.snapshot_every * cfg.step_seconds
    parts, probs, kinds = [], [], []
    for col in snap_cols:
        snap = int(timestamps[col])
        horizon_end = min(snap + snap_seconds, schedule.end)
        if horizon_end <= snap:
            break
        hour = ((snap - cfg.start_timestamp) % DAY) / HOUR
        traffic = 1.0 + 0.4 * np.sin(2 * np.pi * (hour - 8.0) / 24.0)
        n = int(round(cfg.impressions_per_snapshot * traffic))
        if n == 0:
            continue
        ts = np.sort(rng.integers(snap, horizon_end, n))
        users = rng.choice(cfg.num_users, n, p=latents.user_activity)
        items = rng.choice(cfg.num_items, n, p=latents.item_popularity)
        position = rng.integers(1, 21, n)
        local = ts - cfg.start_timestamp
        hours = (local % DAY) // HOUR
        weekday = ((ts // DAY) + 3) % 7
        context = np.column_stack(
            [
                hours,
                weekday,
                position,
                (position - 1) // 5,
                latents.user_profile[users, 6],
                rng.integers(0, 3, n),
                rng.integers(0, 4, n),
                (weekday >= 5).astype(np.int64),
            ]
        )
        kind = schedule.kinds_at(ts)
        u, v = latents.user_vectors(users), latents.item_vectors(items)
        affinity = np.empty(n)
        for k in np.unique(kind):
            sel = kind == k
            affinity[sel] = np.einsum("ij,jk,ik->i", u[sel], phis[k], v[sel])
        logit = (
            cfg.click_intercept
            + cfg.click_scale * affinity
            - cfg.position_bias * (position - 1)
            + cfg.hour_bias * np.sin(2 * np.pi * hours / 24.0)
        )
        p = 1.0 / (1.0 + np.exp(-logit))
        labels = (rng.random(n) < p).astype(np.int64)

        seq = np.full((n, m, 3), -1, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        for r, user in enumerate(users):
            h = histories[user]
            if h:
                take = h[-m:]
                seq[r, : len(take)] = take
                lengths[r] = len(take)
        for r in np.flatnonzero(labels):
            it = int(items[r])
            histories[users[r]].append((it, int(latents.item_category[it]), int(latents.item_brand[it])))
        user_cols = np.column_stack([users, latents.user_profile[users]])
        item_cols = np.column_stack([items, latents.item_category[items], latents.item_brand[items]])
        parts.append(
            Dataset(user_cols, item_cols, context, seq, lengths, labels, ts, np.full(n, snap, dtype=np.int64))
        )
        probs.append(p)
        kinds.append(kind)
    if not parts:
        return Dataset.empty(schema), np.zeros(0), np.zeros(0, dtype="<U10")
    return concat_datasets(parts), np.concatenate(probs), np.concatenate(kinds)


def _initial_histories(cfg, latents: Latents, phi: np.ndarray, rng, m: int) -> list:
    """Clicks before the horizon: items drawn by popularity, kept with their normal-regime probability."""
    lo, hi = cfg.initial_history
    histories = []
    for user in range(cfg.num_users):
        want = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        if want == 0:
            histories.append([])
            continue
        cand = rng.choice(cfg.num_items, 4 * want + 4, p=latents.item_popularity)
        u = latents.user_vectors(np.array([user]))[0]
        logit = cfg.click_intercept + cfg.click_scale * (latents.item_vectors(cand) @ (phi.T @ u))
        keep = cand[rng.random(len(cand)) < 1.0 / (1.0 + np.exp(-logit))][:want]
        histories.append([(int(i), int(latents.item_category[i]), int(latents.item_brand[i])) for i in keep][-m:])
    return histories


def generate_world(cfg: WorldConfig, schema: Optional[FeatureSchema] = None) -> World:
    schedule = build_schedule(cfg)
    signals = generate_signals(schedule, cfg)
    dataset, p, kinds = generate_interactions(schedule, cfg, signals, schema=schema)
    return World(cfg, schedule, signals, dataset, p, kinds)


def write_dataset(world: World, split_timestamp: int, out_dir, schema: Optional[FeatureSchema] = None) -> dict:
    """Write train/valid TSVs, the signal file and a manifest; returns the manifest."""
    from moef.harness.metrics import auc_or_none

    schema = schema or FeatureSchema(max_sequence_length=max(world.config.max_sequence_length, 1))
    if not world.schedule.start <= split_timestamp <= world.schedule.end:
        raise ConfigError(f"split timestamp {split_timestamp} outside the horizon")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    ds = world.dataset
    is_train = ds.timestamp < split_timestamp
    splits = {"train": np.flatnonzero(is_train), "valid": np.flatnonzero(~is_train)}
    if len(splits["valid"]) == 0:
        logger.warning("all records fall before the split; the validation file is empty")
    manifest = {
        "format_version": 1,
        "world": world.config.to_dict(),
        "schema": schema.to_dict(),
        "schedule": world.schedule.to_list(),
        "split_timestamp": int(split_timestamp),
        "files": {"train": "train.tsv", "valid": "valid.tsv", "signals": "signals.csv"},
        "counts": {},
        "ceiling_auc": {},
    }
    for name, idx in splits.items():
        write_dataset_file(ds.take(idx), schema, os.path.join(out_dir, f"{name}.tsv"))
        labels, p, kinds = ds.label[idx], world.click_probability[idx], world.regime[idx]
        promo = kinds != "normal"
        manifest["counts"][name] = {
            "records": int(len(idx)),
            "clicks": int(labels.sum()),
            "promotion": int(promo.sum()),
            "normal": int((~promo).sum()),
        }
        manifest["ceiling_auc"][name] = {
            "overall": auc_or_none(labels, p),
            "promotion": auc_or_none(labels[promo], p[promo]),
            "normal": auc_or_none(labels[~promo], p[~promo]),
        }
    write_signals(world.signals, os.path.join(out_dir, "signals.csv"))
    try:
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write manifest in {out_dir}: {exc}") from exc
    return manifest
