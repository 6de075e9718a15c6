"""Training loop, evaluation, inspection exports and the ablation sweep."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from moef import numerics as nm
from moef.config import TrainConfig
from moef.data import Dataset, read_dataset_file, snapshot_batches
from moef.errors import DataError, NumericError
from moef.experts import FeatureSchema
from moef.harness.checkpoint import Checkpoint
from moef.harness.metrics import auc_or_none
from moef.mixture import ModelConfig, MoefModel, OccasionFeaturizer, logloss, moef_forward
from moef.numerics import Adagrad
from moef.signals import OccasionSignalSeries, SignalStats, read_signals
from moef.synthgen import RegimeSchedule

logger = logging.getLogger(__name__)

EVAL_BATCH = 1024


@dataclass
class DataBundle:
    """A generated dataset directory: splits, signals and (when present) the manifest."""

    train: Dataset
    valid: Dataset
    signals: OccasionSignalSeries
    manifest: dict = field(default_factory=dict)

    @property
    def schedule(self) -> Optional[RegimeSchedule]:
        items = self.manifest.get("schedule")
        return RegimeSchedule.from_list(items) if items else None

    def regimes(self, dataset: Dataset) -> Optional[np.ndarray]:
        schedule = self.schedule
        return schedule.kinds_at(dataset.timestamp) if schedule is not None and len(dataset) else None


def load_bundle(data_dir, schema: FeatureSchema) -> DataBundle:
    if not os.path.isdir(data_dir):
        raise DataError(f"dataset directory {data_dir} does not exist")
    manifest = {}
    manifest_path = os.path.join(data_dir, "manifest.json")
    if os.path.exists(manifest_path):
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read {manifest_path}: {exc}") from exc
    return DataBundle(
        read_dataset_file(os.path.join(data_dir, "train.tsv"), schema),
        read_dataset_file(os.path.join(data_dir, "valid.tsv"), schema),
        read_signals(os.path.join(data_dir, "signals.csv")),
        manifest,
    )


def training_stats(series: OccasionSignalSeries, train: Dataset) -> SignalStats:
    """Signal mean/std over the columns observed up to the last training snapshot."""
    if len(train) == 0:
        return SignalStats.from_series(series)
    last = series.column_at(int(train.snapshot.max()))
    return SignalStats.from_series(series, end_column=last + 1)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_trace: list

    @property
    def model(self) -> MoefModel:
        return self.checkpoint.model


def _trace_sample(n: int, size: int) -> np.ndarray:
    if n <= size:
        return np.arange(n)
    return np.linspace(0, n - 1, size).round().astype(np.int64)


def dataset_loss(model: MoefModel, featurizer: OccasionFeaturizer, data: Dataset) -> float:
    preds = predict_dataset(model, featurizer, data)
    return logloss(data.label, preds["y_hat"]).item()


def train(
    data: Dataset,
    series: OccasionSignalSeries,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    stats: Optional[SignalStats] = None,
    on_batch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Mini-batch Adagrad on the logloss over snapshot-homogeneous batches.

    The loss trace has one row per epoch (epoch 0 is the initial model):
    the mean pre-update batch loss of that epoch and the loss on a fixed
    evenly spaced subsample of the training data after the epoch.
    """
    if len(data) == 0:
        raise DataError("the training set is empty")
    stats = stats or training_stats(series, data)
    model = MoefModel(model_cfg, seed=train_cfg.seed)
    featurizer = OccasionFeaturizer(series, model_cfg, stats)
    opt = Adagrad(model.named_parameters(), lr=train_cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
    probe = data.take(_trace_sample(len(data), train_cfg.trace_sample))
    initial = dataset_loss(model, featurizer, probe)
    trace = [{"epoch": 0, "batches": 0, "mean_batch_loss": initial, "probe_loss": initial}]
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        losses = []
        for idx in snapshot_batches(data, train_cfg.batch_size, rng):
            batch = data.take(idx)
            loss = logloss(batch.label, moef_forward(model, featurizer, batch).y_hat)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            losses.append(value)
            step += 1
            if on_batch is not None:
                on_batch(step, value)
        trace.append(
            {
                "epoch": epoch,
                "batches": len(losses),
                "mean_batch_loss": float(np.mean(losses)),
                "probe_loss": dataset_loss(model, featurizer, probe),
            }
        )
        logger.info("epoch %d: mean batch loss %.5f", epoch, trace[-1]["mean_batch_loss"])
    ckpt = Checkpoint(model, opt.state, train_cfg, stats, {"records": int(len(data))})
    return TrainResult(ckpt, trace)


def write_trace(trace: Sequence[dict], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "batches", "mean_batch_loss", "probe_loss"])
            writer.writeheader()
            for row in trace:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    except OSError as exc:
        raise DataError(f"cannot write loss trace {path}: {exc}") from exc


def predict_dataset(
    model: MoefModel, featurizer: OccasionFeaturizer, data: Dataset, keep_experts: bool = False
) -> dict:
    """Predictions and gate weights for every record, in dataset order."""
    y_hat, alpha, experts = [], [], []
    with nm.no_grad():
        for idx in snapshot_batches(data, EVAL_BATCH):
            out = moef_forward(model, featurizer, data.take(idx)).prediction(keep_experts)
            y_hat.append(out.y_hat)
            alpha.append(out.alpha)
            if keep_experts:
                experts.append(out.expert_outputs)
    k = model.cfg.num_experts
    result = {
        "y_hat": np.concatenate(y_hat) if y_hat else np.zeros(0),
        "alpha": np.concatenate(alpha) if alpha else np.zeros((0, k)),
    }
    if keep_experts:
        width = model.cfg.expert.output_width
        result["experts"] = np.concatenate(experts) if experts else np.zeros((0, k, width))
    return result


def _section(labels, scores) -> dict:
    section = {"count": int(len(labels)), "auc": auc_or_none(labels, scores), "logloss": None}
    if len(labels):
        section["logloss"] = logloss(labels, scores).item()
    return section


def evaluation_report(
    labels: np.ndarray,
    scores: np.ndarray,
    regimes: Optional[np.ndarray] = None,
    ceiling: Optional[dict] = None,
) -> dict:
    """Overall metrics plus promotion (any non-normal regime) and normal sections."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    report = {"overall": _section(labels, scores)}
    if regimes is not None:
        promo = regimes != "normal"
        for name, sel in (("promotion", promo), ("normal", ~promo)):
            if sel.any():
                report[name] = _section(labels[sel], scores[sel])
        report["per_regime"] = {
            kind: _section(labels[regimes == kind], scores[regimes == kind]) for kind in sorted(set(regimes.tolist()))
        }
    if ceiling:
        report["ceiling_auc"] = ceiling
    return report


def evaluate(ckpt: Checkpoint, bundle: DataBundle, split: str = "valid", scores: Optional[np.ndarray] = None) -> dict:
    """EvalReport for one split; ``scores`` replaces the model's predictions when given."""
    data = getattr(bundle, split)
    if scores is None:
        featurizer = OccasionFeaturizer(bundle.signals, ckpt.model_config, ckpt.stats)
        scores = predict_dataset(ckpt.model, featurizer, data)["y_hat"]
    elif len(scores) != len(data):
        raise DataError(f"{len(scores)} override scores for {len(data)} records")
    report = evaluation_report(
        data.label, scores, bundle.regimes(data), bundle.manifest.get("ceiling_auc", {}).get(split)
    )
    report["split"] = split
    report["variant"] = ckpt.model_config.variant
    report["num_experts"] = ckpt.model_config.num_experts
    return report


def export_inspection(ckpt: Checkpoint, bundle: DataBundle, out_dir, split: str = "valid") -> dict:
    """Write ``alpha.csv`` (per-record gate weights) and ``experts.csv`` (per-record, per-expert r)."""
    data = getattr(bundle, split)
    featurizer = OccasionFeaturizer(bundle.signals, ckpt.model_config, ckpt.stats)
    preds = predict_dataset(ckpt.model, featurizer, data, keep_experts=True)
    regimes = bundle.regimes(data)
    if regimes is None:
        regimes = np.full(len(data), "unknown")
    k = ckpt.model_config.num_experts
    paths = {"alpha": os.path.join(out_dir, "alpha.csv"), "experts": os.path.join(out_dir, "experts.csv")}
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(paths["alpha"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "timestamp", "snapshot_id", "regime"] + [f"alpha_{i + 1}" for i in range(k)])
            for r in range(len(data)):
                w.writerow(
                    [r, int(data.timestamp[r]), int(data.snapshot[r]), regimes[r]]
                    + [repr(float(a)) for a in preds["alpha"][r]]
                )
        with open(paths["experts"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            width = preds["experts"].shape[-1]
            w.writerow(["row", "expert", "regime"] + [f"r_{j}" for j in range(width)])
            for r in range(len(data)):
                for e in range(k):
                    w.writerow([r, e + 1, regimes[r]] + [repr(float(v)) for v in preds["experts"][r, e]])
    except OSError as exc:
        raise DataError(f"cannot write inspection files in {out_dir}: {exc}") from exc
    return paths


def ablate(
    bundle: DataBundle,
    base_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variants: Sequence[str],
    seeds: Sequence[int],
    on_result: Optional[Callable[[dict], None]] = None,
) -> list:
    """Train and evaluate every (variant, seed); returns one row per run."""
    rows = []
    stats = training_stats(bundle.signals, bundle.train)
    for variant in variants:
        cfg = replace(base_cfg, variant=variant, encoder=replace(base_cfg.encoder, oel_kind="lstm"))
        for seed in seeds:
            result = train(bundle.train, bundle.signals, cfg, replace(train_cfg, seed=seed), stats)
            report = evaluate(result.checkpoint, bundle)
            row = {
                "variant": variant,
                "seed": seed,
                "auc": report["overall"]["auc"],
                "promotion_auc": report.get("promotion", {}).get("auc"),
                "normal_auc": report.get("normal", {}).get("auc"),
                "logloss": report["overall"]["logloss"],
                "initial_loss": result.loss_trace[0]["probe_loss"],
                "final_loss": result.loss_trace[-1]["probe_loss"],
            }
            rows.append(row)
            if on_result is not None:
                on_result(row)
    return rows


def summarize(rows: Sequence[dict], key: str = "auc") -> list:
    """Mean and sample std of ``key`` per variant, in first-seen order."""
    order = list(dict.fromkeys(r["variant"] for r in rows))
    out = []
    for v in order:
        vals = np.array([r[key] for r in rows if r["variant"] == v and r[key] is not None], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append({"variant": v, "runs": int(len(vals)), "mean": float(vals.mean()), "std": std})
    return out
