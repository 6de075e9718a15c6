import csv
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_run_config
from moef.config import to_dict
from moef.errors import DataError, IncompatibleCheckpointError
from moef.harness.checkpoint import load_checkpoint, save_checkpoint
from moef.harness.train import (
    DataBundle,
    ablate,
    evaluate,
    evaluation_report,
    export_inspection,
    predict_dataset,
    summarize,
    train,
    training_stats,
)
from moef.mixture import OccasionFeaturizer
from moef.synthgen import generate_world


@pytest.fixture(scope="module")
def setup():
    cfg = small_run_config(epochs=2)
    world = generate_world(cfg.world, cfg.schema)
    tr = world.dataset.timestamp < cfg.world.split_timestamp
    bundle = DataBundle(
        world.dataset.take(np.flatnonzero(tr)),
        world.dataset.take(np.flatnonzero(~tr)),
        world.signals,
        {"schedule": world.schedule.to_list()},
    )
    result = train(bundle.train, bundle.signals, cfg.model_config(), cfg.train)
    return cfg, bundle, result


def params(model):
    return {n: p.data.copy() for n, p in model.named_parameters(include_frozen=True)}


class TestTrain:
    def test_loss_decreases(self, setup):
        _, _, result = setup
        trace = result.loss_trace
        assert [row["epoch"] for row in trace] == [0, 1, 2]
        assert trace[-1]["probe_loss"] < trace[0]["probe_loss"]

    def test_deterministic(self, setup):
        cfg, bundle, result = setup
        again = train(bundle.train, bundle.signals, cfg.model_config(), cfg.train)
        a, b = params(result.model), params(again.model)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert again.loss_trace == result.loss_trace

    def test_zero_learning_rate_leaves_parameters(self, setup):
        cfg, bundle, _ = setup
        fresh = train(bundle.train, bundle.signals, cfg.model_config(), replace(cfg.train, epochs=0))
        still = train(bundle.train, bundle.signals, cfg.model_config(), replace(cfg.train, learning_rate=0.0))
        a, b = params(fresh.model), params(still.model)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_empty_training_set(self, setup):
        cfg, bundle, _ = setup
        with pytest.raises(DataError):
            train(bundle.train.take([]), bundle.signals, cfg.model_config(), cfg.train)

    def test_stats_use_training_window_only(self, setup):
        _, bundle, _ = setup
        stats = training_stats(bundle.signals, bundle.train)
        last = bundle.signals.column_at(int(bundle.train.snapshot.max()))
        np.testing.assert_allclose(stats.mean, bundle.signals.values[:, : last + 1].mean(axis=1))


class TestCheckpoint:
    def test_round_trip_predictions_bitwise(self, setup, tmp_path):
        cfg, bundle, result = setup
        save_checkpoint(result.checkpoint, tmp_path / "a.moef")
        loaded = load_checkpoint(tmp_path / "a.moef")
        batch = bundle.valid.take(np.arange(50))
        outs = [
            predict_dataset(c.model, OccasionFeaturizer(bundle.signals, c.model_config, c.stats), batch)
            for c in (result.checkpoint, loaded)
        ]
        assert outs[0]["y_hat"].tobytes() == outs[1]["y_hat"].tobytes()
        assert outs[0]["alpha"].tobytes() == outs[1]["alpha"].tobytes()
        assert to_dict(loaded.model_config) == to_dict(cfg.model_config())
        save_checkpoint(loaded, tmp_path / "b.moef")
        assert (tmp_path / "a.moef").read_bytes() == (tmp_path / "b.moef").read_bytes()

    def test_optimizer_state_survives(self, setup, tmp_path):
        _, _, result = setup
        save_checkpoint(result.checkpoint, tmp_path / "a.moef")
        loaded = load_checkpoint(tmp_path / "a.moef").optimizer
        original = result.checkpoint.optimizer
        assert loaded.learning_rate == original.learning_rate
        assert all(np.array_equal(loaded.accumulators[k], v) for k, v in original.accumulators.items())

    @pytest.mark.parametrize(
        "corrupt, message",
        [
            (lambda raw: b"NOTACKPT" + raw[8:], "magic"),
            (lambda raw: raw[:4], "too short"),
            (lambda raw: raw + b"\0" * 8, "trailing"),
        ],
    )
    def test_incompatible(self, setup, tmp_path, corrupt, message):
        _, _, result = setup
        save_checkpoint(result.checkpoint, tmp_path / "a.moef")
        (tmp_path / "b.moef").write_bytes(corrupt((tmp_path / "a.moef").read_bytes()))
        with pytest.raises(IncompatibleCheckpointError, match=message):
            load_checkpoint(tmp_path / "b.moef")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "none.moef")


class TestEvaluate:
    def test_report_sections(self, setup):
        _, bundle, result = setup
        report = evaluate(result.checkpoint, bundle)
        assert {"overall", "promotion", "normal", "per_regime"} <= set(report)
        counts = report["promotion"]["count"] + report["normal"]["count"]
        assert counts == report["overall"]["count"] == len(bundle.valid)

    def test_oracle_and_constant_scores(self, setup):
        _, bundle, result = setup
        labels = bundle.valid.label.astype(float)
        assert evaluate(result.checkpoint, bundle, scores=labels)["overall"]["auc"] == 1.0
        assert evaluate(result.checkpoint, bundle, scores=np.full(len(labels), 0.2))["overall"]["auc"] == 0.5

    def test_single_class_section_has_no_auc(self):
        report = evaluation_report(np.array([0, 0, 1]), np.array([0.1, 0.2, 0.9]), np.array(["normal", "normal", "promo_peak"]))
        assert report["normal"]["auc"] is None and report["promotion"]["auc"] is None
        assert report["overall"]["auc"] == 1.0

    def test_only_present_regimes(self):
        report = evaluation_report(np.array([0, 1]), np.array([0.1, 0.9]), np.array(["normal", "normal"]))
        assert "normal" in report and "promotion" not in report


class TestInspection:
    def test_alpha_and_expert_files(self, setup, tmp_path):
        cfg, bundle, result = setup
        paths = export_inspection(result.checkpoint, bundle, tmp_path)
        with open(paths["alpha"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(bundle.valid)
        sums = [float(r["alpha_1"]) + float(r["alpha_2"]) for r in rows]
        assert np.allclose(sums, 1.0, atol=1e-12)
        assert {r["regime"] for r in rows} <= {"normal", "pre_promo", "promo_peak", "post_promo"}
        with open(paths["experts"]) as fh:
            header = next(csv.reader(fh))
        assert len(header) == 3 + cfg.expert.output_width


class TestAblate:
    def test_rows_and_summary(self, setup):
        cfg, bundle, _ = setup
        rows = ablate(bundle, cfg.model_config(), replace(cfg.train, epochs=0), ["full", "one_expert"], [0, 1])
        assert [(r["variant"], r["seed"]) for r in rows] == [("full", 0), ("full", 1), ("one_expert", 0), ("one_expert", 1)]
        summary = summarize(rows)
        assert [s["variant"] for s in summary] == ["full", "one_expert"]
        full = [r["auc"] for r in rows[:2]]
        assert summary[0]["mean"] == pytest.approx(np.mean(full))
        assert summary[0]["std"] == pytest.approx(np.std(full, ddof=1))
