import hashlib
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chi2, chi2_contingency

from moef.data import read_dataset_file
from moef.errors import ConfigError
from moef.experts import FeatureSchema
from moef.harness.metrics import category_entropy
from moef.signals import fft_modulus
from moef.synthgen import (
    REGIME_KINDS,
    RegimeParams,
    RegimeSchedule,
    Segment,
    SignalParams,
    WorldConfig,
    build_schedule,
    generate_signals,
    generate_world,
    write_dataset,
)

SMALL = WorldConfig(num_users=800, num_items=300, num_categories=10, num_brands=30, impressions_per_snapshot=40)
SCHEMA = FeatureSchema(max_sequence_length=20)


def quiet_signals(interval=45, history=32, intensity=0.0):
    regimes = {k: RegimeParams(intensity if k != "normal" else 0.0, 0.0) for k in REGIME_KINDS}
    signals = (SignalParams("a", 1.0, 0.4, 0.6, 0.0), SignalParams("b", 3.0, 0.2, 0.5, 0.0))
    return WorldConfig(
        sampling_interval_minutes=interval, history_steps=history, signals=signals, regimes=regimes, day_drift=0.0
    )


class TestSchedule:
    def test_contiguous_cover(self):
        cfg = WorldConfig()
        s = build_schedule(cfg)
        assert s.start == cfg.start_timestamp and s.end == cfg.start_timestamp + 14 * 86400
        kinds = [seg.kind for seg in s.segments]
        assert kinds.count("promo_peak") == 2
        assert kinds[:4] == ["normal", "pre_promo", "promo_peak", "post_promo"]
        assert all(a.end == b.start for a, b in zip(s.segments, s.segments[1:]))

    def test_validation(self):
        with pytest.raises(ConfigError):
            RegimeSchedule((Segment("normal", 0, 10, 0.0), Segment("normal", 11, 20, 0.0)))
        with pytest.raises(ConfigError):
            RegimeSchedule((Segment("sale", 0, 10, 0.0),))
        with pytest.raises(ConfigError):
            build_schedule(WorldConfig(promotions=((3.0, 24.0), (3.5, 24.0))))

    def test_horizon_too_short(self):
        with pytest.raises(ConfigError):
            WorldConfig(horizon_days=0.25)

    def test_round_trip(self):
        s = build_schedule(WorldConfig())
        assert RegimeSchedule.from_list(s.to_list()) == s


class TestSignals:
    def test_deterministic(self):
        cfg = WorldConfig()
        a = generate_signals(build_schedule(cfg), cfg)
        b = generate_signals(build_schedule(cfg), cfg)
        assert a.values.tobytes() == b.values.tobytes()
        c = generate_signals(build_schedule(replace(cfg, seed=8)), replace(cfg, seed=8))
        assert a.values.tobytes() != c.values.tobytes()

    def test_shape_and_nonnegative(self):
        cfg = WorldConfig()
        s = generate_signals(build_schedule(cfg), cfg)
        assert s.values.shape == (3, 14 * 288)
        assert s.signal_names == ("active_users", "gmv", "add_to_cart")
        assert np.all(s.values >= 0)

    def test_quiet_world_has_only_dc_and_daily_bins(self):
        cfg = quiet_signals()
        s = generate_signals(build_schedule(cfg), cfg)
        for start in (0, 7, 100, 300):
            mags = fft_modulus(s.values[:, start : start + 32], 32)
            others = np.delete(mags, [0, 1, 31], axis=1)
            assert np.max(others) < 1e-9
            assert np.min(mags[:, 1]) > 1.0

    def test_burst_bin_larger_under_promo(self):
        cfg = quiet_signals(interval=5, history=96, intensity=1.0)
        schedule = build_schedule(cfg)
        s = generate_signals(schedule, cfg)
        ts = s.timestamps()
        kinds = schedule.kinds_at(ts)
        peak = np.flatnonzero(kinds == "promo_peak")[0] + 40
        normal = np.flatnonzero(kinds == "normal")[0] + 40
        assert np.all(kinds[peak : peak + 24] == "promo_peak") and np.all(kinds[normal : normal + 24] == "normal")
        burst_bin = 32 // cfg.burst_period_steps
        promo_mag = fft_modulus(s.values[:, peak : peak + 24], 32)[:, burst_bin]
        normal_mag = fft_modulus(s.values[:, normal : normal + 24], 32)[:, burst_bin]
        assert np.all(promo_mag > normal_mag)


class TestInteractions:
    def test_fixed_seed_same_stream(self):
        a, b = generate_world(SMALL, SCHEMA), generate_world(SMALL, SCHEMA)
        for name in ("user", "item", "context", "sequence", "label", "timestamp", "snapshot"):
            assert getattr(a.dataset, name).tobytes() == getattr(b.dataset, name).tobytes()
        np.testing.assert_array_equal(a.click_probability, b.click_probability)

    def test_records_are_well_formed(self):
        w = generate_world(SMALL, SCHEMA)
        ds = w.dataset
        assert np.all(np.diff(ds.timestamp) >= 0)
        assert set(np.unique(ds.label)) <= {0, 1}
        assert ds.sequence_length.max() <= SCHEMA.max_sequence_length
        first_snapshot = w.signals.timestamps()[SMALL.history_steps - 1]
        assert ds.snapshot.min() == first_snapshot
        assert np.all((ds.timestamp >= ds.snapshot) & (ds.timestamp < ds.snapshot + 1800))
        assert np.all((w.click_probability > 0) & (w.click_probability < 1))
        assert set(w.regime) <= set(REGIME_KINDS)

    def test_identity_preferences_leave_category_ctr_unchanged(self):
        regimes = {k: RegimeParams(1.0 if k != "normal" else 0.0, 0.0) for k in REGIME_KINDS}
        cfg = replace(SMALL, regimes=regimes, impressions_per_snapshot=170, num_categories=20, num_brands=40)
        w = generate_world(cfg, SCHEMA)
        assert len(w.dataset) >= 100_000
        promo = w.regime != "normal"
        stat = dof = 0
        for c in np.unique(w.dataset.item[:, 1]):
            sel = w.dataset.item[:, 1] == c
            table = np.array(
                [[np.sum(w.dataset.label[sel & g] == y) for y in (0, 1)] for g in (promo, ~promo)]
            )
            if table.min() < 5:
                continue
            s, _, d, _ = chi2_contingency(table, correction=False)
            stat, dof = stat + s, dof + d
        assert dof >= 15
        assert chi2.sf(stat, dof) > 0.01

    def test_promo_preferences_change_category_entropy(self):
        cfg = replace(SMALL, impressions_per_snapshot=170, num_categories=50, num_brands=200)
        w = generate_world(cfg, SCHEMA)
        assert len(w.dataset) >= 100_000
        clicked = w.dataset.label == 1
        normal = category_entropy(w.dataset.item[clicked & (w.regime == "normal"), 1])
        peak = category_entropy(w.dataset.item[clicked & (w.regime == "promo_peak"), 1])
        assert abs(normal - peak) > 0.05


def digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestWriteDataset:
    def test_split_files(self, tmp_path):
        w = generate_world(SMALL, SCHEMA)
        manifest = write_dataset(w, SMALL.split_timestamp, tmp_path, SCHEMA)
        train = read_dataset_file(tmp_path / "train.tsv", SCHEMA)
        valid = read_dataset_file(tmp_path / "valid.tsv", SCHEMA)
        assert len(train) + len(valid) == len(w.dataset)
        assert train.timestamp.max() < valid.timestamp.min()
        assert np.all(np.diff(train.timestamp) >= 0) and np.all(np.diff(valid.timestamp) >= 0)
        assert manifest["counts"]["train"]["records"] == len(train)
        assert manifest["counts"]["valid"]["promotion"] > 0 and manifest["counts"]["valid"]["normal"] > 0
        assert 0.5 < manifest["ceiling_auc"]["valid"]["overall"] <= 1
        assert (tmp_path / "signals.csv").exists() and (tmp_path / "manifest.json").exists()
        first = w.dataset.record(0)
        assert train.record(0) == first

    def test_all_before_split_gives_empty_validation(self, tmp_path, caplog):
        w = generate_world(SMALL, SCHEMA)
        end = w.schedule.end
        with caplog.at_level("WARNING"):
            write_dataset(w, end, tmp_path, SCHEMA)
        assert "empty" in caplog.text
        assert len(read_dataset_file(tmp_path / "valid.tsv", SCHEMA)) == 0

    def test_split_outside_horizon(self, tmp_path):
        w = generate_world(SMALL, SCHEMA)
        with pytest.raises(ConfigError):
            write_dataset(w, w.schedule.end + 1, tmp_path, SCHEMA)

    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            write_dataset(generate_world(SMALL, SCHEMA), SMALL.split_timestamp, tmp_path / name, SCHEMA)
        for f in ("train.tsv", "valid.tsv", "signals.csv", "manifest.json"):
            assert digest(tmp_path / "a" / f) == digest(tmp_path / "b" / f)
