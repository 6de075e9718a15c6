"""Occasion-signal series, sliding windows and per-window FFT magnitude spectra.

A series is an M x N matrix: M business statistics (active users, GMV,
add-to-cart counts, ...) sampled every T minutes, column ``t`` holding the
values at ``end_timestamp - (N - 1 - t) * T * 60``. The spectrum sequence
used by the occasion encoder is obtained by normalizing the series, cutting
it into overlapping windows, taking the modulus of an N_f-point FFT of each
window row and flattening each window's M x N_f magnitudes into one row.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from moef import _kernels
from moef.errors import ConfigError, ContractError, DataError, DimensionError, InsufficientHistoryError

NORMALIZATIONS = ("zscore", "log1p", "none")
STD_GUARD = 1e-8


@dataclass(frozen=True)
class OccasionSignalSeries:
    values: np.ndarray
    signal_names: tuple
    sampling_interval_minutes: int
    end_timestamp: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"signal series must be a non-empty M x N matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("signal series contains non-finite values")
        if len(self.signal_names) != values.shape[0]:
            raise DimensionError(f"{len(self.signal_names)} signal names for {values.shape[0]} signals")
        if self.sampling_interval_minutes <= 0:
            raise ConfigError("sampling interval must be a positive number of minutes")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "signal_names", tuple(self.signal_names))

    @property
    def num_signals(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def step_seconds(self) -> int:
        return self.sampling_interval_minutes * 60

    @property
    def start_timestamp(self) -> int:
        return self.end_timestamp - (self.length - 1) * self.step_seconds

    def timestamps(self) -> np.ndarray:
        return self.end_timestamp - (self.length - 1 - np.arange(self.length)) * self.step_seconds

    def column_at(self, timestamp: int) -> int:
        """Index of the latest column observed at or before ``timestamp``."""
        col = (int(timestamp) - self.start_timestamp) // self.step_seconds
        if col < 0 or col >= self.length:
            raise DataError(f"timestamp {timestamp} is outside the signal series")
        return int(col)

    def history(self, end_column: int, length: int) -> "OccasionSignalSeries":
        """The ``length`` columns ending at ``end_column`` (inclusive)."""
        start = end_column - length + 1
        if start < 0 or end_column >= self.length:
            ts = self.start_timestamp + end_column * self.step_seconds
            raise InsufficientHistoryError(
                f"no {length}-step signal history ends at column {end_column} (timestamp {ts})"
            )
        return OccasionSignalSeries(
            self.values[:, start : end_column + 1],
            self.signal_names,
            self.sampling_interval_minutes,
            self.start_timestamp + end_column * self.step_seconds,
        )


@dataclass(frozen=True)
class WindowingConfig:
    window_size: int = 24
    stride: int = 6
    fft_points: int = 32
    normalization: str = "zscore"
    one_sided: bool = False
    history_steps: int = 96

    def __post_init__(self):
        if self.window_size < 1 or self.stride < 1 or self.fft_points < 1:
            raise ConfigError("window size, stride and FFT points must be positive")
        if self.fft_points & (self.fft_points - 1):
            raise ConfigError(f"FFT points must be a power of two, got {self.fft_points}")
        if self.fft_points < self.window_size:
            raise ConfigError(f"FFT points ({self.fft_points}) must be >= window size ({self.window_size})")
        if self.history_steps < self.window_size:
            raise ConfigError(f"history of {self.history_steps} steps is shorter than one window ({self.window_size})")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")

    @property
    def bins(self) -> int:
        return self.fft_points // 2 + 1 if self.one_sided else self.fft_points

    def spectrum_width(self, num_signals: int) -> int:
        return num_signals * self.bins

    def window_count(self, length: int) -> int:
        if length < self.window_size:
            return 0
        return (length - self.window_size) // self.stride + 1


@dataclass
class SpectrumSequence:
    values: np.ndarray
    window_start_indices: np.ndarray

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class SignalStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_series(cls, series: OccasionSignalSeries, end_column: Optional[int] = None) -> "SignalStats":
        """Per-signal statistics over columns ``[0, end_column)`` (all columns by default)."""
        values = series.values if end_column is None else series.values[:, :end_column]
        if values.shape[1] == 0:
            raise DataError("no columns to compute signal statistics from")
        return cls(values.mean(axis=1), values.std(axis=1))

    @classmethod
    def identity(cls, num_signals: int) -> "SignalStats":
        return cls(np.zeros(num_signals), np.ones(num_signals))


def window_starts(length: int, cfg: WindowingConfig) -> np.ndarray:
    return np.arange(cfg.window_count(length)) * cfg.stride


def slide_windows(series: OccasionSignalSeries, cfg: WindowingConfig) -> list:
    """Every M x N_w window fully inside the series, at starts 0, N_s, 2 N_s, ..."""
    if series.length < cfg.window_size:
        raise InsufficientHistoryError(
            f"series has {series.length} steps, window needs {cfg.window_size}"
        )
    return [series.values[:, s : s + cfg.window_size] for s in window_starts(series.length, cfg)]


def normalize(series: OccasionSignalSeries, stats: Optional[SignalStats], mode: str) -> OccasionSignalSeries:
    if mode == "none":
        return series
    if mode == "log1p":
        negative = np.argwhere(series.values < 0)
        if negative.size:
            i, t = negative[0]
            raise ContractError(
                f"log1p needs non-negative values; signal {series.signal_names[i]!r} "
                f"is {series.values[i, t]} at index {t}"
            )
        values = np.log1p(series.values)
    elif mode == "zscore":
        if stats is None or len(stats.mean) != series.num_signals:
            raise DimensionError("z-score normalization needs statistics for every signal")
        values = (series.values - stats.mean[:, None]) / (stats.std[:, None] + STD_GUARD)
    else:
        raise ConfigError(f"unknown normalization {mode!r}")
    return OccasionSignalSeries(values, series.signal_names, series.sampling_interval_minutes, series.end_timestamp)


def fft_modulus(window: np.ndarray, n_fft: int) -> np.ndarray:
    """|DFT| of every row of ``window``, right zero-padded to ``n_fft`` points."""
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise ConfigError(f"FFT points must be a power of two, got {n_fft}")
    if n_fft < window.shape[1]:
        raise ConfigError(f"FFT points ({n_fft}) shorter than the window ({window.shape[1]})")
    return _kernels.fft_modulus_rows(window, n_fft)


def build_spectrum_sequence(
    series: OccasionSignalSeries, cfg: WindowingConfig, stats: Optional[SignalStats] = None
) -> SpectrumSequence:
    """Normalize, slide, FFT each window and flatten: row t is the spectrum of window t."""
    normed = normalize(series, stats, cfg.normalization)
    windows = slide_windows(normed, cfg)
    starts = window_starts(series.length, cfg)
    m = series.num_signals
    rows = np.concatenate(windows, axis=0)
    spectra = fft_modulus(rows, cfg.fft_points)
    if cfg.one_sided:
        spectra = spectra[:, : cfg.bins]
    return SpectrumSequence(spectra.reshape(len(windows), m * cfg.bins), starts)


def time_domain_sequence(series: OccasionSignalSeries, cfg: WindowingConfig) -> SpectrumSequence:
    """log1p-transformed raw windows, each flattened to width M * N_w (no FFT)."""
    normed = normalize(series, None, "log1p")
    windows = slide_windows(normed, cfg)
    flat = np.stack([w.reshape(-1) for w in windows])
    return SpectrumSequence(flat, window_starts(series.length, cfg))


# -- file format -----------------------------------------------------------------
def write_signals(series: OccasionSignalSeries, path) -> None:
    """Header ``M N T end_timestamp`` then one ``name,v_1,...,v_N`` line per signal."""
    lines = [f"{series.num_signals} {series.length} {series.sampling_interval_minutes} {series.end_timestamp}"]
    for name, row in zip(series.signal_names, series.values):
        if "," in name:
            raise ConfigError(f"signal name {name!r} may not contain a comma")
        lines.append(",".join([name] + [repr(float(v)) for v in row]))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write signals to {path}: {exc}") from exc


def read_signals(path) -> OccasionSignalSeries:
    if not os.path.exists(path):
        raise DataError(f"signal file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read signals from {path}: {exc}") from exc
    try:
        m, n, t, end_ts = (int(x) for x in lines[0].split())
    except (ValueError, IndexError):
        raise DataError(f"{path}: bad header, expected 'M N T end_timestamp'") from None
    if len(lines) - 1 != m:
        raise DataError(f"{path}: header announces {m} signals, found {len(lines) - 1}")
    names, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != n + 1:
            raise DataError(f"{path}:{lineno}: expected {n} values, found {len(parts) - 1}")
        names.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
    return OccasionSignalSeries(np.array(rows), tuple(names), t, end_ts)
