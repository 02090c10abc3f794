"""Synthetic series, CSV ingestion, chronological splits, and sliding windows.

Datasets are immutable after construction: an N x D float64 value matrix,
per-channel names, and two split indices (train_end, val_end) marking the
chronological train/val/test boundaries.  Window enumeration and
standardization are pure functions that return new objects.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

COMPONENT_KINDS = ("sine", "trend", "ar1")
DEFAULT_SPLIT = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class SynthComponent:
    """One additive ingredient of a synthetic series.

    sine:  amplitude * sin(2*pi*n/period + phase), phase shifted by
           2*pi*c/D on channel c so channels are not identical copies.
    trend: linear ramp from 0 to amplitude across the series.
    ar1:   stationary AR(1) with innovation std = amplitude, independent
           per channel.
    """

    kind: str
    amplitude: float = 1.0
    period: float = 24.0
    phase: float = 0.0
    ar_coeff: float = 0.9

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}; expected one of {COMPONENT_KINDS}")
        if self.kind == "sine" and self.period <= 0:
            raise ValueError(f"sine period must be > 0, got {self.period}")
        if self.kind == "ar1" and not abs(self.ar_coeff) < 1.0:
            raise ValueError(f"|ar_coeff| must be < 1 for stationarity, got {self.ar_coeff}")


@dataclass(frozen=True)
class SynthSpec:
    n_points: int
    d_channels: int
    components: tuple[SynthComponent, ...]
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if self.d_channels < 1:
            raise ValueError(f"d_channels must be >= 1, got {self.d_channels}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        object.__setattr__(self, "components", tuple(self.components))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,), all entries > 0


@dataclass(frozen=True)
class WindowSample:
    """History rows n-L+1..n and label rows n+1..n+T at origin n (0-based).

    The arrays are views into the source dataset; treat them as read-only.
    """

    history: np.ndarray  # (L, D)
    label: np.ndarray  # (T, D)
    origin: int


@dataclass(frozen=True)
class SeriesDataset:
    values: np.ndarray  # (N, D) float64
    channel_names: list[str]
    train_end: int
    val_end: int
    norm_stats: NormStats | None = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        n = vals.shape[0]
        if vals.ndim != 2:
            raise ValueError("values must be a 2-D (N, D) array")
        if len(self.channel_names) != vals.shape[1]:
            raise ValueError("one channel name per column required")
        if not (0 < self.train_end < self.val_end <= n):
            raise ValueError(
                f"split indices must satisfy 0 < train_end < val_end <= N; "
                f"got train_end={self.train_end}, val_end={self.val_end}, N={n}"
            )

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def d_channels(self) -> int:
        return self.values.shape[1]


def default_synth_spec(n_points: int = 2000, seed: int = 0) -> SynthSpec:
    """Case-study default: two channels mixing two sines and a slow trend.

    Periods 24 and 60 with noise_std 0.1 make near-term and far-term
    prediction genuinely different problems, which is what the per-step
    representation probe is meant to expose.
    """
    return SynthSpec(
        n_points=n_points,
        d_channels=2,
        components=(
            SynthComponent(kind="sine", amplitude=1.0, period=24.0, phase=0.0),
            SynthComponent(kind="sine", amplitude=0.7, period=60.0, phase=0.9),
            SynthComponent(kind="trend", amplitude=1.5),
        ),
        noise_std=0.1,
        seed=seed,
    )


def generate_synthetic(spec: SynthSpec, split: tuple[float, float, float] = DEFAULT_SPLIT) -> SeriesDataset:
    """Sum the configured components, add Gaussian noise, split 70/10/20.

    Deterministic for a fixed spec: the RNG is seeded from ``spec.seed``
    and consumed in a fixed order (ar1 components first, then noise).
    """
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_points, spec.d_channels
    values = np.zeros((n, d))
    steps = np.arange(n, dtype=np.float64)
    for comp in spec.components:
        if comp.kind == "sine":
            for c in range(d):
                ph = comp.phase + 2.0 * math.pi * c / d
                values[:, c] += comp.amplitude * np.sin(2.0 * math.pi * steps / comp.period + ph)
        elif comp.kind == "trend":
            ramp = comp.amplitude * steps / max(n - 1, 1)
            values += ramp[:, None]
        else:  # ar1
            innov = rng.normal(size=(n, d)) * comp.amplitude
            series = np.zeros((n, d))
            series[0] = innov[0] / math.sqrt(1.0 - comp.ar_coeff**2)
            for i in range(1, n):
                series[i] = comp.ar_coeff * series[i - 1] + innov[i]
            values += series
    if spec.noise_std > 0:
        values += rng.normal(size=(n, d)) * spec.noise_std
    train_end, val_end = _split_from_ratios(n, split)
    names = [f"ch{c}" for c in range(d)]
    return SeriesDataset(values=values, channel_names=names, train_end=train_end, val_end=val_end)


def _split_from_ratios(n: int, ratios: tuple[float, float, float]) -> tuple[int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    # small epsilon so 10 * (0.7 + 0.1) floors to 8, not 7
    train_end = int(n * ratios[0] + 1e-9)
    val_end = int(n * (ratios[0] + ratios[1]) + 1e-9)
    return train_end, val_end


def load_csv(
    path,
    ratios: tuple[float, float, float] | None = None,
    counts: tuple[int, int, int] | None = None,
) -> SeriesDataset:
    """Load a comma-separated, UTF-8, header-first file into a dataset.

    The first column is a timestamp and is ignored for the math (a
    non-monotone timestamp order only warns).  Remaining columns must be
    fully numeric: missing or unparseable cells are hard errors naming
    the 1-based data row.  The split comes from exactly one of ``ratios``
    (fractions of N) or ``counts`` (explicit row counts per split; the
    file is truncated to their sum).
    """
    if (ratios is None) == (counts is None):
        raise ValueError("provide exactly one of ratios= or counts=")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need a timestamp column plus at least one channel")
        channel_names = [h.strip() for h in header[1:]]
        stamps: list[str] = []
        rows: list[list[float]] = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            stamps.append(row[0])
            parsed = []
            for name, cell in zip(channel_names, row[1:]):
                text = cell.strip()
                if text == "":
                    raise ValueError(f"{path}: missing value at row {i}, column {name!r}")
                try:
                    x = float(text)
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell {text!r} at row {i}, column {name!r}"
                    ) from None
                if not math.isfinite(x):
                    raise ValueError(f"{path}: non-finite value at row {i}, column {name!r}")
                parsed.append(x)
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    _check_monotone(stamps, path)
    values = np.array(rows, dtype=np.float64)
    if counts is not None:
        a, b, c = counts
        if min(a, b) < 1 or c < 0:
            raise ValueError(f"counts must be positive (test may be 0), got {counts}")
        total = a + b + c
        if total > len(rows):
            raise ValueError(f"{path}: counts {counts} sum to {total} but the file has {len(rows)} data rows")
        values = values[:total]
        train_end, val_end = a, a + b
    else:
        train_end, val_end = _split_from_ratios(len(rows), ratios)
    return SeriesDataset(values=values, channel_names=channel_names, train_end=train_end, val_end=val_end)


def _check_monotone(stamps: list[str], path) -> None:
    try:
        keys = [float(s) for s in stamps]
    except ValueError:
        keys = stamps  # lexicographic works for ISO-style timestamps
    if any(b < a for a, b in zip(keys, keys[1:])):
        warnings.warn(f"{path}: timestamps are not monotone non-decreasing", UserWarning)


def standardize(ds: SeriesDataset) -> SeriesDataset:
    """Per-channel z-score using statistics from the train split only."""
    if ds.norm_stats is not None:
        raise ValueError("dataset is already standardized")
    train = ds.values[: ds.train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for c, s in enumerate(std):
        if s < 1e-12:
            raise ValueError(
                f"channel {ds.channel_names[c]!r} is constant in the train split; cannot standardize"
            )
    stats = NormStats(mean=mean, std=std)
    return replace(ds, values=(ds.values - mean) / std, norm_stats=stats)


def destandardize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`standardize` for value arrays shaped (..., D)."""
    return values * stats.std + stats.mean


def window_origins(ds: SeriesDataset, lookback: int, horizon: int, split: str) -> list[int]:
    """Origins n of stride-1 windows whose labels lie inside ``split``.

    Labels never cross forward into a later split; val/test histories may
    reach back across the boundary (the usual benchmark convention).
    """
    if lookback < 1:
        raise ValueError(f"lookback must be >= 1, got {lookback}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    n = ds.n_points
    if split == "train":
        lo, hi = lookback - 1, ds.train_end - 1 - horizon
    elif split == "val":
        lo, hi = max(ds.train_end - 1, lookback - 1), ds.val_end - 1 - horizon
    elif split == "test":
        lo, hi = max(ds.val_end - 1, lookback - 1), n - 1 - horizon
    else:
        raise ValueError(f"split must be train, val, or test; got {split!r}")
    if hi < lo:
        raise ValueError(
            f"{split} split too short for lookback={lookback}, horizon={horizon}"
        )
    return list(range(lo, hi + 1))


def windows(ds: SeriesDataset, lookback: int, horizon: int, split: str) -> list[WindowSample]:
    out = []
    for n in window_origins(ds, lookback, horizon, split):
        out.append(
            WindowSample(
                history=ds.values[n - lookback + 1 : n + 1],
                label=ds.values[n + 1 : n + 1 + horizon],
                origin=n,
            )
        )
    return out
