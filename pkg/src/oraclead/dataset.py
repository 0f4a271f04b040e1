"""Time-series ingestion, z-scoring, sliding windows and synthetic benchmarks.

All containers here are immutable once built: the backing numpy arrays are
flagged read-only so a series can be handed to worker threads without copies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STD_GUARD = 1e-8

BASE_SIGNALS = ("sinusoid_mix", "ar_process")
ANOMALY_TYPES = ("point_spike", "level_shift", "correlation_break")

# Gap kept between consecutive planted segments (and before the first one)
# so neighbouring segments never merge into one labelled run.
MIN_SEGMENT_GAP = 20


class DataError(ValueError):
    """Raised for malformed input files or inconsistent series."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RawSeries:
    """A T x N block of observations with optional per-step 0/1 labels."""

    values: np.ndarray
    variable_names: tuple[str, ...] = ()
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"values must be a non-empty T x N matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            t, i = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {t + 1}, column {i + 1}")
        names = tuple(self.variable_names) or tuple(f"x{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} variable names for {values.shape[1]} columns")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "variable_names", names)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise DataError(f"labels have shape {labels.shape}, expected ({values.shape[0]},)")
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must contain only 0 and 1")
            object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"cannot parse {cell!r} as a number at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r} at row {row}, column {col}")
    return v


def load_labels(path: str | Path) -> np.ndarray:
    """Read a single-column 0/1 label file, one value per line."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 1:
                raise DataError(f"label file row {row_no}: expected 1 column, got {len(row)}")
            v = _parse_float(row[0].strip(), row_no, 1)
            if v not in (0.0, 1.0):
                raise DataError(f"label file row {row_no}: label must be 0 or 1, got {row[0]!r}")
            out.append(int(v))
    if not out:
        raise DataError("no data rows")
    return np.asarray(out, dtype=np.int64)


def load_csv(
    path: str | Path,
    has_header: bool = False,
    labels_path: str | Path | None = None,
) -> RawSeries:
    """Load a comma-separated numeric matrix.

    Rows are reported 1-based by physical line, so a header counts as row 1.
    Blank lines are skipped.
    """
    rows: list[list[float]] = []
    names: tuple[str, ...] = ()
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if has_header and not names and not rows:
                names = tuple(c.strip() for c in row)
                width = len(names)
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise DataError(f"ragged row {row_no}: expected {width} columns, got {len(row)}")
            rows.append([_parse_float(c.strip(), row_no, j) for j, c in enumerate(row, start=1)])
    if not rows:
        raise DataError("no data rows")
    labels = load_labels(labels_path) if labels_path is not None else None
    if labels is not None and len(labels) != len(rows):
        raise DataError(f"label file has {len(labels)} rows but data has {len(rows)}")
    return RawSeries(np.asarray(rows, dtype=np.float64), names, labels)


def write_csv(series: RawSeries, path: str | Path, header: bool = True) -> None:
    # %.17g round-trips every float64 exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(series.variable_names) + "\n")
        for row in series.values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_labels(labels: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        std = np.array(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise DataError("mean and std must have the same length")
        if np.any(std <= 0):
            raise DataError("std entries must be positive")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def fit_standardizer(train: RawSeries) -> Standardizer:
    """Column means and population (1/T) standard deviations.

    Columns whose std falls below ``STD_GUARD`` get std 1, which maps a
    constant channel to zeros instead of dividing by ~0.
    """
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std < STD_GUARD, 1.0, std)
    return Standardizer(mean, std)


def apply_standardizer(s: Standardizer, x: RawSeries) -> RawSeries:
    if x.n_vars != s.mean.shape[0]:
        raise DataError(f"standardizer fitted on {s.mean.shape[0]} variables, series has {x.n_vars}")
    return RawSeries(s.transform(x.values), x.variable_names, x.labels)


@dataclass(frozen=True)
class Window:
    past: np.ndarray  # (L-1, N)
    target: np.ndarray  # (N,)
    origin_index: int


def window_array(values: np.ndarray, L: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stack sliding windows as an array.

    Returns ``(origins, windows)`` where ``windows[k]`` is the L x N block
    ending at timestep ``origins[k]`` (its last row is the prediction target).
    """
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    if L < 2:
        raise DataError(f"window length must be >= 2, got {L}")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if T < L:
        raise DataError(f"series of length {T} is shorter than window length {L}")
    origins = np.arange(L - 1, T, stride)
    view = np.lib.stride_tricks.sliding_window_view(values, L, axis=0)  # (T-L+1, N, L)
    windows = np.ascontiguousarray(view[origins - (L - 1)].transpose(0, 2, 1))
    return origins, windows


def make_windows(x: RawSeries, L: int, stride: int = 1) -> list[Window]:
    origins, windows = window_array(x.values, L, stride)
    return [
        Window(_frozen(w[:-1].copy()), _frozen(w[-1].copy()), int(o))
        for o, w in zip(origins, windows)
    ]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a correlated multivariate benchmark with planted anomalies.

    ``break_vars`` pins the variables a correlation break flips; when None
    each break segment picks two variables at random.
    """

    n_vars: int = 8
    length_train: int = 8000
    length_test: int = 4000
    seed: int = 0
    base_signal: str = "sinusoid_mix"
    anomaly_types: frozenset[str] = frozenset({"point_spike", "correlation_break"})
    anomaly_ratio: float = 0.05
    segment_length_range: tuple[int, int] = (20, 60)
    break_vars: tuple[int, ...] | None = None
    n_factors: int = 3
    noise_std: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "anomaly_types", frozenset(self.anomaly_types))
        object.__setattr__(self, "segment_length_range", tuple(int(v) for v in self.segment_length_range))
        if self.break_vars is not None:
            object.__setattr__(self, "break_vars", tuple(int(v) for v in self.break_vars))
        self.validate()

    def validate(self) -> None:
        if self.n_vars < 1 or self.length_train < 1 or self.length_test < 1:
            raise DataError("n_vars, length_train and length_test must be positive")
        if self.base_signal not in BASE_SIGNALS:
            raise DataError(f"unknown base_signal {self.base_signal!r}; choose from {BASE_SIGNALS}")
        unknown = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if unknown:
            raise DataError(f"unknown anomaly types {sorted(unknown)}")
        if not 0.0 < self.anomaly_ratio < 1.0:
            raise DataError(f"anomaly_ratio must lie in (0, 1), got {self.anomaly_ratio}")
        lo, hi = self.segment_length_range
        if not 1 <= lo <= hi:
            raise DataError(f"invalid segment_length_range {self.segment_length_range}")
        if self.break_vars is not None:
            if not self.break_vars or any(not 0 <= v < self.n_vars for v in self.break_vars):
                raise DataError(f"break_vars {self.break_vars} out of range for {self.n_vars} variables")
        if self.n_factors < 1 or self.noise_std < 0:
            raise DataError("n_factors must be >= 1 and noise_std >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown synthetic spec fields {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "length_train": self.length_train,
            "length_test": self.length_test,
            "seed": self.seed,
            "base_signal": self.base_signal,
            "anomaly_types": sorted(self.anomaly_types),
            "anomaly_ratio": self.anomaly_ratio,
            "segment_length_range": list(self.segment_length_range),
            "break_vars": None if self.break_vars is None else list(self.break_vars),
            "n_factors": self.n_factors,
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class PlantedSegment:
    start: int
    stop: int  # exclusive
    kind: str
    variables: tuple[int, ...] = field(default=())


def _latent_factors(spec: SyntheticSpec, T: int, rng: np.random.Generator) -> np.ndarray:
    K = spec.n_factors
    t = np.arange(T, dtype=np.float64)
    if spec.base_signal == "sinusoid_mix":
        factors = np.zeros((K, T))
        for k in range(K):
            periods = rng.uniform(16.0, 128.0, size=3)
            phases = rng.uniform(0.0, 2 * np.pi, size=3)
            amps = rng.uniform(0.5, 1.0, size=3)
            for p, ph, a in zip(periods, phases, amps):
                factors[k] += a * np.sin(2 * np.pi * t / p + ph)
    else:
        # stable AR(2) with a complex pole pair: quasi-periodic with random drift
        factors = np.zeros((K, T))
        burn = 200
        for k in range(K):
            r = rng.uniform(0.95, 0.99)
            theta = 2 * np.pi / rng.uniform(16.0, 128.0)
            phi1, phi2 = 2 * r * np.cos(theta), -r * r
            eps = rng.standard_normal(T + burn)
            z = np.zeros(T + burn)
            for s in range(2, T + burn):
                z[s] = phi1 * z[s - 1] + phi2 * z[s - 2] + eps[s]
            factors[k] = z[burn:]
    factors -= factors.mean(axis=1, keepdims=True)
    factors /= factors.std(axis=1, keepdims=True)
    return factors


def _segment_lengths(spec: SyntheticSpec, rng: np.random.Generator) -> list[int]:
    lo, hi = spec.segment_length_range
    target = int(round(spec.anomaly_ratio * spec.length_test))
    if target < lo:
        raise DataError(
            f"anomaly budget of {target} steps is shorter than the minimum segment length {lo}"
        )
    k = max(1, int(round(target / ((lo + hi) / 2))))
    k = min(k, target // lo)
    lengths = [int(v) for v in rng.integers(lo, hi + 1, size=k)]
    # nudge lengths one step at a time, round-robin, until the budget is met
    i = 0
    while sum(lengths) != target:
        step = 1 if sum(lengths) < target else -1
        if lo <= lengths[i % k] + step <= hi:
            lengths[i % k] += step
        elif all(not lo <= n + step <= hi for n in lengths):
            break
        i += 1
    return lengths


def _plan_segments(spec: SyntheticSpec, rng: np.random.Generator) -> list[PlantedSegment]:
    if not spec.anomaly_types:
        return []
    lengths = _segment_lengths(spec, rng)
    k = len(lengths)
    slack = spec.length_test - sum(lengths) - k * MIN_SEGMENT_GAP
    if slack < 0:
        raise DataError(
            f"{k} segments totalling {sum(lengths)} steps do not fit in a test span of {spec.length_test}"
        )
    extra = rng.multinomial(slack, np.full(k + 1, 1.0 / (k + 1)))
    kinds = sorted(spec.anomaly_types)
    segments = []
    pos = 0
    for j, n in enumerate(lengths):
        pos += MIN_SEGMENT_GAP + int(extra[j])
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "correlation_break" and spec.break_vars is not None:
            variables = spec.break_vars
        else:
            n_pick = 2 if kind == "correlation_break" else int(rng.integers(1, max(1, spec.n_vars // 4) + 1))
            n_pick = min(n_pick, spec.n_vars)
            variables = tuple(sorted(int(v) for v in rng.choice(spec.n_vars, size=n_pick, replace=False)))
        segments.append(PlantedSegment(pos, pos + n, kind, variables))
        pos += n
    return segments


def plant_segments(spec: SyntheticSpec) -> list[PlantedSegment]:
    """The anomaly segments ``gen_synthetic`` plants for ``spec`` (test-span indices)."""
    return _generate(spec)[2]


def _generate(spec: SyntheticSpec) -> tuple[RawSeries, RawSeries, list[PlantedSegment]]:
    rng = np.random.default_rng(spec.seed)
    N = spec.n_vars
    T = spec.length_train + spec.length_test
    factors = _latent_factors(spec, T, rng)
    loadings = rng.standard_normal((N, spec.n_factors))
    loadings /= np.linalg.norm(loadings, axis=1, keepdims=True)
    scale = rng.uniform(0.5, 2.0, size=N)
    offset = rng.uniform(-1.0, 1.0, size=N)
    signal = loadings @ factors  # (N, T), unit-scale shared dynamics
    noise = spec.noise_std * rng.standard_normal((N, T))

    segments = _plan_segments(spec, rng)
    test_signal = signal[:, spec.length_train:].copy()
    bump = np.zeros((N, spec.length_test))
    labels = np.zeros(spec.length_test, dtype=np.int64)
    for seg in segments:
        sl = slice(seg.start, seg.stop)
        idx = list(seg.variables)
        if seg.kind == "correlation_break":
            # mirror the shared component: same marginal law, inverted coupling
            test_signal[idx, sl] *= -1.0
        elif seg.kind == "level_shift":
            shift = rng.choice([-1.0, 1.0], size=len(idx)) * rng.uniform(2.0, 4.0, size=len(idx))
            bump[idx, sl] += shift[:, None]
        else:
            n = seg.stop - seg.start
            spikes = rng.choice([-1.0, 1.0], size=(len(idx), n)) * rng.uniform(3.0, 6.0, size=(len(idx), n))
            bump[idx, sl] += spikes
        labels[sl] = 1

    full = np.concatenate([signal[:, : spec.length_train], test_signal + bump], axis=1)
    values = (offset[:, None] + scale[:, None] * (full + noise)).T
    names = tuple(f"x{i}" for i in range(N))
    train = RawSeries(values[: spec.length_train], names)
    test = RawSeries(values[spec.length_train:], names, labels)
    return train, test, segments


def gen_synthetic(spec: SyntheticSpec) -> tuple[RawSeries, RawSeries]:
    """Deterministic train/test pair; train is anomaly-free, test carries labels."""
    train, test, _ = _generate(spec)
    return train, test


def label_runs(labels: Sequence[int] | np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of ones as inclusive ``(start, end)`` index pairs."""
    y = np.asarray(labels).astype(np.int8)
    if y.size == 0:
        return []
    padded = np.concatenate([[0], y, [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]
