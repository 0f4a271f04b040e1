"""Point, range and affiliation F1, AUC-ROC/PR, lag-averaged VUS, and
grid-search threshold calibration.

Binary vectors are 0/1 arrays. Ranges are maximal runs of ones, written as
inclusive ``(start, end)`` index pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import label_runs

THRESHOLD_METRICS = ("f1", "range_f1", "affiliation_f1")


class MetricError(ValueError):
    """Raised when a metric is undefined for its input (e.g. a single class)."""


def _binary(x, name: str) -> np.ndarray:
    a = np.asarray(x)
    if a.ndim != 1:
        raise MetricError(f"{name} must be one-dimensional")
    if not np.all((a == 0) | (a == 1)):
        raise MetricError(f"{name} must contain only 0 and 1")
    return a.astype(np.int64)


def _pair(pred, labels) -> tuple[np.ndarray, np.ndarray]:
    p, y = _binary(pred, "pred"), _binary(labels, "labels")
    if p.shape != y.shape:
        raise MetricError(f"length mismatch: {len(p)} predictions vs {len(y)} labels")
    return p, y


def _harmonic(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        y = _binary(self.labels, "labels")
        if s.ndim != 1 or s.shape != y.shape:
            raise MetricError(f"scores ({s.shape}) and labels ({y.shape}) must be equal-length vectors")
        if s.size == 0:
            raise MetricError("empty input")
        if not np.all(np.isfinite(s)):
            raise MetricError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)


def binarize(scores, tau: float) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= tau).astype(np.int64)


def point_f1(pred, labels) -> tuple[float, float, float]:
    """Point-wise (precision, recall, f1) with no point adjustment."""
    p, y = _pair(pred, labels)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, _harmonic(precision, recall)


# -- range-based F1 ------------------------------------------------------------


@dataclass(frozen=True)
class RangeF1Config:
    alpha_recall: float = 0.0
    alpha_precision: float = 0.0
    bias: str = "flat"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_recall <= 1.0:
            raise ValueError(f"alpha_recall must lie in [0, 1], got {self.alpha_recall}")
        if self.alpha_precision != 0.0:
            raise ValueError("range precision is defined with alpha = 0")
        if self.bias != "flat":
            raise ValueError(f"only the flat positional bias is supported, got {self.bias!r}")


def _range_terms(ranges, other: np.ndarray, other_ranges) -> tuple[np.ndarray, np.ndarray]:
    """Per-range (overlap * cardinality, existence) against another run set."""
    starts = np.array([s for s, _ in other_ranges])
    ends = np.array([e for _, e in other_ranges])
    overlap, exists = [], []
    for s, e in ranges:
        covered = int(other[s : e + 1].sum())
        n_hit = int(np.sum((starts <= e) & (ends >= s))) if len(other_ranges) else 0
        cf = 1.0 if n_hit <= 1 else 1.0 / n_hit
        overlap.append(covered / (e - s + 1) * cf)
        exists.append(1.0 if covered else 0.0)
    return np.asarray(overlap), np.asarray(exists)


def range_precision_recall(pred, labels, cfg: RangeF1Config = RangeF1Config()) -> tuple[float, float]:
    p, y = _pair(pred, labels)
    real, found = label_runs(y), label_runs(p)
    if real:
        overlap, exists = _range_terms(real, p, found)
        recall = (1 - cfg.alpha_recall) * overlap.mean() + cfg.alpha_recall * exists.mean()
    else:
        recall = 0.0
    precision = _range_terms(found, y, real)[0].mean() if found else 0.0
    return float(precision), float(recall)


def range_f1(pred, labels, cfg: RangeF1Config = RangeF1Config()) -> float:
    """Segment-level F1 from flat-bias overlap, cardinality and existence terms.

    Recall is ``(1 - alpha) * mean(overlap * CF) + alpha * existence`` so it
    stays in [0, 1]; precision swaps the roles of the two run sets with
    alpha = 0.
    """
    return _harmonic(*range_precision_recall(pred, labels, cfg))


# -- affiliation F1 --------------------------------------------------------------


def _linear_decay(dist: np.ndarray, delta: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - dist / delta)


def affiliation_precision_recall(pred, labels, delta: float = 10.0) -> tuple[float, float]:
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    p, y = _pair(pred, labels)
    points = np.flatnonzero(p)
    ranges = label_runs(y)
    if len(points) == 0 or not ranges:
        return 0.0, 0.0
    starts = np.array([s for s, _ in ranges])
    ends = np.array([e for _, e in ranges])
    # every point against every range, chunked to bound memory
    prec_d = np.empty(len(points))
    for k in range(0, len(points), 4096):
        pts = points[k : k + 4096, None]
        prec_d[k : k + 4096] = np.maximum(0, np.maximum(starts - pts, pts - ends)).min(axis=1)
    # nearest predicted point on either side of each range
    rec_d = np.empty(len(ranges))
    for j, (s, e) in enumerate(ranges):
        lo = np.searchsorted(points, s)
        if lo < len(points) and points[lo] <= e:
            rec_d[j] = 0
            continue
        cands = []
        if lo < len(points):
            cands.append(points[lo] - e)
        if lo > 0:
            cands.append(s - points[lo - 1])
        rec_d[j] = min(cands)
    precision = float(_linear_decay(prec_d, delta).mean())
    recall = float(_linear_decay(rec_d, delta).mean())
    return precision, recall


def affiliation_f1(pred, labels, delta: float = 10.0) -> float:
    """Proximity F1 with linear decay ``max(0, 1 - dist / delta)``.

    Precision averages the decay of each predicted point's distance to the
    nearest label range; recall averages, over label ranges, the decay of the
    distance to the nearest predicted point. Without predictions or without
    label ranges the score is 0.
    """
    return _harmonic(*affiliation_precision_recall(pred, labels, delta))


# -- ranking metrics --------------------------------------------------------------


def _sweep(ls: LabeledScores) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Cumulative (tp, fp) at each distinct score, thresholds descending."""
    order = np.argsort(-ls.scores, kind="mergesort")
    s, y = ls.scores[order], ls.labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1 - y)[last]
    return tp, fp, int(y.sum()), int(len(y) - y.sum())


def auc_roc(ls: LabeledScores) -> float:
    """Trapezoidal area under the ROC curve; ties earn half credit."""
    tp, fp, P, Nn = _sweep(ls)
    if P == 0 or Nn == 0:
        raise MetricError("AUC-ROC needs both positive and negative labels")
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / Nn]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def auc_pr(ls: LabeledScores) -> float:
    """Step-wise area under the precision-recall curve (average precision)."""
    tp, fp, P, _ = _sweep(ls)
    if P == 0:
        raise MetricError("AUC-PR needs at least one positive label")
    precision = tp / (tp + fp)
    recall = np.r_[0.0, tp / P]
    return float(np.sum(np.diff(recall) * precision))


def adjust_labels_with_lag(labels, omega: int) -> np.ndarray:
    """Dilate labels: a step is positive if a true positive lies within ``omega`` steps."""
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    y = _binary(labels, "labels")
    if omega == 0 or y.size == 0:
        return y.copy()
    kernel = np.ones(2 * omega + 1, dtype=np.int64)
    return (np.convolve(y, kernel, mode="same") > 0).astype(np.int64)


def vus(ls: LabeledScores, omega_set: Sequence[int], kind: str = "roc") -> float:
    """AUC averaged over lag-dilated label sets."""
    omegas = list(omega_set)
    if not omegas:
        raise MetricError("omega_set must not be empty")
    auc = {"roc": auc_roc, "pr": auc_pr}.get(kind)
    if auc is None:
        raise ValueError(f"unknown VUS kind {kind!r}; choose 'roc' or 'pr'")
    vals = [auc(LabeledScores(ls.scores, adjust_labels_with_lag(ls.labels, w))) for w in omegas]
    return float(np.mean(vals))


# -- threshold calibration --------------------------------------------------------


@dataclass(frozen=True)
class ThresholdResult:
    tau_star: float
    metric_value: float
    n_bins: int


def threshold_grid(scores, n_bins: int = 200) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = float(s.min()), float(s.max())
    if lo == hi or n_bins == 1:
        return np.array([lo])
    i = np.arange(n_bins, dtype=np.float64)
    return lo + i / (n_bins - 1) * (hi - lo)


def _metric_fn(metric: str, range_cfg: RangeF1Config, delta: float) -> Callable:
    if metric == "f1":
        return lambda p, y: point_f1(p, y)[2]
    if metric == "range_f1":
        return lambda p, y: range_f1(p, y, range_cfg)
    if metric == "affiliation_f1":
        return lambda p, y: affiliation_f1(p, y, delta)
    raise ValueError(f"unknown threshold metric {metric!r}; choose from {THRESHOLD_METRICS}")


def optimal_threshold(
    ls: LabeledScores,
    metric: str = "f1",
    n_bins: int = 200,
    range_cfg: RangeF1Config = RangeF1Config(),
    delta: float = 10.0,
) -> ThresholdResult:
    """Best threshold on a uniform grid over [min, max]; ties go to the smallest."""
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    fn = _metric_fn(metric, range_cfg, delta)
    grid = threshold_grid(ls.scores, n_bins)
    values = [fn(binarize(ls.scores, tau), ls.labels) for tau in grid]
    k = int(np.argmax(values))
    return ThresholdResult(float(grid[k]), float(values[k]), n_bins)


# -- full report ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    omega_set: tuple[int, ...] = tuple(range(0, 11))
    n_bins: int = 200
    alpha_recall: float = 0.0
    delta: float = 10.0
    threshold_metric: str = "f1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "omega_set", tuple(int(w) for w in self.omega_set))
        if not self.omega_set or min(self.omega_set) < 0:
            raise ValueError("omega_set must be a non-empty set of non-negative lags")
        if self.threshold_metric not in THRESHOLD_METRICS:
            raise ValueError(f"unknown threshold metric {self.threshold_metric!r}")
        RangeF1Config(self.alpha_recall)


METRIC_KEYS = ("f1", "r_f1", "aff_f1", "auc_roc", "auc_pr", "vus_roc", "vus_pr")


@dataclass
class EvalReport:
    f1: float
    r_f1: float
    aff_f1: float
    auc_roc: float
    auc_pr: float
    vus_roc: float
    vus_pr: float
    tau_star: float
    omega_set: list[int]
    details: dict = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_all(scores, labels, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """All seven metrics for a score series.

    ``scores`` is an anomaly-score vector or a ``ScoreSeries`` (its
    ``a_score`` is used, and the P and D components get their own AUCs in
    ``details``). Labels must already be aligned with the scores.
    """
    components = {}
    if hasattr(scores, "a_score"):
        components = {"p_score": scores.p_score, "d_score": scores.d_score}
        scores = scores.a_score
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
    ls = LabeledScores(scores, labels)
    range_cfg = RangeF1Config(cfg.alpha_recall)
    th = optimal_threshold(ls, cfg.threshold_metric, cfg.n_bins, range_cfg, cfg.delta)
    pred = binarize(ls.scores, th.tau_star)
    precision, recall, f1 = point_f1(pred, ls.labels)
    r_prec, r_rec = range_precision_recall(pred, ls.labels, range_cfg)
    a_prec, a_rec = affiliation_precision_recall(pred, ls.labels, cfg.delta)
    details = {
        "threshold_metric": cfg.threshold_metric,
        "threshold_metric_value": th.metric_value,
        "n_bins": cfg.n_bins,
        "point": {"precision": precision, "recall": recall},
        "range": {"precision": r_prec, "recall": r_rec, "alpha_recall": cfg.alpha_recall},
        "affiliation": {"precision": a_prec, "recall": a_rec, "delta": cfg.delta},
        "n_points": int(len(scores)),
        "n_positive": int(ls.labels.sum()),
    }
    for name, comp in components.items():
        cls = LabeledScores(comp, labels)
        details[f"{name}_auc"] = {"auc_roc": auc_roc(cls), "auc_pr": auc_pr(cls)}
    return EvalReport(
        f1=f1,
        r_f1=_harmonic(r_prec, r_rec),
        aff_f1=_harmonic(a_prec, a_rec),
        auc_roc=auc_roc(ls),
        auc_pr=auc_pr(ls),
        vus_roc=vus(ls, cfg.omega_set, "roc"),
        vus_pr=vus(ls, cfg.omega_set, "pr"),
        tau_star=th.tau_star,
        omega_set=list(cfg.omega_set),
        details=details,
    )
