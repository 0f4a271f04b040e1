"""Per-timestep prediction, deviation and fused anomaly scores; root-cause ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import DataError, RawSeries, apply_standardizer, window_array
from .structure import DeviationMatrix, dissimilarity_batch
from .training import TrainedModel

FUSION_MODES = ("multiplicative", "additive")
SCORES_HEADER = ("timestep", "p_score", "d_score", "a_score")


def prediction_score(x_t, pred) -> float:
    """Mean absolute error over variables."""
    x_t, pred = np.asarray(x_t, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if x_t.shape != pred.shape:
        raise ValueError(f"length mismatch: {x_t.shape} vs {pred.shape}")
    return float(np.mean(np.abs(x_t - pred)))


def deviation_score(D_t, sls) -> float:
    """Frobenius norm of ``D_t - SLS``."""
    a = getattr(D_t, "values", D_t)
    b = getattr(sls, "values", sls)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def fuse(p, d, mode: str = "multiplicative"):
    """Combine prediction and deviation scores; works on scalars and arrays."""
    if mode == "multiplicative":
        return p * d
    if mode == "additive":
        return p + d
    raise ValueError(f"unknown fusion mode {mode!r}; choose from {FUSION_MODES}")


def _znorm(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / (sd if sd > 0 else 1.0)


@dataclass(frozen=True)
class ScoreSeries:
    timesteps: np.ndarray
    p_score: np.ndarray
    d_score: np.ndarray
    a_score: np.ndarray
    mode: str = "multiplicative"
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.timesteps)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(SCORES_HEADER) + "\n")
            for t, p, d, a in zip(self.timesteps, self.p_score, self.d_score, self.a_score):
                fh.write(f"{int(t)},{p:.17g},{d:.17g},{a:.17g}\n")


def read_scores_csv(path: str | Path) -> ScoreSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SCORES_HEADER:
        raise DataError(f"{path}: header must be {','.join(SCORES_HEADER)}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray([[float(v) for v in r] for r in body], dtype=np.float64)
    return ScoreSeries(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2], arr[:, 3])


def _test_windows(tm: TrainedModel, test: RawSeries) -> tuple[np.ndarray, np.ndarray]:
    cfg = tm.config
    if test.n_vars != cfg.n_vars:
        raise DataError(f"model was trained on {cfg.n_vars} variables, test series has {test.n_vars}")
    if test.n_steps < cfg.window:
        raise DataError(f"test series of length {test.n_steps} is shorter than window length {cfg.window}")
    z = apply_standardizer(tm.standardizer, test)
    return window_array(z.values, cfg.window)


def _run(tm: TrainedModel, windows: np.ndarray, batch_size: int):
    preds, dmats = [], []
    model = tm.model
    model.eval()
    with torch.no_grad():
        for s in range(0, len(windows), batch_size):
            out = model(torch.as_tensor(windows[s : s + batch_size]))
            preds.append(out["pred"].double().numpy())
            dmats.append(dissimilarity_batch(out["refined"], tm.train_config.metric).double().numpy())
    return np.concatenate(preds), np.concatenate(dmats)


def score_series(
    tm: TrainedModel,
    test: RawSeries,
    mode: str = "multiplicative",
    normalize: bool = False,
    batch_size: int = 4096,
) -> ScoreSeries:
    """Score every test step from L-1 onward.

    P is computed on the standardised scale. ``normalize`` z-scores P and D
    over the series before fusing; it is only meaningful for additive fusion.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}; choose from {FUSION_MODES}")
    if normalize and mode != "additive":
        raise ValueError("component normalisation is only supported with additive fusion")
    origins, windows = _test_windows(tm, test)
    pred, D = _run(tm, windows, batch_size)
    target = windows[:, -1, :]
    p = np.mean(np.abs(target - pred), axis=1)
    d = np.sqrt(((D - tm.sls.values) ** 2).sum(axis=(1, 2)))
    a = fuse(_znorm(p), _znorm(d), mode) if normalize else fuse(p, d, mode)
    return ScoreSeries(origins.astype(np.int64), p, d, a, mode, normalize)


def deviation_matrices(
    tm: TrainedModel, test: RawSeries, timesteps: Sequence[int]
) -> list[DeviationMatrix]:
    """``|D_t - SLS|`` at the requested test timesteps."""
    L = tm.config.window
    for t in timesteps:
        if t < L - 1:
            raise DataError(f"timestep {t} is before first scorable step {L - 1}")
        if t >= test.n_steps:
            raise DataError(f"timestep {t} is past the end of the test series ({test.n_steps} steps)")
    origins, windows = _test_windows(tm, test)
    rows = np.asarray(timesteps, dtype=np.int64) - (L - 1)
    _, D = _run(tm, windows[rows], 4096)
    return [DeviationMatrix(np.abs(D[k] - tm.sls.values), int(t)) for k, t in enumerate(timesteps)]


@dataclass(frozen=True)
class RootCauseRanking:
    timestep: int
    ranked: list[tuple[int, float]]

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "timestep": self.timestep,
            "ranked": [
                {"variable": i, **({"name": names[i]} if names else {}), "aggregate": agg}
                for i, agg in self.ranked
            ],
        }


def rank_root_causes(dev, k: int = 3) -> RootCauseRanking:
    """Top-k variables by row sum of a deviation matrix, ties to the lower index."""
    values = np.asarray(getattr(dev, "values", dev), dtype=np.float64)
    N = values.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}], got {k}")
    agg = values.sum(axis=1)
    order = np.lexsort((np.arange(N), -agg))[:k]
    return RootCauseRanking(int(getattr(dev, "timestep", -1)), [(int(i), float(agg[i])) for i in order])
