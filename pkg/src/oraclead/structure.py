"""Pairwise dissimilarity of refined embeddings and the stable latent structure."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

METRICS = ("l2", "l1", "cosine")
COSINE_ZERO_NORM = 1e-12


def _check_square(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {values.shape}")
    return values


@dataclass(frozen=True)
class DissimilarityMatrix:
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _check_square(self.values))

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class StableLatentStructure:
    values: np.ndarray
    n_windows: int
    epoch: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _check_square(self.values))
        if self.n_windows < 1:
            raise ValueError("an SLS needs at least one window")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DeviationMatrix:
    values: np.ndarray
    timestep: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _check_square(self.values))


def _values(m) -> np.ndarray:
    return m.values if hasattr(m, "values") else np.asarray(m, dtype=np.float64)


def dissimilarity_batch(C_star: torch.Tensor, metric: str = "l2") -> torch.Tensor:
    """Differentiable (..., N, d) -> (..., N, N) distance matrices.

    The diagonal is exactly zero and the result exactly symmetric: only the
    upper triangle is computed and mirrored. The L2 branch keeps gradients
    finite when two embeddings coincide.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    N = C_star.shape[-2]
    iu, ju = torch.triu_indices(N, N, offset=1)
    a, b = C_star[..., iu, :], C_star[..., ju, :]
    if metric == "l2":
        sq = ((a - b) ** 2).sum(-1)
        pos = sq > 0
        dist = torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    elif metric == "l1":
        dist = (a - b).abs().sum(-1)
    else:
        na, nb = a.norm(dim=-1), b.norm(dim=-1)
        ok = (na >= COSINE_ZERO_NORM) & (nb >= COSINE_ZERO_NORM)
        denom = torch.where(ok, na * nb, torch.ones_like(na))
        cos = (a * b).sum(-1) / denom
        dist = torch.where(ok, 1.0 - cos, torch.ones_like(cos))
    out = C_star.new_zeros(C_star.shape[:-2] + (N, N))
    out[..., iu, ju] = dist
    out[..., ju, iu] = dist
    return out


def pairwise_dissimilarity(C_star, metric: str = "l2") -> DissimilarityMatrix:
    """Distances between the rows of an (N, d) embedding matrix.

    ``cosine`` is ``1 - cos(c_i, c_j)`` in [0, 2]; if either row has norm
    below 1e-12 the distance is 1.
    """
    C = torch.as_tensor(np.asarray(C_star, dtype=np.float64))
    if C.ndim != 2 or C.shape[0] < 1:
        raise ValueError(f"expected an (N, d) matrix with N >= 1, got shape {tuple(C.shape)}")
    with torch.no_grad():
        return DissimilarityMatrix(dissimilarity_batch(C, metric).numpy())


def aggregate_sls(mats: Sequence, epoch: int = 0) -> StableLatentStructure:
    """Element-wise mean of an epoch's dissimilarity matrices."""
    stack = [_values(m) for m in mats]
    if not stack:
        raise ValueError("cannot aggregate an empty sequence of matrices")
    if len({m.shape for m in stack}) != 1:
        raise ValueError("dissimilarity matrices have inconsistent shapes")
    arr = np.stack(stack)
    return StableLatentStructure(arr.mean(axis=0), len(stack), epoch)


def deviation_matrix(D_t, sls, timestep: int = -1) -> DeviationMatrix:
    a, b = _values(D_t), _values(sls)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return DeviationMatrix(np.abs(a - b), timestep)


def dissimilarity_variance(mats: Sequence) -> float:
    """Population variance pooled over the off-diagonal entries of all matrices.

    Returns 0 for N = 1, where there are no off-diagonal entries.
    """
    stack = [_values(m) for m in mats]
    if not stack:
        raise ValueError("cannot take the variance of an empty sequence of matrices")
    arr = np.stack(stack)
    N = arr.shape[-1]
    if N < 2:
        return 0.0
    off = arr[:, ~np.eye(N, dtype=bool)]
    return float(off.var())


def write_matrix_csv(values: np.ndarray, names: Sequence[str], path: str | Path) -> None:
    """N x N matrix with a header row of variable names."""
    values = _values(values)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in values:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.asarray([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
