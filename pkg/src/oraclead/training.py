"""Composite loss, the epoch loop and the SLS schedule."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .dataset import RawSeries, Standardizer, Window, apply_standardizer, fit_standardizer, window_array
from .model import ForwardOutput, ModelConfig, OracleModel, init_model
from .structure import METRICS, StableLatentStructure, aggregate_sls, dissimilarity_batch, dissimilarity_variance

logger = logging.getLogger(__name__)

ADAMW_BETAS = (0.9, 0.999)
ADAMW_EPS = 1e-8
ADAMW_WEIGHT_DECAY = 0.01


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1024
    lr: float = 5e-4
    lambda_recon: float = 0.1
    lambda_dev: float = 3.0
    metric: str = "l2"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda_recon < 0 or self.lambda_dev < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {METRICS}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    prediction: float
    reconstruction: float
    deviation: float
    total: float


def batch_losses(
    out: dict[str, torch.Tensor],
    windows: torch.Tensor,
    sls: torch.Tensor | None,
    cfg: TrainConfig,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-window (prediction, reconstruction, deviation, D) for a batch.

    ``sls`` is treated as a constant; it is detached before use.
    """
    L = windows.shape[1]
    windows = windows.to(out["pred"].dtype)
    pred_loss = ((windows[:, L - 1, :] - out["pred"]) ** 2).sum(-1)
    recon_loss = ((windows[:, : L - 1, :] - out["recon"]) ** 2).sum((-1, -2))
    D = dissimilarity_batch(out["refined"], cfg.metric)
    if sls is None:
        dev_loss = torch.zeros_like(pred_loss)
    else:
        dev_loss = ((D - sls.detach().to(D.dtype)) ** 2).mean((-1, -2))
    return pred_loss, recon_loss, dev_loss, D


def total_loss(pred, recon, dev, cfg: TrainConfig):
    return pred + cfg.lambda_recon * recon + cfg.lambda_dev * dev


def compute_loss(out: ForwardOutput, win: Window, sls: StableLatentStructure | None, cfg: TrainConfig) -> LossBreakdown:
    """Loss of a single window, given the network's output for it."""
    L = win.past.shape[0] + 1
    if out.recon.shape[-2:] != win.past.shape or out.pred.shape[-1] != win.target.shape[0]:
        raise ValueError("forward output does not match the window's shape")
    if sls is not None and sls.values.shape[0] != win.target.shape[0]:
        raise ValueError("SLS size does not match the number of variables")
    w = torch.as_tensor(np.vstack([win.past, win.target[None, :]])[None])
    o = {
        "pred": torch.as_tensor(out.pred.reshape(1, -1)),
        "recon": torch.as_tensor(out.recon.reshape(1, L - 1, -1)),
        "refined": torch.as_tensor(out.refined.reshape(1, *out.refined.shape[-2:])),
    }
    s = None if sls is None else torch.as_tensor(sls.values)
    p, r, d, _ = batch_losses(o, w, s, cfg)
    p, r, d = float(p[0]), float(r[0]), float(d[0])
    return LossBreakdown(p, r, d, p + cfg.lambda_recon * r + cfg.lambda_dev * d)


def make_optimizer(model: OracleModel, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=cfg.lr,
        betas=ADAMW_BETAS,
        eps=ADAMW_EPS,
        weight_decay=ADAMW_WEIGHT_DECAY,
    )


@dataclass
class EpochResult:
    d_mats: np.ndarray  # (M, N, N), in window order
    n_steps: int
    pred_loss: float
    recon_loss: float
    dev_loss: float
    total: float


BatchHook = Callable[[int, int, np.ndarray, "StableLatentStructure | None", np.ndarray, np.ndarray], None]


def train_epoch(
    model: OracleModel,
    windows: np.ndarray,
    optimizer: torch.optim.Optimizer,
    sls: StableLatentStructure | None,
    cfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 1,
    on_batch: BatchHook | None = None,
) -> EpochResult:
    """One shuffled pass over ``windows`` (M, L, N), one optimiser step per batch.

    The returned dissimilarity matrices are the ones produced by each
    window's own training forward pass. ``on_batch(epoch, batch_index,
    window_indices, sls, per_window_deviation_loss, D)`` is called after each
    step with numpy copies of the batch's losses and dissimilarity matrices.
    """
    M = len(windows)
    if M == 0:
        raise ValueError("no training windows")
    N = windows.shape[2]
    order = rng.permutation(M)
    sls_t = None if sls is None else torch.as_tensor(sls.values)
    d_mats = np.empty((M, N, N))
    sums = np.zeros(4)
    n_steps = 0
    model.train()
    for b, start in enumerate(range(0, M, cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        w = torch.as_tensor(windows[idx])
        out = model(w)
        p, r, d, D = batch_losses(out, w, sls_t, cfg)
        tot = total_loss(p, r, d, cfg)
        loss = tot.mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        n_steps += 1
        D_np = D.detach().double().numpy()
        d_mats[idx] = D_np
        sums += [float(t.detach().sum()) for t in (p, r, d, tot)]
        if on_batch is not None:
            on_batch(epoch, b, idx, sls, d.detach().double().numpy(), D_np)
    means = sums / M
    return EpochResult(d_mats, n_steps, *means)


@dataclass
class TrainedModel:
    model: OracleModel
    sls: StableLatentStructure
    standardizer: Standardizer
    train_config: TrainConfig
    history: list[dict] = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.model.cfg


def dissimilarities(model: OracleModel, windows: np.ndarray, metric: str, batch_size: int = 4096) -> np.ndarray:
    """Frozen-parameter dissimilarity matrices for (M, L, N) windows."""
    out = []
    with torch.no_grad():
        for s in range(0, len(windows), batch_size):
            refined = model(torch.as_tensor(windows[s : s + batch_size]))["refined"]
            out.append(dissimilarity_batch(refined, metric).double().numpy())
    return np.concatenate(out)


def fit(
    train_series: RawSeries,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    refit_sls: bool = False,
    on_batch: BatchHook | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainedModel:
    """Standardise, window and train.

    Epoch 1 runs without an SLS (no deviation term). The SLS aggregated at the
    end of epoch e is the reference for epoch e+1, and the one from the final
    epoch is returned. With ``refit_sls`` the returned SLS is recomputed from a
    frozen pass over the training windows instead.
    """
    if train_series.n_vars != mcfg.n_vars:
        raise ValueError(f"model expects {mcfg.n_vars} variables, series has {train_series.n_vars}")
    standardizer = fit_standardizer(train_series)
    z = apply_standardizer(standardizer, train_series)
    _, windows = window_array(z.values, mcfg.window)

    model = init_model(mcfg)
    optimizer = make_optimizer(model, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    sls = None
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        res = train_epoch(model, windows, optimizer, sls, tcfg, rng, epoch, on_batch)
        sls = aggregate_sls(res.d_mats, epoch)
        record = {
            "epoch": epoch,
            "pred_loss": res.pred_loss,
            "recon_loss": res.recon_loss,
            "dev_loss": res.dev_loss,
            "total": res.total,
            "d_variance": dissimilarity_variance(res.d_mats),
            "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }
        history.append(record)
        logger.info(
            "epoch %d: total %.5f (pred %.5f, recon %.5f, dev %.5f), D variance %.5f",
            epoch, res.total, res.pred_loss, res.recon_loss, res.dev_loss, record["d_variance"],
        )
        if on_epoch is not None:
            on_epoch(record)
    model.eval()
    if refit_sls:
        sls = aggregate_sls(dissimilarities(model, windows, tcfg.metric), tcfg.epochs)
    return TrainedModel(model, sls, standardizer, tcfg, history)


def gradient_check(
    model: OracleModel,
    windows: np.ndarray,
    sls: np.ndarray | None,
    cfg: TrainConfig,
    step: float = 1e-4,
    floor: float = 1e-8,
) -> dict[str, float]:
    """Relative error between autograd and central differences, per tensor.

    The relative error of a tensor is ``|g_a - g_fd| / max(|g_a|, |g_fd|, floor)``
    in the Euclidean norm. The floor keeps tensors whose true gradient is
    zero (the shared pooling bias, which softmax ignores) from reporting
    rounding noise divided by rounding noise.
    """
    w = torch.as_tensor(np.asarray(windows, dtype=np.float64))
    s = None if sls is None else torch.as_tensor(np.asarray(sls, dtype=np.float64))

    def loss_value() -> torch.Tensor:
        p, r, d, _ = batch_losses(model(w), w, s, cfg)
        return total_loss(p, r, d, cfg).mean()

    model.zero_grad(set_to_none=True)
    loss_value().backward()
    errors = {}
    for name, p in model.named_tensors():
        analytic = p.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        with torch.no_grad():
            for k in range(flat.numel()):
                orig = float(flat[k])
                flat[k] = orig + step
                up = float(loss_value())
                flat[k] = orig - step
                down = float(loss_value())
                flat[k] = orig
                numeric[k] = (up - down) / (2 * step)
        scale = max(float(analytic.norm()), float(numeric.norm()), floor)
        errors[name] = float((analytic - numeric).norm()) / scale
    model.zero_grad(set_to_none=True)
    return errors
