"""The OracleAD network: per-variable LSTM encoders, attention pooling,
cross-variable multi-head self-attention, and per-variable LSTM decoders.

Computation runs in float64 unless the config asks for float32 (faster
on CPU; checkpoints still store float64). Internally tensors are laid out variable-first,
``(N, B, ...)``, so the N independent recurrent branches advance together as
one batched matrix product per step.

Parameter layout (``d`` hidden size, ``H`` heads, ``d_h = d / H``)::

    enc.{l}.w_ih   (N, in_l, 4d)   in_l = 1 for l = 0 else d
    enc.{l}.w_hh   (N, d, 4d)
    enc.{l}.bias   (N, 4d)
    pool.w         (d,)  or (N, d) with pool_per_variable
    pool.b         ()    or (N,)
    attn.w_q/k/v   (H, d, d_h)
    attn.w_o       (H, d_h, d)
    dec.{l}.*      as enc.{l}.*
    dec.out.w      (N, d)
    dec.out.b      (N,)

LSTM gates are packed in the order input, forget, output, candidate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    n_vars: int
    window: int = 10
    hidden_dim: int = 32
    n_heads: int = 4
    n_layers: int = 2
    seed: int = 0
    pool_per_variable: bool = False
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if self.n_vars < 1:
            raise ValueError(f"n_vars must be >= 1, got {self.n_vars}")
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.hidden_dim < 1 or self.n_heads < 1 or self.hidden_dim % self.n_heads:
            raise ValueError(
                f"hidden_dim ({self.hidden_dim}) must be a positive multiple of n_heads ({self.n_heads})"
            )

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, fan_in)`` for every tensor, in initialisation order."""
    N, d, H, dh = cfg.n_vars, cfg.hidden_dim, cfg.n_heads, cfg.head_dim
    specs = []
    for part in ("enc", "dec"):
        for l in range(cfg.n_layers):
            n_in = 1 if l == 0 else d
            specs += [
                (f"{part}.{l}.w_ih", (N, n_in, 4 * d), n_in),
                (f"{part}.{l}.w_hh", (N, d, 4 * d), d),
                (f"{part}.{l}.bias", (N, 4 * d), d),
            ]
        if part == "enc":
            pool_shape = (N, d) if cfg.pool_per_variable else (d,)
            specs += [
                ("pool.w", pool_shape, d),
                ("pool.b", pool_shape[:-1], d),
                ("attn.w_q", (H, d, dh), d),
                ("attn.w_k", (H, d, dh), d),
                ("attn.w_v", (H, d, dh), d),
                ("attn.w_o", (H, dh, d), dh),
            ]
    specs += [("dec.out.w", (N, d), d), ("dec.out.b", (N,), d)]
    return specs


class OracleModel(nn.Module):
    """All learnable parameters plus the forward pass."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.fan_in: dict[str, int] = {}
        for name, shape, fan_in in parameter_specs(cfg):
            self.register_parameter(_attr(name), nn.Parameter(torch.zeros(shape, dtype=cfg.torch_dtype)))
            self.fan_in[name] = fan_in

    def param(self, name: str) -> nn.Parameter:
        return getattr(self, _attr(name))

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        return [(name, self.param(name)) for name, _, _ in parameter_specs(self.cfg)]

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, p in self.named_tensors():
                src = torch.as_tensor(np.asarray(arrays[name], dtype=np.float64)).to(p.dtype)
                if src.shape != p.shape:
                    raise ValueError(f"{name}: expected shape {tuple(p.shape)}, got {tuple(src.shape)}")
                p.copy_(src)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().double().numpy().copy() for name, p in self.named_tensors()}

    # -- building blocks on (N, B, ...) tensors ---------------------------------

    def _lstm_step(self, part, x, state):
        """One time step through every layer; ``state`` is a list of (h, c)."""
        d = self.cfg.hidden_dim
        new_state = []
        inp = x
        for l, (h, c) in enumerate(state):
            gates = torch.baddbmm(
                self.param(f"{part}.{l}.bias").unsqueeze(1), inp, self.param(f"{part}.{l}.w_ih")
            ) + torch.bmm(h, self.param(f"{part}.{l}.w_hh"))
            sig = torch.sigmoid(gates[..., : 3 * d])
            i, f, o = sig[..., :d], sig[..., d : 2 * d], sig[..., 2 * d :]
            g = torch.tanh(gates[..., 3 * d :])
            c = f * c + i * g
            h = o * torch.tanh(c)
            new_state.append((h, c))
            inp = h
        return inp, new_state

    def encode(self, past: torch.Tensor) -> torch.Tensor:
        """(N, B, L-1) scalar sequences -> (N, B, L-1, d) top-layer hidden states."""
        N, B, steps = past.shape
        zero = past.new_zeros((N, B, self.cfg.hidden_dim))
        state = [(zero, zero)] * self.cfg.n_layers
        outs = []
        for t in range(steps):
            h, state = self._lstm_step("enc", past[:, :, t : t + 1], state)
            outs.append(h)
        return torch.stack(outs, dim=2)

    def pool(self, hiddens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Softmax over time of ``w.h + b``; returns (N, B, d) embeddings and (N, B, L-1) weights."""
        w, b = self.param("pool.w"), self.param("pool.b")
        if self.cfg.pool_per_variable:
            scores = torch.einsum("nbtd,nd->nbt", hiddens, w) + b[:, None, None]
        else:
            scores = hiddens @ w + b
        alpha = torch.softmax(scores, dim=-1)
        return torch.einsum("nbt,nbtd->nbd", alpha, hiddens), alpha

    def mhsa(self, C: torch.Tensor) -> torch.Tensor:
        """Self-attention across variables; C is (B, N, d)."""
        scale = 1.0 / math.sqrt(self.cfg.head_dim)
        q = torch.einsum("bnd,hde->bhne", C, self.param("attn.w_q"))
        k = torch.einsum("bnd,hde->bhne", C, self.param("attn.w_k"))
        v = torch.einsum("bnd,hde->bhne", C, self.param("attn.w_v"))
        att = torch.softmax(q @ k.transpose(-1, -2) * scale, dim=-1)
        return torch.einsum("bhne,hed->bnd", att @ v, self.param("attn.w_o"))

    def decode(self, c_star: torch.Tensor, steps: int) -> torch.Tensor:
        """Unroll ``steps`` decoder steps from (N, B, d) embeddings -> (N, B, steps).

        The embedding seeds the hidden state of every layer (cell state starts
        at zero); the first input is zero and each later input is the previous
        output.
        """
        N, B, _ = c_star.shape
        state = [(c_star, torch.zeros_like(c_star))] * self.cfg.n_layers
        w, b = self.param("dec.out.w"), self.param("dec.out.b")
        y = c_star.new_zeros((N, B, 1))
        outs = []
        for _ in range(steps):
            h, state = self._lstm_step("dec", y, state)
            y = (torch.einsum("nbd,nd->nb", h, w) + b[:, None]).unsqueeze(-1)
            outs.append(y)
        return torch.cat(outs, dim=-1)

    def forward(self, windows: torch.Tensor) -> dict[str, torch.Tensor]:
        """Windows (B, L, N) -> dict of batch-first tensors.

        Only the first L-1 rows are read; row L is the target and never
        enters the network.
        """
        L = self.cfg.window
        if windows.ndim != 3 or windows.shape[1:] != (L, self.cfg.n_vars):
            raise ValueError(
                f"expected windows of shape (B, {L}, {self.cfg.n_vars}), got {tuple(windows.shape)}"
            )
        past = windows[:, : L - 1, :].to(self.cfg.torch_dtype).permute(2, 0, 1)  # (N, B, L-1)
        hiddens = self.encode(past)
        c, alpha = self.pool(hiddens)
        C = c.transpose(0, 1)  # (B, N, d)
        C_star = self.mhsa(C)
        out = self.decode(C_star.transpose(0, 1), L)  # (N, B, L)
        out = out.permute(1, 2, 0)  # (B, L, N)
        return {
            "causal": C,
            "refined": C_star,
            "recon": out[:, : L - 1, :],
            "pred": out[:, L - 1, :],
            "attention_weights": alpha.permute(1, 0, 2),  # (B, N, L-1)
        }


def _attr(name: str) -> str:
    return name.replace(".", "_")


def init_model(cfg: ModelConfig) -> OracleModel:
    """Fresh model with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters.

    Draws come from ``numpy.random.default_rng(cfg.seed)`` in the fixed
    ``parameter_specs`` order, so the same config yields identical bytes.
    """
    rng = np.random.default_rng(cfg.seed)
    model = OracleModel(cfg)
    arrays = {}
    for name, shape, fan_in in parameter_specs(cfg):
        bound = 1.0 / math.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    model.load_arrays(arrays)
    return model


@dataclass
class ForwardOutput:
    """Forward results as numpy arrays, batch-first.

    causal, refined: (B, N, d); recon: (B, L-1, N); pred: (B, N);
    attention_weights: (B, N, L-1).
    """

    causal: np.ndarray
    refined: np.ndarray
    recon: np.ndarray
    pred: np.ndarray
    attention_weights: np.ndarray

    def __len__(self) -> int:
        return self.pred.shape[0]

    def __getitem__(self, k: int) -> "ForwardOutput":
        return ForwardOutput(
            self.causal[k : k + 1],
            self.refined[k : k + 1],
            self.recon[k : k + 1],
            self.pred[k : k + 1],
            self.attention_weights[k : k + 1],
        )


def _as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def forward(model: OracleModel, windows, batch_size: int = 4096) -> ForwardOutput:
    """Run the network on a batch of windows without tracking gradients.

    ``windows`` is either a (B, L, N) array or a sequence of ``Window``.
    """
    if not isinstance(windows, np.ndarray) and len(windows) and hasattr(windows[0], "past"):
        windows = np.stack([np.vstack([w.past, w.target[None, :]]) for w in windows])
    arr = np.asarray(windows, dtype=np.float64)
    parts = []
    with torch.no_grad():
        for s in range(0, max(len(arr), 1), batch_size):
            out = model(_as_tensor(arr[s : s + batch_size]))
            parts.append({k: v.double().numpy() for k, v in out.items()})
    return ForwardOutput(**{k: np.concatenate([p[k] for p in parts]) for k in parts[0]})


def encode_variable(model: OracleModel, i: int, seq) -> np.ndarray:
    """Top-layer hidden states of variable ``i``'s encoder, shape (len(seq), d)."""
    if not 0 <= i < model.cfg.n_vars:
        raise IndexError(f"variable index {i} out of range")
    dt = model.cfg.torch_dtype
    seq = _as_tensor(seq).reshape(-1)
    N = model.cfg.n_vars
    past = torch.zeros((N, 1, seq.numel()), dtype=dt)
    past[i, 0] = seq
    with torch.no_grad():
        return model.encode(past)[i, 0].double().numpy()


def attention_pool(model: OracleModel, hiddens, variable: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pool (T, d) hidden states into one embedding; returns (c, weights).

    ``variable`` only matters with per-variable pooling parameters.
    """
    h = _as_tensor(hiddens).to(model.cfg.torch_dtype)
    N = model.cfg.n_vars
    stacked = h.expand(N, 1, *h.shape).contiguous()
    with torch.no_grad():
        c, alpha = model.pool(stacked)
    return c[variable, 0].double().numpy(), alpha[variable, 0].double().numpy()


def mhsa(model: OracleModel, C) -> np.ndarray:
    """Refine an (N, d) embedding matrix; returns (N, d)."""
    with torch.no_grad():
        return model.mhsa(_as_tensor(C).to(model.cfg.torch_dtype).unsqueeze(0))[0].double().numpy()


def decode_variable(model: OracleModel, i: int, c_star_i) -> tuple[np.ndarray, float]:
    """Run decoder ``i`` from one refined embedding; returns (recon of length L-1, pred)."""
    if not 0 <= i < model.cfg.n_vars:
        raise IndexError(f"variable index {i} out of range")
    N, d = model.cfg.n_vars, model.cfg.hidden_dim
    c = torch.zeros((N, 1, d), dtype=model.cfg.torch_dtype)
    c[i, 0] = _as_tensor(c_star_i)
    with torch.no_grad():
        out = model.decode(c, model.cfg.window)[i, 0].double().numpy()
    return out[:-1], float(out[-1])
