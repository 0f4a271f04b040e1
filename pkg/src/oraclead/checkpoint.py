"""Binary checkpoint container for a trained model.

Layout (all integers little-endian)::

    magic        8 bytes   b"ORACLEAD"
    version      u32       currently 1
    header_len   u32
    header       UTF-8 JSON, sorted keys: model_config, train_config,
                 optimizer constants, sls {n_windows, epoch}
    n_tensors    u32
    per tensor:
        name_len u16, name (UTF-8)
        ndim     u8,  dims (u64 each)
        payload  prod(dims) float64 values, C order

Tensors are the model parameters (names as in ``model.parameter_specs``)
followed by ``standardizer.mean``, ``standardizer.std`` and ``sls``.
A JSON manifest mirroring the header and tensor shapes is written next to
the checkpoint as ``<path>.json``. Nothing time-dependent is stored, so
identical training runs produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dataset import Standardizer
from .model import ModelConfig, OracleModel
from .structure import StableLatentStructure
from .training import ADAMW_BETAS, ADAMW_EPS, ADAMW_WEIGHT_DECAY, TrainConfig, TrainedModel

MAGIC = b"ORACLEAD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _header(tm: TrainedModel) -> dict:
    return {
        "model_config": tm.config.to_dict(),
        "train_config": tm.train_config.to_dict(),
        "optimizer": {
            "name": "adamw",
            "betas": list(ADAMW_BETAS),
            "eps": ADAMW_EPS,
            "weight_decay": ADAMW_WEIGHT_DECAY,
        },
        "sls": {"n_windows": tm.sls.n_windows, "epoch": tm.sls.epoch},
    }


def _tensors(tm: TrainedModel) -> list[tuple[str, np.ndarray]]:
    arrays = tm.model.arrays()
    out = [(name, arrays[name]) for name, _ in tm.model.named_tensors()]
    out += [
        ("standardizer.mean", tm.standardizer.mean),
        ("standardizer.std", tm.standardizer.std),
        ("sls", tm.sls.values),
    ]
    return out


def save_checkpoint(tm: TrainedModel, path: str | Path, manifest: bool = True) -> None:
    header = _header(tm)
    tensors = _tensors(tm)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))
    if manifest:
        doc = dict(header, format_version=VERSION, tensors=[
            {"name": name, "shape": list(np.shape(arr))} for name, arr in tensors
        ])
        with open(f"{path}.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _read(fh, fmt: str):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, buf)


def load_checkpoint(path: str | Path) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path} is not an OracleAD checkpoint")
        version, hlen = _read(fh, "<II")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = _read(fh, "<I")
        tensors = {}
        for _ in range(count):
            (nlen,) = _read(fh, "<H")
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = _read(fh, "<B")
            shape = _read(fh, f"<{ndim}Q") if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise CheckpointError(f"truncated payload for tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")

    mcfg = ModelConfig(**header["model_config"])
    tcfg = TrainConfig(**header["train_config"])
    model = OracleModel(mcfg)
    try:
        model.load_arrays(tensors)
        standardizer = Standardizer(tensors["standardizer.mean"], tensors["standardizer.std"])
        sls_values = tensors["sls"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc}") from None
    model.eval()
    sls = StableLatentStructure(sls_values, header["sls"]["n_windows"], header["sls"]["epoch"])
    return TrainedModel(model, sls, standardizer, tcfg)
