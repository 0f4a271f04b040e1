"""Command-line entry point: ``oraclead {train,score,evaluate,diagnose,synth}``.

Settings come from built-in defaults, then an optional ``--config`` JSON file
(keys are the long flag names with underscores), then explicit flags.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import DataError, SyntheticSpec, gen_synthetic, load_csv, load_labels, write_csv, write_labels
from .evaluation import EvalConfig, MetricError, evaluate_all
from .model import ModelConfig
from .scoring import deviation_matrices, rank_root_causes, read_scores_csv, score_series
from .structure import write_matrix_csv
from .training import TrainConfig, TrainingError, fit

logger = logging.getLogger("oraclead")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # model
    window: int = 10
    hidden_dim: int = 32
    n_heads: int = 4
    n_layers: int = 2
    pool_per_variable: bool = False
    dtype: str = "float64"
    # training
    epochs: int = 20
    batch_size: int = 1024
    lr: float = 5e-4
    lambda_recon: float = 0.1
    lambda_dev: float = 3.0
    metric: str = "l2"
    seed: int = 0
    refit_sls: bool = False
    # scoring / evaluation
    fusion: str = "multiplicative"
    normalize: bool = False
    omega_set: list[int] = field(default_factory=lambda: list(range(0, 11)))
    n_bins: int = 200
    alpha_recall: float = 0.0
    delta: float = 10.0
    threshold_metric: str = "f1"
    # diagnosis
    timesteps: list[int] = field(default_factory=list)
    top_k: int = 3
    # files
    train: str | None = None
    test: str | None = None
    labels: str | None = None
    scores: str | None = None
    checkpoint: str | None = None
    spec: str | None = None
    out_dir: str = "."
    has_header: bool = False
    threads: int | None = None

    def model_config(self, n_vars: int) -> ModelConfig:
        return ModelConfig(
            n_vars=n_vars,
            window=self.window,
            hidden_dim=self.hidden_dim,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            seed=self.seed,
            pool_per_variable=self.pool_per_variable,
            dtype=self.dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lambda_recon=self.lambda_recon,
            lambda_dev=self.lambda_dev,
            metric=self.metric,
            seed=self.seed,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            omega_set=tuple(self.omega_set),
            n_bins=self.n_bins,
            alpha_recall=self.alpha_recall,
            delta=self.delta,
            threshold_metric=self.threshold_metric,
        )

    def out(self, name: str) -> Path:
        return Path(self.out_dir) / name


_FIELDS = {f.name: f for f in fields(RunConfig)}


def resolve_config(flags: dict, config_file: str | None = None) -> RunConfig:
    """Merge defaults < config file < explicit flags."""
    values: dict = {}
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(doc) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in flags.items() if k in _FIELDS})
    return RunConfig(**values)


def _add_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--print-config", action="store_true", help="print the merged config and exit")
    p.add_argument("--threads", type=int, default=S, help="cap on torch worker threads")
    p.add_argument("--out-dir", dest="out_dir", default=S)
    p.add_argument("--has-header", dest="has_header", action="store_true", default=S)
    g = p.add_argument_group("model")
    g.add_argument("--window", type=int, default=S)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=S)
    g.add_argument("--n-heads", dest="n_heads", type=int, default=S)
    g.add_argument("--n-layers", dest="n_layers", type=int, default=S)
    g.add_argument("--pool-per-variable", dest="pool_per_variable", action="store_true", default=S)
    g.add_argument("--dtype", choices=("float64", "float32"), default=S)
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=S)
    g.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    g.add_argument("--lr", type=float, default=S)
    g.add_argument("--lambda-recon", dest="lambda_recon", type=float, default=S)
    g.add_argument("--lambda-dev", dest="lambda_dev", type=float, default=S)
    g.add_argument("--metric", choices=("l2", "l1", "cosine"), default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--refit-sls", dest="refit_sls", action="store_true", default=S)
    g = p.add_argument_group("scoring and evaluation")
    g.add_argument("--fusion", choices=("multiplicative", "additive"), default=S)
    g.add_argument("--normalize", action="store_true", default=S,
                   help="z-score P and D before additive fusion")
    g.add_argument("--omega-set", dest="omega_set", type=int, nargs="+", default=S)
    g.add_argument("--n-bins", dest="n_bins", type=int, default=S)
    g.add_argument("--alpha-recall", dest="alpha_recall", type=float, default=S)
    g.add_argument("--delta", type=float, default=S)
    g.add_argument("--threshold-metric", dest="threshold_metric",
                   choices=("f1", "range_f1", "affiliation_f1"), default=S)
    g = p.add_argument_group("files")
    for name in ("train", "test", "labels", "scores", "checkpoint", "spec"):
        g.add_argument(f"--{name}", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oraclead", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("train", "fit a model and write a checkpoint plus train_log.jsonl"),
        ("score", "write scores.csv for a test series"),
        ("evaluate", "write report.json from scores.csv and labels"),
        ("diagnose", "write deviation matrices and ranking.json"),
        ("synth", "write a synthetic train/test/labels set from a spec file"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_flags(p)
        if name == "diagnose":
            p.add_argument("--timesteps", type=int, nargs="+", default=argparse.SUPPRESS)
            p.add_argument("--top-k", dest="top_k", type=int, default=argparse.SUPPRESS)
    return parser


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"--{name} is required")
        if not Path(value).is_file():
            raise ConfigError(f"{name} file not found: {value}")


def _out_dir(cfg: RunConfig) -> None:
    try:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out_dir}: {exc}") from None


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else cfg.out("model.ckpt")


def cmd_train(cfg: RunConfig) -> Path:
    _require(cfg, "train")
    _out_dir(cfg)
    try:
        tcfg = cfg.train_config()
        ModelConfig(n_vars=1, window=cfg.window, hidden_dim=cfg.hidden_dim, n_heads=cfg.n_heads,
                    n_layers=cfg.n_layers, dtype=cfg.dtype)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    series = load_csv(cfg.train, cfg.has_header)
    mcfg = cfg.model_config(series.n_vars)
    log_path = cfg.out("train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as log:
        def on_epoch(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            log.flush()

        tm = fit(series, mcfg, tcfg, refit_sls=cfg.refit_sls, on_epoch=on_epoch)
    ckpt = _checkpoint_path(cfg)
    save_checkpoint(tm, ckpt)
    logger.info("wrote %s and %s", ckpt, log_path)
    return ckpt


def cmd_score(cfg: RunConfig) -> Path:
    _require(cfg, "test")
    ckpt = _checkpoint_path(cfg)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint file not found: {ckpt}")
    _out_dir(cfg)
    tm = load_checkpoint(ckpt)
    test = load_csv(cfg.test, cfg.has_header)
    ss = score_series(tm, test, cfg.fusion, cfg.normalize)
    path = cfg.out("scores.csv")
    ss.write_csv(path)
    logger.info("wrote %s (%d rows)", path, len(ss))
    return path


def cmd_evaluate(cfg: RunConfig) -> Path:
    scores_path = cfg.scores or str(cfg.out("scores.csv"))
    cfg.scores = scores_path
    _require(cfg, "scores", "labels")
    try:
        ecfg = cfg.eval_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _out_dir(cfg)
    ss = read_scores_csv(scores_path)
    labels = load_labels(cfg.labels)
    first = int(ss.timesteps[0])
    trimmed = labels[first:]
    if len(trimmed) != len(ss):
        raise DataError(
            f"length mismatch after dropping the first {first} labels: "
            f"{len(trimmed)} labels vs {len(ss)} scores"
        )
    report = evaluate_all(ss, trimmed, ecfg)
    doc = report.to_dict()
    doc["config"] = {
        "omega_set": list(ecfg.omega_set),
        "n_bins": ecfg.n_bins,
        "alpha_recall": ecfg.alpha_recall,
        "alpha_precision": 0.0,
        "delta": ecfg.delta,
        "threshold_metric": ecfg.threshold_metric,
        "fusion": cfg.fusion,
        "normalize": cfg.normalize,
        "seed": cfg.seed,
    }
    path = cfg.out("report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("wrote %s", path)
    return path


def cmd_diagnose(cfg: RunConfig) -> Path:
    _require(cfg, "test")
    ckpt = _checkpoint_path(cfg)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint file not found: {ckpt}")
    if not cfg.timesteps:
        raise ConfigError("--timesteps is required")
    _out_dir(cfg)
    tm = load_checkpoint(ckpt)
    test = load_csv(cfg.test, cfg.has_header)
    if not 1 <= cfg.top_k <= test.n_vars:
        raise ConfigError(f"--top-k must lie in [1, {test.n_vars}]")
    rankings = []
    for dev in deviation_matrices(tm, test, cfg.timesteps):
        write_matrix_csv(dev.values, test.variable_names, cfg.out(f"deviation_t{dev.timestep}.csv"))
        rankings.append(rank_root_causes(dev, cfg.top_k).to_dict(test.variable_names))
    path = cfg.out("ranking.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"top_k": cfg.top_k, "rankings": rankings}, fh, indent=2)
        fh.write("\n")
    logger.info("wrote %d deviation matrices and %s", len(rankings), path)
    return path


def cmd_synth(cfg: RunConfig) -> Path:
    _require(cfg, "spec")
    try:
        doc = json.loads(Path(cfg.spec).read_text(encoding="utf-8"))
        spec = SyntheticSpec.from_dict(doc)
        train, test = gen_synthetic(spec)
    except (json.JSONDecodeError, TypeError, DataError) as exc:
        raise ConfigError(f"invalid synthetic spec {cfg.spec}: {exc}") from None
    _out_dir(cfg)
    write_csv(train, cfg.out("train.csv"), header=cfg.has_header)
    write_csv(test, cfg.out("test.csv"), header=cfg.has_header)
    write_labels(test.labels, cfg.out("labels.csv"))
    logger.info("wrote train.csv, test.csv, labels.csv to %s", cfg.out_dir)
    return Path(cfg.out_dir)


COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    logging.basicConfig(level=args.pop("log_level").upper(), format="%(levelname)s %(name)s: %(message)s")
    command = args.pop("command")
    config_file = args.pop("config")
    print_config = args.pop("print_config")
    try:
        cfg = resolve_config(args, config_file)
        if print_config:
            print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
            return 0
        if cfg.threads is not None:
            if cfg.threads < 1:
                raise ConfigError("--threads must be >= 1")
            torch.set_num_threads(cfg.threads)
        COMMANDS[command](cfg)
    except (ConfigError, TypeError) as exc:
        print(f"oraclead {command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, MetricError, TrainingError, ValueError, OSError) as exc:
        print(f"oraclead {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
