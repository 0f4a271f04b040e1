"""OracleAD: multivariate time-series anomaly detection from per-variable
causal embeddings and their stable latent structure."""

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    RawSeries,
    Standardizer,
    SyntheticSpec,
    Window,
    apply_standardizer,
    fit_standardizer,
    gen_synthetic,
    load_csv,
    make_windows,
)
from .evaluation import EvalConfig, EvalReport, LabeledScores, evaluate_all, optimal_threshold
from .model import ModelConfig, OracleModel, forward, init_model
from .scoring import ScoreSeries, deviation_matrices, fuse, rank_root_causes, score_series
from .structure import (
    DeviationMatrix,
    DissimilarityMatrix,
    StableLatentStructure,
    aggregate_sls,
    deviation_matrix,
    pairwise_dissimilarity,
)
from .training import TrainConfig, TrainedModel, compute_loss, fit

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
