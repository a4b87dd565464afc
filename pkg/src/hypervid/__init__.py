"""Hyperbolic (Lorentz-model) text-to-video retrieval at desk scale."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, format_config, load_config, parse_config_text
from .data import (Corpus, QueryRecord, SyntheticCorpusSpec, VideoRecord,
                   gen_synthetic_corpus, load_corpus, save_corpus)
from .errors import (ArgumentError, DimensionError, DomainError, FormatError,
                     NumericalError)
from .estimator import HyperbolicVideoRetriever
from .evaluation import MetricsReport, evaluate_retrieval, inspect_norms, rank_videos
from .losses import LossWeights
from .model import ModelConfig
from .training import train

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "Checkpoint", "Corpus", "DimensionError", "DomainError",
    "FormatError", "HyperbolicVideoRetriever", "LossWeights", "MetricsReport",
    "ModelConfig", "NumericalError", "QueryRecord", "SyntheticCorpusSpec",
    "TrainConfig", "VideoRecord", "evaluate_retrieval", "format_config",
    "gen_synthetic_corpus", "inspect_norms", "load_checkpoint", "load_config",
    "load_corpus", "parse_config_text", "rank_videos", "save_checkpoint",
    "save_corpus", "train", "__version__",
]
