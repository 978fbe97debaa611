"""Codon-level alignment and fusion of biological sequence embedding tracks."""

from .alignment import AlignedBundle, EmbeddingTrack, Modality, align_bundle
from .autodiff import Tensor, grad_check
from .fusion import FusionResult, attention_entropy
from .metrics import MetricsReport, accuracy, spearman
from .models import STRATEGIES, FusionModel, ModelConfig
from .trackio import DatasetManifest, SyntheticSpec, make_synthetic, read_track, write_track
from .training import TrainConfig, TrainRun, train

__version__ = "0.1.0"

__all__ = [
    "AlignedBundle", "EmbeddingTrack", "Modality", "align_bundle",
    "Tensor", "grad_check",
    "FusionResult", "attention_entropy",
    "MetricsReport", "accuracy", "spearman",
    "STRATEGIES", "FusionModel", "ModelConfig",
    "DatasetManifest", "SyntheticSpec", "make_synthetic", "read_track", "write_track",
    "TrainConfig", "TrainRun", "train",
    "__version__",
]
