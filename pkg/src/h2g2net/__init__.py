"""H2G2-Net: a two-level graph network over multi-modal physiological signals
that learns its own modality-level graph structure."""

__version__ = "0.1.0"

from .graph import DatasetSchema, HierarchicalSample, ModalitySchema, default_schema
from .layers import ModelConfig, ModelParams, init_params, model_forward
from .training import TrainConfig, evaluate, loso_evaluate, train

__all__ = [
    "DatasetSchema",
    "HierarchicalSample",
    "ModalitySchema",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "default_schema",
    "evaluate",
    "init_params",
    "loso_evaluate",
    "model_forward",
    "train",
]
