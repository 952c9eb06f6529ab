"""Multistream dilated-convolution acoustic model, built from scratch.

Parallel stacks of factorized time-delay layers run at stream-specific
dilation rates over a shared stem; stream embeddings are concatenated,
normalized, and projected to framewise logits.  The package also ships
the feature frontend, a desk-scale trainer, architecture analyzers, and
a benchmarking CLI.
"""

from .errors import (
    ConfigError,
    ContextError,
    MscnnError,
    ShapeError,
    StaleCacheError,
    TrainingError,
)
from .frontend import SpecAugmentPolicy, Spectrogram, logmel, spec_augment
from .model import (
    Model,
    ModelConfig,
    StreamSpec,
    build_model,
    check_grid_alignment,
    count_parameters,
    receptive_field,
)
from .tdnnf import TdnnfLayer, constrain_semi_orthogonal, semi_orthogonal_defect
from .trainer import TrainConfig, cross_entropy, evaluate, lr_at, synth_dataset, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContextError",
    "MscnnError",
    "Model",
    "ModelConfig",
    "ShapeError",
    "SpecAugmentPolicy",
    "Spectrogram",
    "StaleCacheError",
    "StreamSpec",
    "TdnnfLayer",
    "TrainConfig",
    "TrainingError",
    "build_model",
    "check_grid_alignment",
    "constrain_semi_orthogonal",
    "count_parameters",
    "cross_entropy",
    "evaluate",
    "logmel",
    "lr_at",
    "receptive_field",
    "semi_orthogonal_defect",
    "spec_augment",
    "synth_dataset",
    "train",
]
