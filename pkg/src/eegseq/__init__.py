"""Small numpy-only deep-learning stack for windowed EEG classification.

Submodules: ``tensor`` (reverse-mode autodiff), ``layers``, ``models``,
``data``, ``metrics``, ``training``, ``checkpoint``, ``report`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EegSeqError,
    MetricError,
    ParseError,
    UnsupportedOperationError,
)
from .models import FAMILIES, Model, ModelConfig, build, count_parameters, shipped_config
from .tensor import Parameter, Tape, Tensor, backward, no_grad

__all__ = [
    "__version__",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EegSeqError",
    "MetricError",
    "ParseError",
    "UnsupportedOperationError",
    "FAMILIES",
    "Model",
    "ModelConfig",
    "build",
    "count_parameters",
    "shipped_config",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "no_grad",
]
