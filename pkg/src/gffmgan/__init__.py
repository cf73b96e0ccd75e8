"""GAN generators with an auxiliary branch fused through gated feature fusion modules."""

from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigurationError,
    DegenerateVarianceError,
    EmbeddingError,
    GradCheckError,
    NonFiniteGradientError,
    TrainingDiverged,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "CheckpointError",
    "ConfigurationError",
    "DegenerateVarianceError",
    "EmbeddingError",
    "GradCheckError",
    "NonFiniteGradientError",
    "TrainingDiverged",
    "__version__",
]
