class ConfigurationError(ValueError):
    """Shapes, channel counts or settings that cannot work together."""


class AlignmentError(ConfigurationError):
    """Two feature maps that must share spatial dims do not."""


class DegenerateVarianceError(ValueError):
    """Batch statistics computed over a single element."""


class GradCheckError(RuntimeError):
    """A finite-difference probe hit a non-finite value."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer received a NaN/inf gradient."""


class TrainingDiverged(RuntimeError):
    """A loss became non-finite during training."""


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint / tensor archive."""


class EmbeddingError(RuntimeError):
    """A metric embedding backend failed on its input."""
