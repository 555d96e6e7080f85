"""Exception types shared across the package.

Each failure mode the library promises to detect gets its own class so
callers (and tests) can tell them apart without parsing messages.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class NonFiniteError(ValueError):
    """A NaN or Inf showed up where only finite values are allowed."""


class DegenerateVectorError(ValueError):
    """Cosine similarity was asked for a vector with (near-)zero norm."""


class DoubleBackwardError(RuntimeError):
    """backward() was called twice on the same loss without a gradient reset."""


class MissingGradientError(RuntimeError):
    """An optimizer step was requested before any gradients were accumulated."""


class GradientFlowError(RuntimeError):
    """A trainable parameter received an identically-zero gradient on a
    generic batch, indicating a dead component in the encoder."""


class CheckpointFormatError(ValueError):
    """A binary checkpoint is malformed (bad magic, truncated payload, ...)."""


class ManifestVersionError(ValueError):
    """A zoo manifest declares a format version this code does not read."""


class MissingCheckpointError(FileNotFoundError):
    """A zoo manifest points at a checkpoint file that does not exist."""


class DigestMismatchError(ValueError):
    """A regenerated domain spec does not match the digest stored in the manifest."""


class UnderTrainedError(RuntimeError):
    """A zoo classifier failed to reach the required validation accuracy."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


class ProbePoolUnsuitableError(RuntimeError):
    """A probe pool covers no category of the model at the confidence threshold."""


class BoundaryNonConvergenceError(RuntimeError):
    """Bisection ran out of iterations before the confidence gap closed."""

    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


class UncoveredModelError(RuntimeError):
    """Training was started with zoo models that have no knowledge graph set."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite; carries step diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConstantInputError(ValueError):
    """Correlation of a constant vector is undefined; refused rather than NaN."""


class LabelMappingError(ValueError):
    """A task label cannot be mapped onto the model's category range."""


class ConfigError(ValueError):
    """A run configuration contains unknown keys or invalid values."""
