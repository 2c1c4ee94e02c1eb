"""Exception types raised across the kinmo package."""


class KinmoError(Exception):
    """Base class for all kinmo errors."""


class InvalidMotion(KinmoError):
    """Motion features violate the expected layout or invariants."""


class DegenerateRotation(KinmoError):
    """6D rotation with (near-)collinear columns; Gram-Schmidt undefined."""


class IncompleteDecomposition(KinmoError):
    """A kinematic group required for recomposition is missing."""


class InvalidEmbedding(KinmoError):
    """Embedding rows are not unit norm."""


class InvalidWindow(KinmoError):
    """Empty or reversed time window."""


class AnnotationBackendError(KinmoError):
    """Annotation client failed after retries."""

    def __init__(self, message, retries=0):
        super().__init__(message)
        self.retries = retries


class EmptyContext(KinmoError):
    """Cross-attention called with an empty context sequence."""


class DimError(KinmoError):
    """Mismatched latent dimensions."""


class ZeroNormEmbedding(KinmoError):
    """Zero-norm row where a direction is required (cosine undefined)."""


class InvalidTemperature(KinmoError):
    """Non-positive contrastive temperature."""


class InvalidLevel(KinmoError):
    """Unknown semantic level name."""


class TrainingDiverged(KinmoError):
    """Non-finite loss encountered during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class NotFitted(KinmoError):
    """Model used before training/fitting."""


class EmptyMask(KinmoError):
    """Control mask has no active entries; masked mean undefined."""


class FrozenWeightMutation(KinmoError):
    """Weights that must stay frozen were modified."""


class InvalidCovariance(KinmoError):
    """Covariance matrix is asymmetric or not PSD within tolerance."""


class InsufficientSamples(KinmoError):
    """Too few samples for the requested metric."""


class IngestError(KinmoError):
    """Malformed dataset file."""


class ConfigError(KinmoError):
    """Unknown or malformed configuration key, or digest mismatch."""


class CheckpointError(KinmoError):
    """Corrupt or mismatched checkpoint file."""
