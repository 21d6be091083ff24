# core/exceptions.py


class CropwatchError(Exception):
    """Base class for every error raised by cropwatch code."""


class ValidationError(CropwatchError, ValueError):
    """Input violates a documented precondition or invariant."""


class DimensionError(CropwatchError, ValueError):
    """Shapes of tensors or parameter blocks do not line up."""


class StateError(CropwatchError, RuntimeError):
    """Operation called in the wrong lifecycle state (e.g. untrained model)."""


class DigestMismatchError(ValidationError):
    """An artifact's recorded lineage does not match the data it is used with."""


class ArtifactVersionError(ValidationError):
    """Serialized artifact has an unknown format or version."""
