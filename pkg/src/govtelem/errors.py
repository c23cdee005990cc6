"""Exception hierarchy shared across the package."""


class GovTelemError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GovTelemError):
    """Invalid or inconsistent configuration (empty policy set, bad sink, ...)."""


class RuleCompileError(GovTelemError):
    """A declarative rule references an unknown field or a type-incompatible operator."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class LineageResolutionError(GovTelemError):
    """A lineage agent cannot be resolved against the agent directory.

    The enforcement bus treats this as an internal stage failure and applies
    the risk tier's fail mode.
    """

    def __init__(self, message: str, agent: str | None = None):
        super().__init__(message)
        self.agent = agent


class SigningError(GovTelemError):
    """Signing failed (missing or mismatched key)."""


class SerializationError(GovTelemError):
    """Event cannot be canonically serialized (e.g. non-finite real)."""


class ScoringError(GovTelemError):
    """Sequence scoring failed for a structural reason, distinct from low likelihood."""


class TrainingError(GovTelemError):
    """Model training rejected degenerate input."""


class CalibrationError(GovTelemError):
    """Threshold calibration has too little data to be meaningful."""


class AuditError(GovTelemError):
    """Audit log append or parse failure."""
