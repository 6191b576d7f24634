class KarlError(Exception):
    """Base class for all KARL errors."""


class ConfigError(KarlError):
    """Invalid or missing configuration."""


class InputError(KarlError, ValueError):
    """A call received data that violates its shape or budget contract."""


class DataError(KarlError):
    """A dataset could not be read or is empty."""


class CheckpointMismatch(KarlError):
    """Checkpoint format, kind or config digest does not match the runtime config."""


class EvaluationError(KarlError):
    """An evaluation protocol ran a different number of passes than it promises."""
