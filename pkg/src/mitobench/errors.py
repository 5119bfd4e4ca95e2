"""Exception types shared across the package."""


class MitobenchError(Exception):
    """Base class for all package errors."""


class ValidationError(MitobenchError, ValueError):
    """A precondition or invariant on user-supplied data failed.

    The message names the offending field or record so callers can fix
    their input. CLI maps this to exit code 2.
    """


class RegistryError(ValidationError):
    """Backbone registry misuse: duplicate name or unknown entry."""


class UnsupportedModeError(MitobenchError, RuntimeError):
    """Operation called on a model/architecture that cannot support it."""


class IntegrityError(MitobenchError, RuntimeError):
    """Stored bytes do not match their declared checksum or schema."""


class TrainingDiverged(MitobenchError, RuntimeError):
    """Loss became non-finite during training. Carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
