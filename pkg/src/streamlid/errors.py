"""Exception hierarchy. CLI exit codes are derived from these classes."""


class StreamLidError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StreamLidError, ValueError):
    """Input data violates an operation's precondition."""


class DegenerateDataError(InvalidInputError):
    """Training data cannot identify the model (e.g. a single class)."""


class EmptyStreamError(InvalidInputError):
    """Pooled output requested before any step was accumulated."""


class ConfigurationError(StreamLidError, ValueError):
    """Parameters or config values are inconsistent with each other."""


class UsageError(StreamLidError, RuntimeError):
    """API used out of order, e.g. stepping an uninitialized state."""


class ModelFormatError(StreamLidError):
    """Base class for model-container load failures."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class TensorNotFoundError(ModelFormatError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
