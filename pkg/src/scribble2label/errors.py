class Scribble2LabelError(Exception):
    """Base class for all package errors."""


class InvalidInputError(Scribble2LabelError, ValueError):
    pass


class PreconditionError(Scribble2LabelError, RuntimeError):
    pass


class FormatError(Scribble2LabelError, ValueError):
    pass


class ConfigError(Scribble2LabelError, ValueError):
    pass


class DataError(Scribble2LabelError):
    pass


class EnsembleConsistencyError(Scribble2LabelError, RuntimeError):
    pass


class GenerationError(Scribble2LabelError, RuntimeError):
    pass


class TrainingError(Scribble2LabelError, RuntimeError):
    pass
