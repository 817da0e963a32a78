class DenseCountError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(DenseCountError, ValueError):
    pass


class InvalidParameter(DenseCountError, ValueError):
    pass


class InvalidInput(DenseCountError, ValueError):
    pass


class PackingFailure(DenseCountError, RuntimeError):
    pass


class DegenerateSplit(DenseCountError, ValueError):
    pass


class Undefined(DenseCountError, ValueError):
    """A metric has no defined value for the given inputs."""
