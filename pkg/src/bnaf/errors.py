"""Exception hierarchy shared by every module."""


class BnafError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BnafError, ValueError):
    """Invalid dimensions, unknown identifiers or out-of-range settings."""


class DimensionError(BnafError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(BnafError, ValueError):
    """An input lies outside the domain of an operation (e.g. log of a non-positive value)."""


class ContractError(BnafError):
    """A caller violated an API precondition."""


class NumericalError(BnafError, ArithmeticError):
    """A non-finite value appeared where finite values are guaranteed.

    ``layer`` is the index of the offending affine layer when raised inside a
    flow, ``batch_index`` the first offending example when raised by a loss.
    """

    def __init__(self, message, layer=None, batch_index=None):
        super().__init__(message)
        self.layer = layer
        self.batch_index = batch_index


class RangeError(BnafError):
    """Bisection could not bracket the target value."""


class ConvergenceError(BnafError):
    """An iterative procedure did not reach its tolerance.

    ``rows`` lists the indices of inputs that failed.
    """

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class CheckpointError(BnafError):
    """A checkpoint file is missing, truncated or malformed."""
