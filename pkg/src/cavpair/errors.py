"""Exception types shared across the package.

Everything a caller can trigger by passing bad input derives from
:class:`PreconditionError` (itself a ``ValueError``); the CLI maps that family
to one exit status.
"""


class PreconditionError(ValueError):
    """Input violates an operation's precondition."""


class RangeError(PreconditionError):
    """A parameter lies outside a model's validity range."""

    def __init__(self, parameter, value, valid):
        self.parameter = parameter
        self.value = value
        self.valid = valid
        super().__init__(f"{parameter}={value!r} outside valid range {valid}")


class InvariantError(PreconditionError):
    """A physical or structural invariant is violated (e.g. energy conservation)."""


class RootNotBracketedError(PreconditionError):
    """No sign change inside the requested bracket."""


class ResolutionError(PreconditionError):
    """A sampled grid is too coarse for the requested operation."""

    def __init__(self, message, required_step):
        self.required_step = required_step
        super().__init__(f"{message}; required step <= {required_step:.6g} s")


class ShapeError(PreconditionError):
    """A trace or histogram does not have the shape an analysis expects."""


class UndefinedSNRError(PreconditionError):
    """Minimum coincidence count is zero; extend the accumulation time."""


class ConfigError(Exception):
    """Malformed or inconsistent configuration file."""


class UnitMismatchError(TypeError):
    """Two rates with different unit tags were combined."""
