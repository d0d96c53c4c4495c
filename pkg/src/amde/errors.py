"""Exception hierarchy shared by every module."""


class AmdeError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(AmdeError, ValueError):
    pass


class ShapeError(InvalidArgumentError):
    pass


class FormatError(AmdeError):
    """Tensor file has a bad magic, version, dtype or rank."""


class TruncationError(FormatError):
    """Tensor file ended before its declared payload."""


class DegenerateInputError(InvalidArgumentError):
    """A map is (numerically) constant where a spread is required."""


class ConfigError(AmdeError):
    pass


class StateError(AmdeError, RuntimeError):
    pass


class InvariantViolation(AmdeError, AssertionError):
    """A runtime self-check failed; the CLI maps this to exit code 2."""


class EmptyInputError(InvalidArgumentError):
    """No valid pixels (or no samples) to compute a statistic over."""
