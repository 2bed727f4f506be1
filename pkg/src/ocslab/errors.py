"""Exception types shared across the package."""


class OcsLabError(Exception):
    """Base class for every error raised by ocslab."""


class ConvergenceError(OcsLabError):
    """An iterative routine hit its iteration limit."""


class NumericError(OcsLabError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid number."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(NumericError):
    """Training loss blew up; ``step`` is the offending step."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class InfiniteDivergenceError(NumericError):
    """KL divergence is infinite (prediction puts mass where the reference has none)."""


class DegenerateError(OcsLabError, ValueError):
    """Input is degenerate for the requested statistic (zero variance, zero norm...)."""


class InsufficientDataError(OcsLabError, ValueError):
    pass


class NotFittedError(OcsLabError, ValueError):
    """A network does not separate its training data."""


class FormatError(OcsLabError, ValueError):
    """Malformed binary file. ``field`` names what was being read, ``offset`` where."""

    def __init__(self, message, field=None, offset=None):
        super().__init__(message)
        self.field = field
        self.offset = offset


class SweepError(OcsLabError):
    """A sweep stage failed; ``seed`` and ``level`` locate the work item."""

    def __init__(self, message, seed=None, level=None):
        super().__init__(message)
        self.seed = seed
        self.level = level


class ConfigError(OcsLabError, ValueError):
    pass
