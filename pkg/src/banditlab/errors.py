"""Exception types shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and any other
:class:`BanditLabError` (or unexpected exception) to exit code 3.
"""


class BanditLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BanditLabError):
    """A configuration is malformed, inconsistent, or unsupported.

    Raised before any experiment round runs: bad dimensions, unknown
    policy/environment names, incompatible policy/environment pairs,
    out-of-range parameters, unparseable config files.
    """


class SingularSystemError(BanditLabError):
    """A linear system has no unique solution (rank-deficient, no ridge)."""


class ConvergenceError(BanditLabError):
    """An iterative solver exhausted its iteration budget.

    Carries diagnostic state so callers can report how close it got.
    """

    def __init__(self, message: str, gradient_norm: float | None = None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
