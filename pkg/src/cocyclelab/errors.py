"""Error types shared across the package.

Validation problems (bad arguments, malformed configs, non-invertible
input) are ValueError subclasses; numerical diagnostics that indicate a
computation did not reach its advertised accuracy are RuntimeError
subclasses so callers can tell the two apart (the CLI maps them to
different exit statuses).
"""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (non-finite entries, bad shape...)."""


class NotInvertibleError(InvalidInputError):
    """Matrix is singular or too ill-conditioned to invert reliably."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class UnsupportedDimensionError(InvalidInputError):
    """Operation only implemented for a specific dimension (gridding is d=2 only)."""


class DegenerateInputError(InvalidInputError):
    """Estimate requested at a degenerate point (e.g. normalizing by zero mass)."""


class ConfigError(InvalidInputError):
    """Experiment config failed validation (unknown key, missing seed, bad value)."""


class DiagnosticError(RuntimeError):
    """Base for runtime diagnostics: the computation ran but failed its own checks."""


class NonConvergenceError(DiagnosticError):
    """Iteration hit its cap without meeting the convergence criterion."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleConditioningError(DiagnosticError):
    """Conditional sampling acceptance rate too low to finish."""

    def __init__(self, message, rate=None):
        super().__init__(message)
        self.rate = rate
