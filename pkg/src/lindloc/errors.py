"""Exception hierarchy.

Everything numerical raises a subclass of :class:`LindlocError` so the CLI can
map it onto exit code 3 with a diagnostic payload.
"""


class LindlocError(Exception):
    """Base class; ``details`` is serialised into CLI diagnostics."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class SizeLimitError(LindlocError, ValueError):
    pass


class UnitalityError(LindlocError, ValueError):
    def __init__(self, residual, message=None):
        super().__init__(message or f"generator is not unital: residual {residual:.3e}", residual=residual)
        self.residual = residual


class NonCommutingError(LindlocError, ValueError):
    def __init__(self, pair, residual):
        super().__init__(
            f"L1 terms {pair[0]} and {pair[1]} do not commute (residual {residual:.3e})",
            pair=list(pair),
            residual=residual,
        )
        self.pair = pair
        self.residual = residual


class LeakageError(LindlocError, ValueError):
    """An operator has weight outside the span of the convex basis."""

    def __init__(self, leakage, message=None, **details):
        super().__init__(message or f"weight {leakage:.3e} outside the basis span", leakage=leakage, **details)
        self.leakage = leakage


class NoGapError(LindlocError, ValueError):
    pass


class EvolutionError(LindlocError, RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message, residual=residual)
        self.residual = residual


class EnumerationBudgetError(LindlocError, RuntimeError):
    pass


class CoverageError(LindlocError, ValueError):
    pass


class MissingParameterError(LindlocError, ValueError):
    pass


class QuadratureError(LindlocError, RuntimeError):
    pass
