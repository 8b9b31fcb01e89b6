"""Exception hierarchy shared by all qfactor modules."""


class QfactorError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QfactorError):
    """An argument lies outside its mathematical domain."""


class DimensionError(QfactorError):
    """Array shapes do not conform, or a panel is too small."""


class BalancedPanelError(QfactorError):
    """The input panel has missing cells; only balanced panels are accepted."""


class ParseError(QfactorError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateColumnError(QfactorError):
    """A unit has zero variance and cannot be standardized."""

    def __init__(self, message, unit=None):
        super().__init__(message)
        self.unit = unit


class RankError(QfactorError):
    """A regressor matrix is rank deficient."""


class ConvergenceError(QfactorError):
    """An iterative solver failed to converge; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SymmetryError(QfactorError):
    """A matrix expected to be symmetric is not."""


class SingularityError(QfactorError):
    """A matrix required to be invertible is numerically singular."""


class ZeroVolatilityError(QfactorError):
    """All residuals vanish; the volatility proxy is degenerate."""


class SingularDensityError(QfactorError):
    """A density-weighted moment matrix is singular (no residuals in the
    kernel window, or the window weight mass is numerically zero)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SpecError(QfactorError):
    """A simulation design specification is invalid."""
