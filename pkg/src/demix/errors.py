"""Exception hierarchy shared by every module."""


class DemixError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(DemixError, ValueError):
    pass


class InvalidShapeError(DemixError, ValueError):
    pass


class InvalidRadiusError(DemixError, ValueError):
    pass


class InvalidSparsityError(DemixError, ValueError):
    pass


class InvalidParameterError(DemixError, ValueError):
    pass


class RankDeficiencyError(DemixError, ValueError):
    def __init__(self, message, numerical_rank):
        super().__init__(message)
        self.numerical_rank = numerical_rank


class UnsupportedVariantError(DemixError, TypeError):
    pass


class UnsupportedAnchorError(DemixError, ValueError):
    pass


class UnsupportedConeError(DemixError, ValueError):
    pass


class PreconditionError(DemixError, ValueError):
    pass


class NonConvergenceError(DemixError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
