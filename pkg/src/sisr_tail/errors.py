"""Exception hierarchy shared by the numerical and simulation layers."""


class SisrError(Exception):
    """Base class for all package errors."""


class NumericalError(SisrError):
    """Failures of an iterative numerical routine (CLI exit code 3)."""


class NonConvergence(NumericalError):
    pass


class DomainError(NumericalError):
    """An argument or iterate left the domain where a function is defined."""


class BracketError(NumericalError):
    pass


class InfeasibleEvent(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    """Resampling weights underflowed; usually a schedule/model mismatch."""


class PopulationCollapse(NumericalError):
    pass


class ConfigError(SisrError):
    """Invalid experiment configuration (CLI exit code 2)."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
