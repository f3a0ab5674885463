"""Exception hierarchy shared by all herdbif modules."""


class HerdbifError(Exception):
    """Base class for every error raised by the package."""


class NumericalError(HerdbifError):
    """A computation failed for numerical reasons (CLI exit code 2)."""


class InfeasibleEquilibrium(HerdbifError):
    """The interior equilibrium does not exist for the given parameters."""


class NonPositiveState(NumericalError):
    """A state component fell below the positivity tolerance during integration."""


class NonFinite(NumericalError):
    """Integration produced a non-finite value."""


class InvalidBracket(NumericalError):
    """Bisection endpoints do not straddle the transition being located."""


class NoCrossing(NumericalError):
    """The characteristic function has no root on the positive imaginary axis."""


class DegenerateDesign(NumericalError):
    """A rank column of a sensitivity design is constant."""


class ConsistencyError(NumericalError):
    """Analytic and finite-difference derivatives disagree."""
