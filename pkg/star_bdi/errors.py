"""
Exception hierarchy shared by all star_bdi modules.
"""

from typing import Optional


class StarBDIError(Exception):
    """Base class; `diagnostic` is the message shown by the CLI."""

    def __init__(self, diagnostic: str):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic


class DomainError(StarBDIError, ValueError):
    """Argument outside the domain or convergence radius of a formula."""


class NonConvergence(StarBDIError, RuntimeError):
    """A series or convolution hit its term cap before the stopping rule."""

    def __init__(self, diagnostic: str, terms: int = 0, last_term: Optional[float] = None):
        super().__init__(diagnostic)
        self.terms = terms
        self.last_term = last_term


class IntegralityError(StarBDIError, ArithmeticError):
    """An exact closed form produced a non-integral value."""


class SingularKernel(StarBDIError, RuntimeError):
    """The Volterra kernel is not finite on the grid."""


class SimulationOverflow(StarBDIError, OverflowError):
    """A simulated level exceeded the configured overflow guard."""
