"""
Birth-death-immigration process on a star graph.

Transient law (closed series, Volterra equation, cycle convolution, Monte
Carlo), limit law for lambda < mu, and the gamma diffusion approximation.
"""

from .asymptotics import AsymptoticLaw, limit_law, limit_moments, theta_d
from .combinatorics import PermutationComponentTable, check_routes, t_closed_form, t_table_recursive
from .diffusion import DiffusionParams, GammaDensity, stationary_density, transient_density
from .errors import (
    DomainError,
    IntegralityError,
    NonConvergence,
    SimulationOverflow,
    SingularKernel,
    StarBDIError,
)
from .model import ModelParams, Regime, StarState, empirical_marginal, simulate_path
from .specfun import SeriesControl, hyp2f1, polylog
from .transient import TransientLaw, TransientMethod, eval_F, solve_volterra_p0, transient_law

__all__ = [
    "AsymptoticLaw",
    "DiffusionParams",
    "DomainError",
    "GammaDensity",
    "IntegralityError",
    "ModelParams",
    "NonConvergence",
    "PermutationComponentTable",
    "Regime",
    "SeriesControl",
    "SimulationOverflow",
    "SingularKernel",
    "StarBDIError",
    "StarState",
    "TransientLaw",
    "TransientMethod",
    "check_routes",
    "empirical_marginal",
    "eval_F",
    "hyp2f1",
    "limit_law",
    "limit_moments",
    "polylog",
    "simulate_path",
    "solve_volterra_p0",
    "stationary_density",
    "t_closed_form",
    "t_table_recursive",
    "theta_d",
    "transient_density",
    "transient_law",
]
