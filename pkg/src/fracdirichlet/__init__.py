"""Space-time fractional Dirichlet problems on an interval.

Three solution paths cross-check each other: implicit time stepping of the
discretised killed generator, subordination quadrature against the
inverse-stable-subordinator density, and Monte Carlo of killed stable paths.
"""

from __future__ import annotations

from .fracops import (
    GeneratorMatrix,
    Grid1D,
    StableOperatorSpec,
    assemble_killed_generator,
    grunwald_weights,
    rl_derivative,
    rl_integral,
)
from .problems import REGISTRY, BenchmarkProblem, get_problem
from .solvers import (
    ForcingField,
    SolutionField,
    TimeGrid,
    duhamel_solution,
    eigen_heat_solution,
    implicit_euler_solve,
    l1_caputo_solve,
    subordination_inhomogeneous,
    subordination_solve,
)
from .specfun import (
    DomainError,
    PoleError,
    gamma_ratio,
    inv_subordinator_density,
    mittag_leffler,
    stable_density,
)
from .stochastic import MCConfig, MCEstimate, RngStream, mc_solution

__version__ = "0.1.0"

__all__ = [
    "BenchmarkProblem",
    "DomainError",
    "ForcingField",
    "GeneratorMatrix",
    "Grid1D",
    "MCConfig",
    "MCEstimate",
    "PoleError",
    "REGISTRY",
    "RngStream",
    "SolutionField",
    "StableOperatorSpec",
    "TimeGrid",
    "assemble_killed_generator",
    "duhamel_solution",
    "eigen_heat_solution",
    "gamma_ratio",
    "get_problem",
    "grunwald_weights",
    "implicit_euler_solve",
    "inv_subordinator_density",
    "l1_caputo_solve",
    "mc_solution",
    "mittag_leffler",
    "rl_derivative",
    "rl_integral",
    "stable_density",
    "subordination_inhomogeneous",
    "subordination_solve",
]
