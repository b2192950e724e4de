"""Optimal stopping of Gauss-Markov bridges with a randomised pinning point.

The payoff is the process itself, ``sup_tau E[X_tau]``, for a Gauss-Markov
process forced to end at a random terminal value with a given law.  Two
solvers are provided: backward-induction Monte Carlo on a grid, and a Picard
scheme for the integral equation available under Dirac and Gaussian terminal
laws.
"""

__version__ = "0.1.0"

from .curves import CoefficientCurve
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DegenerateIntervalError,
    ImpossibleStateError,
    IndeterminateOrderError,
    PreconditionError,
)
from .gmp_kernel import GmpModel, bridge_step, mean, phi, variance
from .mc_solver import McStoppingSolver, default_grid, extract_boundary, policy_value, solve
from .pathsim import simulate
from .priors import (
    DiracPrior,
    DiscretePrior,
    GaussianPrior,
    TabulatedPrior,
    TruncatedGaussianPrior,
    lr_order_leq,
    posterior,
)
from .timechange import TimeChange, build
from .volterra import VolterraBoundary, picard_solve

__all__ = [
    "CoefficientCurve",
    "ConfigurationError",
    "ConvergenceError",
    "DegenerateIntervalError",
    "DiracPrior",
    "DiscretePrior",
    "GaussianPrior",
    "GmpModel",
    "ImpossibleStateError",
    "IndeterminateOrderError",
    "McStoppingSolver",
    "PreconditionError",
    "TabulatedPrior",
    "TimeChange",
    "TruncatedGaussianPrior",
    "VolterraBoundary",
    "bridge_step",
    "build",
    "default_grid",
    "extract_boundary",
    "lr_order_leq",
    "mean",
    "phi",
    "picard_solve",
    "policy_value",
    "posterior",
    "simulate",
    "solve",
    "variance",
]
