"""Symmetric Levy processes perturbed by a delta potential.

Spectral evaluation of the resolvent profile, the principal eigenvalue, the
perturbed semigroup kernel and its normalizer, Monte Carlo Feynman-Kac
estimators, and the penalized path measures built from them.
"""

from .delta_semigroup import (
    ContourConfig,
    DeltaPotential,
    Z_mu,
    endpoint_l1_bound,
    endpoint_tv_bound,
    p_mu_kernel,
    p_mu_matrix,
    pi_nu_density,
    resolvent_mu_apply,
    rho_mu,
)
from .errors import DeltaFKError, NumericalFailure, ValidationError
from .grids import Grid, SampledFunction
from .levy_models import LevyModel, local_time_exists
from .pathsim import MCEstimate, PathConfig, feynman_kac_mc, simulate_path
from .penalization import PenalizedSpec, q_expectation_mc, q_fd_density, zeta_chain
from .quadrature import QuadratureConfig
from .spectral_core import nu_solve, psi_eval, psi_l1_norm, resolvent_free_apply

__version__ = "0.1.0"

__all__ = [
    "ContourConfig", "DeltaPotential", "Z_mu", "endpoint_l1_bound", "endpoint_tv_bound",
    "p_mu_kernel", "p_mu_matrix", "pi_nu_density", "resolvent_mu_apply", "rho_mu",
    "DeltaFKError", "NumericalFailure", "ValidationError", "Grid", "SampledFunction",
    "LevyModel", "local_time_exists", "MCEstimate", "PathConfig", "feynman_kac_mc",
    "simulate_path", "PenalizedSpec", "q_expectation_mc", "q_fd_density", "zeta_chain",
    "QuadratureConfig", "nu_solve", "psi_eval", "psi_l1_norm", "resolvent_free_apply",
]
