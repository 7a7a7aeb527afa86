"""Quasi-maximum likelihood estimation with multivariate Laplace innovations.

Causal processes ``X_t = M_theta(past) zeta_t + f_theta(past)`` driven by
standardized multivariate Laplace noise, the Bessel-kernel quasi-likelihood
of that noise law, a multistart simplex estimator, and a Monte Carlo harness
for the consistency of the estimate.
"""

__version__ = "0.1.0"

from alqmle.bessel import bessel_k, log_bessel_k
from alqmle.estimator import OptimizerConfig, estimate, estimate_consistency_path
from alqmle.innovations import InnovationSpec, al_log_density, sample_innovations
from alqmle.likelihood import full_loglik, truncated_loglik
from alqmle.models import (
    ARARCHFamily, Box, DiagonalARCHFamily, VARFamily, make_family, simulate_trajectory,
    theta2_membership)
from alqmle.seeds import derive_seed

__all__ = [
    "__version__",
    "bessel_k",
    "log_bessel_k",
    "InnovationSpec",
    "sample_innovations",
    "al_log_density",
    "Box",
    "VARFamily",
    "DiagonalARCHFamily",
    "ARARCHFamily",
    "make_family",
    "theta2_membership",
    "simulate_trajectory",
    "full_loglik",
    "truncated_loglik",
    "OptimizerConfig",
    "estimate",
    "estimate_consistency_path",
    "derive_seed",
]
