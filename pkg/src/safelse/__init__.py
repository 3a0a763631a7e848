"""SoftPlus approximation of log-partition functions.

Replaces ``log E e^phi`` by a SoftPlus variational form that never
exponentiates large numbers, and uses it in stochastic solvers for
entropy-regularized optimal transport and distributionally robust
optimization.
"""

from .corefn import (
    FloatOverflowError,
    Rho,
    f_rho,
    f_rho_second,
    f_rho_star,
    logistic,
    logsumexp,
    sigma_rho,
    softplus_stable,
)
from .measure import DiscreteMeasure, kl_divergence, optimal_tilt, safe_kl_divergence
from .partition import (
    cvar,
    log_partition,
    safe_log_partition,
    safe_logsumexp,
    solve_alpha,
)

__version__ = "0.1.0"

__all__ = [
    "FloatOverflowError",
    "Rho",
    "f_rho",
    "f_rho_second",
    "f_rho_star",
    "logistic",
    "logsumexp",
    "sigma_rho",
    "softplus_stable",
    "DiscreteMeasure",
    "kl_divergence",
    "safe_kl_divergence",
    "optimal_tilt",
    "cvar",
    "log_partition",
    "safe_log_partition",
    "safe_logsumexp",
    "solve_alpha",
]
