"""Risk certificates for discretised error types.

A library and CLI for certifying the per-type and loss-weighted risks of a
stochastic classifier from its empirical error-type frequencies: the
multinomial-kl deviation budget, the tightest per-type intervals it implies,
the total-risk bound obtained by a constrained kl-inverse, and a training
loop that minimises that bound for a diagonal-Gaussian posterior.
"""

from riskcert.simplex import (
    LossVector,
    SimplexVector,
    hellinger,
    hellinger_bound_from_tv,
    kl_div,
    scalar_kl,
    total_risk,
    total_variation,
    tv_bound_from_kl_budget,
)
from riskcert.constants import (
    ConstantMode,
    composition_count,
    enumerate_compositions,
    log_I_kl_exact,
    log_I_kl_stirling,
    log_multinomial_pmf,
    reciprocal_sqrt_sum_check,
)
from riskcert.klinverse import (
    TiltedSolution,
    brute_force_kl_inverse,
    grad_f_star,
    kl_inverse_total,
    phi,
    scalar_kl_inverse_lower,
    scalar_kl_inverse_upper,
    solve_mu_star,
)
from riskcert.certificates import (
    BoundCertificate,
    PacBayesInputs,
    bound_budget,
    build_certificate,
    per_type_intervals,
    recompute_certificate,
    resolve_constant_mode,
    smooth_risk,
    total_risk_bound,
    verify_certificate,
)
from riskcert.errors import (
    BoundaryRiskError,
    ConvergenceError,
    DimensionMismatchError,
    EnumerationInfeasibleError,
    NonFiniteGradientError,
)

__version__ = "0.1.0"

__all__ = [
    "BoundCertificate",
    "BoundaryRiskError",
    "ConstantMode",
    "ConvergenceError",
    "DimensionMismatchError",
    "EnumerationInfeasibleError",
    "LossVector",
    "NonFiniteGradientError",
    "PacBayesInputs",
    "SimplexVector",
    "TiltedSolution",
    "bound_budget",
    "brute_force_kl_inverse",
    "build_certificate",
    "composition_count",
    "enumerate_compositions",
    "grad_f_star",
    "hellinger",
    "hellinger_bound_from_tv",
    "kl_div",
    "kl_inverse_total",
    "log_I_kl_exact",
    "log_I_kl_stirling",
    "log_multinomial_pmf",
    "per_type_intervals",
    "phi",
    "reciprocal_sqrt_sum_check",
    "recompute_certificate",
    "resolve_constant_mode",
    "scalar_kl",
    "scalar_kl_inverse_lower",
    "scalar_kl_inverse_upper",
    "smooth_risk",
    "solve_mu_star",
    "total_risk",
    "total_risk_bound",
    "total_variation",
    "tv_bound_from_kl_budget",
    "verify_certificate",
]
