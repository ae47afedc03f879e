"""The multinomial deviation-budget constant, exactly and in closed Stirling form.

The exact constant is ``(m!/m^m) * sum_{k in S_{m,M}} prod_j k_j^{k_j}/k_j!``
over all compositions of m into M nonnegative parts; the Stirling form is the
closed upper bound valid for m >= M. Everything is computed in log-space with
log-gamma (m can be thousands in Stirling mode) and accumulated by
log-sum-exp over compositions enumerated in colex order, so repeated calls
are bit-identical.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from riskcert.errors import DimensionMismatchError, EnumerationInfeasibleError
from riskcert.simplex import SimplexVector

# Refuse exact enumeration beyond this many compositions; callers fall back to
# the Stirling form.
MAX_COMPOSITIONS = 10_000_000


class ConstantMode(Enum):
    """Which form of the budget constant to use."""

    EXACT = "exact"
    STIRLING = "stirling"


def composition_count(m: int, M: int) -> int:
    """|S_{m,M}| = C(m+M-1, M-1) by stars and bars."""
    if m < 0 or M < 1:
        raise ValueError(f"need m >= 0 and M >= 1, got m={m}, M={M}")
    return math.comb(m + M - 1, M - 1)


def enumerate_compositions(m: int, M: int) -> Iterator[tuple[int, ...]]:
    """Yield every composition of m into M nonnegative parts exactly once.

    Order is colexicographic (last coordinate most significant), matching the
    accumulation order of the exact constant.
    """
    if m < 0 or M < 1:
        raise ValueError(f"need m >= 0 and M >= 1, got m={m}, M={M}")
    if M == 1:
        yield (m,)
        return
    for k_last in range(m + 1):
        for rest in enumerate_compositions(m - k_last, M - 1):
            yield rest + (k_last,)


def log_multinomial_pmf(k: Sequence[int], r: SimplexVector) -> float:
    """Natural log of Mult(k; m, M, r) with m = sum(k).

    Returns -inf when some r_j = 0 with k_j > 0; a k_j = 0 coordinate
    contributes nothing regardless of r_j (0^0/0! = 1).
    """
    counts = tuple(int(kj) for kj in k)
    if len(counts) != r.dim:
        raise DimensionMismatchError(f"dimension mismatch: {len(counts)} vs {r.dim}")
    if any(kj < 0 for kj in counts):
        raise ValueError(f"counts must be >= 0, got {counts}")
    m = sum(counts)
    out = math.lgamma(m + 1)
    for kj, rj in zip(counts, r.probs):
        if kj == 0:
            continue
        if rj == 0.0:
            return -math.inf
        out += kj * math.log(rj) - math.lgamma(kj + 1)
    return out


def _term(k: int) -> float:
    # k*ln(k) - ln(k!) with the 0*ln(0) = 0 convention.
    if k == 0:
        return 0.0
    return k * math.log(k) - math.lgamma(k + 1)


def _term_vec(k: np.ndarray) -> np.ndarray:
    safe = np.maximum(k, 1)
    return np.where(k > 0, k * np.log(safe) - gammaln(k + 1), 0.0)


def _log_exact_terms(m: int, M: int) -> np.ndarray:
    # Per-composition log of prod_j k_j^{k_j}/k_j!, in colex order.
    if M == 1:
        return np.array([_term(m)])
    if M == 2:
        k_last = np.arange(m + 1)
        return _term_vec(m - k_last) + _term_vec(k_last)
    parts = [_log_exact_terms(m - k_last, M - 1) + _term(k_last) for k_last in range(m + 1)]
    return np.concatenate(parts)


def _logsumexp(terms: np.ndarray) -> float:
    peak = float(np.max(terms))
    return peak + float(np.log(np.sum(np.exp(terms - peak))))


def _check_feasible(n_compositions: int, what: str) -> None:
    if n_compositions > MAX_COMPOSITIONS:
        raise EnumerationInfeasibleError(
            f"{what} needs {n_compositions} compositions, above the cap of {MAX_COMPOSITIONS}"
        )


def log_I_kl_exact(m: int, M: int) -> float:
    """Natural log of the exact budget constant, by full enumeration of S_{m,M}.

    Raises EnumerationInfeasibleError when |S_{m,M}| exceeds MAX_COMPOSITIONS.
    """
    if m < 1 or M < 2:
        raise ValueError(f"need m >= 1 and M >= 2, got m={m}, M={M}")
    _check_feasible(composition_count(m, M), f"log_I_kl_exact(m={m}, M={M})")
    terms = _log_exact_terms(m, M)
    return math.lgamma(m + 1) - m * math.log(m) + _logsumexp(terms)


def log_I_kl_stirling(m: int, M: int) -> float:
    """Natural log of the closed Stirling-form budget constant.

    sqrt(pi) * e^{1/(12m)} * (m/2)^{(M-1)/2}
        * sum_{z=0}^{M-1} C(M,z) * (pi*m)^{-z/2} / Gamma((M-z)/2)

    Only valid for m >= M; smaller m is a hard error, not an extrapolation.
    """
    if M < 2:
        raise ValueError(f"need M >= 2, got M={M}")
    if m < M:
        raise ValueError(f"the Stirling form requires m >= M, got m={m}, M={M}")
    z_terms = np.array(
        [
            math.lgamma(M + 1) - math.lgamma(z + 1) - math.lgamma(M - z + 1)
            - 0.5 * z * math.log(math.pi * m)
            - math.lgamma(0.5 * (M - z))
            for z in range(M)
        ]
    )
    return (
        0.5 * math.log(math.pi)
        + 1.0 / (12.0 * m)
        + 0.5 * (M - 1) * math.log(0.5 * m)
        + _logsumexp(z_terms)
    )


def reciprocal_sqrt_sum_check(m: int, M: int) -> tuple[float, float]:
    """Both sides of the reciprocal-square-root inequality over S^{>0}_{m,M}.

    Returns (exact_sum, bound) where
    exact_sum = sum over strictly positive compositions of prod_j 1/sqrt(k_j)
    and bound = pi^{M/2} * m^{(M-2)/2} / Gamma(M/2). The inequality
    exact_sum <= bound holds for all M >= 1, m >= M, with equality at M = 1.
    """
    if M < 1 or m < M:
        raise ValueError(f"need m >= M >= 1, got m={m}, M={M}")
    _check_feasible(
        composition_count(m - M, M), f"reciprocal_sqrt_sum_check(m={m}, M={M})"
    )
    exact = 0.0
    for k in enumerate_compositions(m - M, M):
        prod = 1.0
        for kj in k:
            prod /= math.sqrt(kj + 1)
        exact += prod
    bound = math.exp(
        0.5 * M * math.log(math.pi) + 0.5 * (M - 2) * math.log(m) - math.lgamma(0.5 * M)
    )
    return exact, bound
