"""Exact arithmetic on the probability simplex.

All divergences are in nats. The kl conventions ``0*log(0/x) = 0`` and
``x*log(x/0) = +inf`` are applied with explicit branches, never via platform
``log(0)`` semantics, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from riskcert.errors import DimensionMismatchError

# Construction renormalises sums within this deviation and rejects anything worse.
SUM_TOLERANCE = 1e-9
# Slack for entries that drift just outside [0, 1] through floating-point averaging.
ENTRY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SimplexVector:
    """A point of the M-dimensional probability simplex, M >= 2.

    Entries must lie in [0, 1] and sum to 1. Inputs whose sum deviates from 1
    by at most ``SUM_TOLERANCE`` are renormalised (empirical risks come from
    floating-point averages); larger deviations are rejected.
    """

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(x) for x in self.probs)
        if len(probs) < 2:
            raise ValueError(f"simplex dimension must be >= 2, got {len(probs)}")
        for x in probs:
            if not math.isfinite(x):
                raise ValueError(f"simplex entry is not finite: {x!r}")
            if x < -ENTRY_TOLERANCE or x > 1.0 + ENTRY_TOLERANCE:
                raise ValueError(f"simplex entry outside [0, 1]: {x!r}")
        probs = tuple(min(max(x, 0.0), 1.0) for x in probs)
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"entries sum to {total!r}, further than {SUM_TOLERANCE} from 1")
        if total != 1.0:
            probs = tuple(x / total for x in probs)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return len(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, j: int) -> float:
        return self.probs[j]

    def __iter__(self):
        return iter(self.probs)

    def is_interior(self) -> bool:
        """True when every coordinate is strictly positive."""
        return all(x > 0.0 for x in self.probs)

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=float)


@dataclass(frozen=True)
class LossVector:
    """Nonnegative finite loss weights, one per error type, not all equal.

    Equal losses are rejected: they make every hypothesis incur the same total
    risk, so there is no learning problem to certify.
    """

    losses: tuple[float, ...]

    def __post_init__(self) -> None:
        losses = tuple(float(x) for x in self.losses)
        if len(losses) < 2:
            raise ValueError(f"loss vector must have dimension >= 2, got {len(losses)}")
        for x in losses:
            if not math.isfinite(x) or x < 0.0:
                raise ValueError(f"loss entries must be finite and >= 0, got {x!r}")
        if max(losses) == min(losses):
            raise ValueError("loss entries must not all be equal")
        object.__setattr__(self, "losses", losses)

    @property
    def dim(self) -> int:
        return len(self.losses)

    def __len__(self) -> int:
        return len(self.losses)

    def __getitem__(self, j: int) -> float:
        return self.losses[j]

    def __iter__(self):
        return iter(self.losses)

    @property
    def max_loss(self) -> float:
        return max(self.losses)

    def as_array(self) -> np.ndarray:
        return np.array(self.losses, dtype=float)


def _check_same_dim(q: SimplexVector, p: SimplexVector) -> None:
    if q.dim != p.dim:
        raise DimensionMismatchError(f"dimension mismatch: {q.dim} vs {p.dim}")


def kl_div(q: SimplexVector, p: SimplexVector) -> float:
    """kl(q||p) = sum_j q_j ln(q_j / p_j), in [0, +inf].

    ``+inf`` (support of q not contained in support of p) is a representable
    value, not an error. Tiny negative rounding residue is clamped to 0.
    """
    _check_same_dim(q, p)
    total = 0.0
    for qj, pj in zip(q.probs, p.probs):
        if qj == 0.0:
            continue
        if pj == 0.0:
            return math.inf
        total += qj * math.log(qj / pj)
    return max(total, 0.0)


def scalar_kl(q: float, p: float) -> float:
    """Binary kl: kl((q, 1-q) || (p, 1-p)) for q, p in [0, 1]."""
    for name, x in (("q", q), ("p", p)):
        if not (0.0 <= x <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {x!r}")
    return kl_div(SimplexVector((q, 1.0 - q)), SimplexVector((p, 1.0 - p)))


def total_risk(l: LossVector, r: SimplexVector) -> float:
    """Loss-weighted total risk sum_j l_j r_j."""
    if l.dim != r.dim:
        raise DimensionMismatchError(f"dimension mismatch: {l.dim} vs {r.dim}")
    return sum(lj * rj for lj, rj in zip(l.losses, r.probs))


def total_variation(q: SimplexVector, p: SimplexVector) -> float:
    """TV(q, p) = (1/2) * sum_j |q_j - p_j|, in [0, 1]."""
    _check_same_dim(q, p)
    return 0.5 * sum(abs(qj - pj) for qj, pj in zip(q.probs, p.probs))


def hellinger(q: SimplexVector, p: SimplexVector) -> float:
    """H(q, p) = (1/sqrt(2)) * ||sqrt(q) - sqrt(p)||_2, in [0, 1]."""
    _check_same_dim(q, p)
    s = sum((math.sqrt(qj) - math.sqrt(pj)) ** 2 for qj, pj in zip(q.probs, p.probs))
    return min(math.sqrt(0.5 * s), 1.0)


def tv_bound_from_kl_budget(B: float) -> float:
    """Best of the Pinsker and Bretagnolle-Huber conversions of a kl budget.

    Returns min(sqrt(B/2), sqrt(1 - exp(-B)), 1). The second branch is the
    smaller one for B above roughly 1.594.
    """
    if B < 0.0 or math.isnan(B):
        raise ValueError(f"budget must be >= 0, got {B!r}")
    pinsker = math.sqrt(B / 2.0)
    bh = math.sqrt(-math.expm1(-B))
    return min(pinsker, bh, 1.0)


def hellinger_bound_from_tv(tv: float) -> float:
    """Convert a total-variation bound to a Hellinger bound via H <= sqrt(TV)."""
    if not (0.0 <= tv <= 1.0):
        raise ValueError(f"tv must be in [0, 1], got {tv!r}")
    return math.sqrt(tv)


def make_simplex(values: Sequence[float]) -> SimplexVector:
    """Convenience constructor from any float sequence."""
    return SimplexVector(tuple(float(x) for x in values))
