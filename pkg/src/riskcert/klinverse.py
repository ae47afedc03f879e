"""Constrained kl-inverse: maximise a loss-weighted sum over a kl ball.

Solves max{ sum_j l_j v_j : v in the simplex, kl(u||v) <= c } for interior u
and c > 0. The maximiser is tilted coordinate-wise by a Lagrange multiplier
mu* < -max_j l_j, found as the unique root of a strictly increasing scalar
function phi; the attained maximum f* then has closed-form derivatives in
(u, c) via the envelope theorem, with no differentiation of the optimiser.

Also provides the scalar (binary) kl-inverses used for per-coordinate
intervals, and a brute-force grid oracle for verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from riskcert.errors import BoundaryRiskError, ConvergenceError, DimensionMismatchError
from riskcert.simplex import LossVector, SimplexVector, scalar_kl, total_risk

DEFAULT_TOL = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class TiltedSolution:
    """Solution of the constrained maximisation, with envelope gradients.

    Invariants (at c > 0): mu_star < -max_j l_j; lambda_star < 0 and equals
    (sum_j u_j/(mu_star + l_j))^{-1}; v_star is interior with kl(u||v_star)
    equal to the budget within the solver residual; f_star is the attained
    loss-weighted maximum. grad_u[j] = lambda_star*(1 + log(u_j/v_star_j)) and
    grad_c = -lambda_star > 0.

    At c = 0 the degenerate analytic solution is returned: v_star = u,
    f_star = l.u, grad_u = l (the tangential limit), grad_c = +inf, with
    ``one_sided`` set since these are c -> 0+ limits.
    """

    mu_star: float
    lambda_star: float
    v_star: SimplexVector
    f_star: float
    grad_u: tuple[float, ...]
    grad_c: float
    residual: float
    one_sided: bool = False


def _require_interior(u: SimplexVector) -> None:
    if not u.is_interior():
        raise BoundaryRiskError(
            "risk vector has a zero coordinate; the kl-inverse requires an interior "
            "point (consider pseudo-count smoothing)"
        )


def _check_dims(u: SimplexVector, l: LossVector) -> None:
    if u.dim != l.dim:
        raise DimensionMismatchError(f"dimension mismatch: {u.dim} vs {l.dim}")


def phi(mu: float, u: SimplexVector, l: LossVector) -> float:
    """The strictly increasing function whose root identifies the multiplier.

    phi(mu) = log(-sum_j u_j/(mu + l_j)) + sum_j u_j log(-(mu + l_j)),
    defined for mu < -max_j l_j and interior u. Computed with
    t_j = -(mu + l_j) > 0 as log(sum u_j/t_j) + sum u_j log t_j to avoid sign
    juggling; mu can be astronomically negative for tiny budgets.

    It increases from 0 (mu -> -inf) to +inf (mu -> -max_j l_j).
    """
    _check_dims(u, l)
    _require_interior(u)
    if not mu < -l.max_loss:
        raise ValueError(f"mu must be < -max loss = {-l.max_loss}, got {mu!r}")
    recip = 0.0
    logs = 0.0
    for uj, lj in zip(u.probs, l.losses):
        t = -(mu + lj)
        recip += uj / t
        logs += uj * math.log(t)
    return math.log(recip) + logs


def _solve_mu(
    u: SimplexVector, c: float, l: LossVector, tol: float
) -> tuple[float, float]:
    """Root of phi(mu) = c by bracketed bisection; returns (mu, residual)."""
    lmax = l.max_loss

    # Right end: creep toward the pole -max l until phi exceeds c.
    offset = 2.0**-40
    hi = -lmax - offset
    f_hi = phi(hi, u, l)
    for _ in range(MAX_ITER):
        if f_hi >= c:
            break
        offset *= 0.5
        if offset == 0.0:
            raise ConvergenceError("right bracket collapsed onto the pole before reaching c")
        hi = -lmax - offset
        f_hi = phi(hi, u, l)
    else:
        raise ConvergenceError(f"could not bracket c={c!r} from the right in {MAX_ITER} steps")
    if abs(f_hi - c) <= tol:
        return hi, abs(f_hi - c)

    # Left end: double the distance from the pole until phi drops below c.
    span = 1.0 + lmax
    lo = -lmax - span
    f_lo = phi(lo, u, l)
    for _ in range(MAX_ITER):
        if f_lo <= c:
            break
        span *= 2.0
        lo = -lmax - span
        f_lo = phi(lo, u, l)
    else:
        raise ConvergenceError(f"could not bracket c={c!r} from the left in {MAX_ITER} steps")
    if abs(f_lo - c) <= tol:
        return lo, abs(f_lo - c)

    best_mu, best_res = hi, abs(f_hi - c)
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break  # interval exhausted at float resolution
        f_mid = phi(mid, u, l)
        res = abs(f_mid - c)
        if res < best_res:
            best_mu, best_res = mid, res
        if res <= tol:
            return mid, res
        if f_mid < c:
            lo = mid
        else:
            hi = mid
    if best_res <= 10.0 * tol:
        return best_mu, best_res
    raise ConvergenceError(
        f"bisection stalled with residual {best_res!r} above tolerance {tol!r}"
    )


def solve_mu_star(
    u: SimplexVector, c: float, l: LossVector, tol: float = DEFAULT_TOL
) -> float:
    """Solve phi(mu) = c for the unique mu in (-inf, -max_j l_j).

    Requires interior u, c > 0 and a valid loss vector. The returned mu
    satisfies |phi(mu) - c| <= tol (up to float granularity of phi).
    """
    _check_dims(u, l)
    _require_interior(u)
    if not (c > 0.0) or math.isnan(c):
        raise ValueError(f"budget c must be > 0, got {c!r}")
    if not (tol > 0.0):
        raise ValueError(f"tol must be > 0, got {tol!r}")
    mu, _ = _solve_mu(u, c, l, tol)
    return mu


def kl_inverse_total(
    u: SimplexVector, c: float, l: LossVector, tol: float = DEFAULT_TOL
) -> TiltedSolution:
    """Maximise the loss-weighted sum over the kl ball of radius c around u.

    The optimum is attained on the constraint boundary, so the returned
    v_star satisfies kl(u||v_star) = c within the recorded residual. c = 0 is
    returned analytically (see TiltedSolution).
    """
    _check_dims(u, l)
    if math.isnan(c) or c < 0.0:
        raise ValueError(f"budget c must be >= 0, got {c!r}")
    if c == 0.0:
        return TiltedSolution(
            mu_star=-math.inf,
            lambda_star=-math.inf,
            v_star=u,
            f_star=total_risk(l, u),
            grad_u=l.losses,
            grad_c=math.inf,
            residual=0.0,
            one_sided=True,
        )
    _require_interior(u)
    mu, residual = _solve_mu(u, c, l, tol)

    ts = [-(mu + lj) for lj in l.losses]
    denom = sum(uj / tj for uj, tj in zip(u.probs, ts))
    lam = -1.0 / denom
    v = SimplexVector(tuple(uj / (tj * denom) for uj, tj in zip(u.probs, ts)))
    grad_u = tuple(
        lam * (1.0 + math.log(uj / vj)) for uj, vj in zip(u.probs, v.probs)
    )
    return TiltedSolution(
        mu_star=mu,
        lambda_star=lam,
        v_star=v,
        f_star=total_risk(l, v),
        grad_u=grad_u,
        grad_c=-lam,
        residual=residual,
    )


def grad_f_star(sol: TiltedSolution, u: SimplexVector) -> tuple[tuple[float, ...], float]:
    """Envelope gradients of f* recomputed from a stored solution.

    grad_u[j] = lambda*(1 + log(u_j / v*_j)) and grad_c = -lambda*. For a
    degenerate (c = 0) solution the stored one-sided limits are returned.
    """
    if sol.v_star.dim != u.dim:
        raise DimensionMismatchError(f"dimension mismatch: {sol.v_star.dim} vs {u.dim}")
    if sol.one_sided:
        return sol.grad_u, sol.grad_c
    lam = sol.lambda_star
    grads = tuple(
        lam * (1.0 + math.log(uj / vj)) for uj, vj in zip(u.probs, sol.v_star.probs)
    )
    return grads, -lam


def _bisect_scalar(
    q: float, B: float, lo: float, hi: float, increasing: bool, tol: float
) -> float:
    best_p, best_res = lo, abs(scalar_kl(q, lo) - B)
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        d = scalar_kl(q, mid) - B
        res = abs(d)
        if res < best_res:
            best_p, best_res = mid, res
        if res <= tol:
            return mid
        if (d < 0.0) == increasing:
            lo = mid
        else:
            hi = mid
    # Adjacent-float exhaustion: the root lies between two representable
    # numbers; best_p is correctly rounded even if the kl residual is above tol.
    return best_p


def scalar_kl_inverse_upper(q: float, B: float, tol: float = DEFAULT_TOL) -> float:
    """sup{p in [0, 1] : kl(q||p) <= B}, by monotone bisection on [q, 1].

    Returns 1.0 when the supremum is beyond float resolution of 1 (in
    particular for the q = 1 boundary). B = 0 returns q exactly.
    """
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must be in [0, 1], got {q!r}")
    if B < 0.0 or math.isnan(B):
        raise ValueError(f"B must be >= 0, got {B!r}")
    if B == 0.0 or q == 1.0:
        return q
    hi = math.nextafter(1.0, 0.0)
    if scalar_kl(q, hi) <= B:
        return 1.0
    return _bisect_scalar(q, B, lo=q, hi=hi, increasing=True, tol=tol)


def scalar_kl_inverse_lower(q: float, B: float, tol: float = DEFAULT_TOL) -> float:
    """inf{p in [0, 1] : kl(q||p) <= B}, by monotone bisection on [0, q]."""
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must be in [0, 1], got {q!r}")
    if B < 0.0 or math.isnan(B):
        raise ValueError(f"B must be >= 0, got {B!r}")
    if B == 0.0 or q == 0.0:
        return q
    lo = math.nextafter(0.0, 1.0)
    if scalar_kl(q, lo) <= B:
        return 0.0
    # kl(q||.) is decreasing on [0, q].
    return _bisect_scalar(q, B, lo=lo, hi=q, increasing=False, tol=tol)


def brute_force_kl_inverse(
    u: SimplexVector, c: float, l: LossVector, grid_step: float
) -> float:
    """Grid oracle: max of l.v over interior lattice points with kl(u||v) <= c.

    Enumerates every simplex point whose coordinates are positive multiples of
    grid_step. Intended for verification at M <= 4; agrees with the exact
    solver within a couple of grid steps times the largest loss.
    """
    _check_dims(u, l)
    M = u.dim
    if M > 4:
        raise ValueError(f"grid oracle supports M <= 4, got M={M}")
    if math.isnan(c) or c < 0.0:
        raise ValueError(f"budget c must be >= 0, got {c!r}")
    n = round(1.0 / grid_step)
    if n < M or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step!r} does not evenly tile the simplex")

    def stack_points(counts: np.ndarray) -> np.ndarray:
        return counts.astype(float) / n

    if M == 2:
        i = np.arange(1, n)
        counts = np.column_stack([i, n - i])
    elif M == 3:
        i, j = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
        keep = (i + j) <= n - 1
        i, j = i[keep], j[keep]
        counts = np.column_stack([i, j, n - i - j])
    else:
        blocks = []
        for i in range(1, n - 2):
            j, k = np.meshgrid(np.arange(1, n - i), np.arange(1, n - i), indexing="ij")
            keep = (j + k) <= n - i - 1
            j, k = j[keep], k[keep]
            blocks.append(
                np.column_stack([np.full(j.shape, i), j, k, n - i - j - k])
            )
        counts = np.concatenate(blocks)

    v = stack_points(counts)
    ua = u.as_array()
    mask = ua > 0.0
    kls = np.zeros(len(v))
    if mask.any():
        uq = ua[mask]
        kls = np.sum(uq * (np.log(uq) - np.log(v[:, mask])), axis=1)
    feasible = kls <= c
    if not feasible.any():
        raise ValueError(
            "no interior grid point satisfies the kl constraint; refine grid_step"
        )
    values = v[feasible] @ l.as_array()
    return float(np.max(values))
