"""Assembly of self-contained risk-bound certificates.

A certificate packages, for one empirical risk vector and one kl budget B:
the budget itself, the tightest per-type intervals, the total-risk bound for
an optional loss weighting, and the total-variation / Hellinger conversions.
Certificates are pure functions of their inputs: serialising and recomputing
yields byte-identical JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from riskcert.constants import (
    ConstantMode,
    MAX_COMPOSITIONS,
    composition_count,
    log_I_kl_exact,
    log_I_kl_stirling,
)
from riskcert.errors import BoundaryRiskError, EnumerationInfeasibleError
from riskcert.klinverse import (
    DEFAULT_TOL,
    kl_inverse_total,
    scalar_kl_inverse_lower,
    scalar_kl_inverse_upper,
)
from riskcert.serialize import dumps_canonical
from riskcert.simplex import (
    LossVector,
    SimplexVector,
    hellinger_bound_from_tv,
    tv_bound_from_kl_budget,
)


@dataclass(frozen=True)
class PacBayesInputs:
    """Everything needed to evaluate the deviation budget.

    m: certified sample count; M: number of error types; delta: confidence
    level in (0, 1]; kl_qp: divergence of the posterior from the prior, in
    nats; empirical_risk: the observed error-type frequencies.
    """

    m: int
    M: int
    delta: float
    kl_qp: float
    empirical_risk: SimplexVector

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "kl_qp", float(self.kl_qp))
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.M != self.empirical_risk.dim:
            raise ValueError(
                f"M={self.M} does not match risk dimension {self.empirical_risk.dim}"
            )
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must be in (0, 1], got {self.delta!r}")
        if not (self.kl_qp >= 0.0) or not math.isfinite(self.kl_qp):
            raise ValueError(f"kl_qp must be finite and >= 0, got {self.kl_qp!r}")


def resolve_constant_mode(m: int, M: int, requested: str) -> ConstantMode:
    """Map an 'exact'|'stirling'|'auto' request onto a feasible mode.

    'auto' picks exact when the enumeration fits under the cap and otherwise
    falls back to the Stirling form (which needs m >= M).
    """
    if requested == "exact":
        return ConstantMode.EXACT
    if requested == "stirling":
        return ConstantMode.STIRLING
    if requested != "auto":
        raise ValueError(f"unknown mode {requested!r}")
    if composition_count(m, M) <= MAX_COMPOSITIONS:
        return ConstantMode.EXACT
    if m >= M:
        return ConstantMode.STIRLING
    raise EnumerationInfeasibleError(
        f"exact enumeration infeasible at (m={m}, M={M}) and the Stirling form needs m >= M"
    )


def log_bound_constant(m: int, M: int, mode: ConstantMode) -> float:
    if mode is ConstantMode.EXACT:
        return log_I_kl_exact(m, M)
    return log_I_kl_stirling(m, M)


def bound_budget(inputs: PacBayesInputs, mode: ConstantMode) -> float:
    """B = (1/m) * [kl_qp + ln(constant / delta)], always >= 0."""
    log_const = log_bound_constant(inputs.m, inputs.M, mode)
    return (inputs.kl_qp + log_const - math.log(inputs.delta)) / inputs.m


def per_type_intervals(
    empirical_risk: SimplexVector, B: float, tol: float = DEFAULT_TOL
) -> tuple[tuple[float, float], ...]:
    """The tightest [L_j, U_j] each coordinate admits under a joint kl budget B."""
    if B < 0.0 or math.isnan(B):
        raise ValueError(f"budget must be >= 0, got {B!r}")
    return tuple(
        (scalar_kl_inverse_lower(qj, B, tol), scalar_kl_inverse_upper(qj, B, tol))
        for qj in empirical_risk.probs
    )


def total_risk_bound(
    empirical_risk: SimplexVector, B: float, l: LossVector, tol: float = DEFAULT_TOL
) -> float:
    """Upper bound on the true total risk: the constrained kl-inverse maximum."""
    return kl_inverse_total(empirical_risk, B, l, tol).f_star


def smooth_risk(empirical_risk: SimplexVector, m: int, alpha: float) -> SimplexVector:
    """Pseudo-count smoothing q <- (q*m + alpha) / (m + M*alpha).

    A heuristic modification of the input: the resulting certificate then
    certifies the smoothed vector, not the raw one.
    """
    if not (alpha > 0.0):
        raise ValueError(f"smoothing alpha must be > 0, got {alpha!r}")
    M = empirical_risk.dim
    return SimplexVector(
        tuple((qj * m + alpha) / (m + M * alpha) for qj in empirical_risk.probs)
    )


@dataclass(frozen=True)
class BoundCertificate:
    """A recomputable record of every bound implied by one deviation budget."""

    inputs: PacBayesInputs
    mode: ConstantMode
    log_constant: float
    n_compositions: int | None
    budget_nats: float
    per_type: tuple[tuple[float, float], ...]
    losses: LossVector | None
    total_risk_bound: float | None
    tv_bound: float
    hellinger_bound: float
    kl_inverse_residual: float | None
    tol: float
    smoothing_alpha: float | None
    raw_risk: SimplexVector | None

    def to_dict(self) -> dict:
        mode_record: dict = {"kind": self.mode.value, "log_constant": self.log_constant}
        if self.n_compositions is not None:
            mode_record["n_compositions"] = self.n_compositions
        smoothing = None
        if self.smoothing_alpha is not None:
            smoothing = {
                "alpha": self.smoothing_alpha,
                "raw_empirical_risk": list(self.raw_risk.probs),
            }
        return {
            "m": self.inputs.m,
            "M": self.inputs.M,
            "delta": self.inputs.delta,
            "kl_qp": self.inputs.kl_qp,
            "empirical_risk": list(self.inputs.empirical_risk.probs),
            "mode": mode_record,
            "budget_nats": self.budget_nats,
            "per_type_intervals": [list(iv) for iv in self.per_type],
            "loss_vector": list(self.losses.losses) if self.losses else None,
            "total_risk_bound": self.total_risk_bound,
            "tv_bound": self.tv_bound,
            "hellinger_bound": self.hellinger_bound,
            "solver_residuals": {
                "kl_inverse_residual": self.kl_inverse_residual,
                "tolerance": self.tol,
            },
            "smoothing": smoothing,
        }

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())


def build_certificate(
    inputs: PacBayesInputs,
    mode: ConstantMode | str = "auto",
    losses: LossVector | None = None,
    smoothing_alpha: float | None = None,
    tol: float = DEFAULT_TOL,
) -> BoundCertificate:
    """Compose budget, intervals, total-risk bound and distance conversions.

    When ``losses`` is given the empirical risk must be interior (or smoothing
    requested): the kl-inverse is only defined there. All outputs are a pure
    function of the arguments.
    """
    if isinstance(mode, str):
        mode = resolve_constant_mode(inputs.m, inputs.M, mode)
    raw_risk = None
    risk = inputs.empirical_risk
    if smoothing_alpha is not None:
        raw_risk = risk
        risk = smooth_risk(risk, inputs.m, smoothing_alpha)
        inputs = PacBayesInputs(inputs.m, inputs.M, inputs.delta, inputs.kl_qp, risk)

    log_const = log_bound_constant(inputs.m, inputs.M, mode)
    budget = (inputs.kl_qp + log_const - math.log(inputs.delta)) / inputs.m
    intervals = per_type_intervals(risk, budget, tol)

    trb = None
    residual = None
    if losses is not None:
        if not risk.is_interior():
            raise BoundaryRiskError(
                "empirical risk has a zero coordinate; pass smoothing_alpha to certify "
                "a pseudo-count smoothed vector instead"
            )
        sol = kl_inverse_total(risk, budget, losses, tol)
        trb = sol.f_star
        residual = sol.residual

    tv = tv_bound_from_kl_budget(budget)
    return BoundCertificate(
        inputs=inputs,
        mode=mode,
        log_constant=log_const,
        n_compositions=(
            composition_count(inputs.m, inputs.M) if mode is ConstantMode.EXACT else None
        ),
        budget_nats=budget,
        per_type=intervals,
        losses=losses,
        total_risk_bound=trb,
        tv_bound=tv,
        hellinger_bound=hellinger_bound_from_tv(tv),
        kl_inverse_residual=residual,
        tol=tol,
        smoothing_alpha=smoothing_alpha,
        raw_risk=raw_risk,
    )


def recompute_certificate(text: str) -> str:
    """Rebuild a certificate from its serialised inputs and re-serialise it."""
    doc = json.loads(text)
    smoothing = doc.get("smoothing")
    if smoothing is not None:
        risk = SimplexVector(tuple(smoothing["raw_empirical_risk"]))
        alpha = smoothing["alpha"]
    else:
        risk = SimplexVector(tuple(doc["empirical_risk"]))
        alpha = None
    inputs = PacBayesInputs(
        m=doc["m"], M=doc["M"], delta=doc["delta"], kl_qp=doc["kl_qp"], empirical_risk=risk
    )
    losses = LossVector(tuple(doc["loss_vector"])) if doc.get("loss_vector") else None
    cert = build_certificate(
        inputs,
        mode=ConstantMode(doc["mode"]["kind"]),
        losses=losses,
        smoothing_alpha=alpha,
        tol=doc["solver_residuals"]["tolerance"],
    )
    return cert.to_json()


def verify_certificate(text: str) -> bool:
    """True when recomputation from the recorded inputs reproduces the bytes."""
    return recompute_certificate(text) == text
