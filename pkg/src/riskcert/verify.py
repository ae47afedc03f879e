"""Empirical checks of the inequalities the certificates rest on.

Monte Carlo experiments with seeded generators: bound validity at the stated
confidence level on a synthetic world with closed-form true risks, the
multinomial domination of simplex-valued i.i.d. means, the
reciprocal-square-root composition inequality, and the per-coordinate
equality witness. All procedures are deterministic given their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from riskcert.constants import (
    ConstantMode,
    enumerate_compositions,
    log_multinomial_pmf,
    reciprocal_sqrt_sum_check,
)
from riskcert.certificates import log_bound_constant
from riskcert.errors import DimensionMismatchError
from riskcert.simplex import SimplexVector, kl_div, scalar_kl
from riskcert.training import ErrorPartition


@dataclass(frozen=True)
class SyntheticWorld:
    """A finite world with closed-form true risks.

    Labels are drawn from ``class_priors``; hypotheses are constant soft
    predictors (each row a distribution over predicted labels), so true risks
    are exact sums over labels. ``posterior``/``prior`` weight the hypotheses.
    """

    class_priors: tuple[float, ...]
    hypotheses: tuple[tuple[float, ...], ...]
    posterior: tuple[float, ...]
    prior: tuple[float, ...]
    partition: ErrorPartition
    seed: int = 0

    def __post_init__(self) -> None:
        C = self.partition.n_classes
        if len(self.class_priors) != C:
            raise DimensionMismatchError("class priors do not match the partition")
        if abs(math.fsum(self.class_priors) - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        for row in self.hypotheses:
            if len(row) != C:
                raise DimensionMismatchError("hypothesis rows must match the class count")
            if abs(math.fsum(row) - 1.0) > 1e-9:
                raise ValueError("hypothesis rows must sum to 1")
        for name, w in (("posterior", self.posterior), ("prior", self.prior)):
            if len(w) != len(self.hypotheses):
                raise DimensionMismatchError(f"{name} must weight every hypothesis")
            if abs(math.fsum(w) - 1.0) > 1e-9 or min(w) < 0.0:
                raise ValueError(f"{name} must be a probability vector")

    def per_label_risk(self) -> np.ndarray:
        """(n_classes, n_types): posterior-mean type mass when the true label is y."""
        C, M = self.partition.n_classes, self.partition.n_types
        hyp = np.array(self.hypotheses)
        q = np.array(self.posterior)
        mean_pred = q @ hyp  # posterior-mean mass on each predicted label
        out = np.zeros((C, M))
        for y in range(C):
            out[y] = np.bincount(
                self.partition.table[:, y], weights=mean_pred, minlength=M
            )
        return out

    def true_risk_vector(self) -> SimplexVector:
        a = self.per_label_risk()
        r = np.array(self.class_priors) @ a
        return SimplexVector(tuple(r))

    def kl_posterior_prior(self) -> float:
        total = 0.0
        for qh, ph in zip(self.posterior, self.prior):
            if qh == 0.0:
                continue
            if ph == 0.0:
                return math.inf
            total += qh * math.log(qh / ph)
        return max(total, 0.0)


def default_world() -> SyntheticWorld:
    """The fixed desk-scale world used by the budget suite: Q = P uniform
    over three constant soft hypotheses, two classes, correct/incorrect types."""
    return SyntheticWorld(
        class_priors=(0.5, 0.5),
        hypotheses=((0.8, 0.2), (0.5, 0.5), (0.3, 0.7)),
        posterior=(1 / 3, 1 / 3, 1 / 3),
        prior=(1 / 3, 1 / 3, 1 / 3),
        partition=ErrorPartition.coarse(2),
        seed=0,
    )


def _kl_rows(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """kl(x_i || mu) per row, with the 0*log(0) = 0 convention (mu interior)."""
    safe = np.where(x > 0.0, x, 1.0)
    return np.sum(np.where(x > 0.0, x * (np.log(safe) - np.log(mu)), 0.0), axis=1)


def mc_bound_violation(
    world: SyntheticWorld,
    m: int,
    delta: float,
    trials: int,
    mode: ConstantMode = ConstantMode.EXACT,
    seed: int | None = None,
) -> dict:
    """Fraction of sample draws whose deviation exceeds the budget.

    The guarantee is that this fraction stays at or below delta; with the
    exact constant it is conservative and typically near zero.
    """
    if trials < 1 or m < 1:
        raise ValueError("need trials >= 1 and m >= 1")
    rng = np.random.default_rng(world.seed if seed is None else seed)
    M = world.partition.n_types
    budget = (
        world.kl_posterior_prior()
        + log_bound_constant(m, M, mode)
        - math.log(delta)
    ) / m

    a = world.per_label_risk()  # (C, M)
    true_risk = world.true_risk_vector()
    labels = rng.choice(len(world.class_priors), size=(trials, m), p=world.class_priors)
    counts = np.zeros((trials, len(world.class_priors)))
    np.add.at(counts, (np.arange(trials)[:, None], labels), 1.0)
    empirical = counts @ a / m  # (trials, M)

    rd = true_risk.as_array()
    finite = rd > 0.0
    kls = np.full(trials, math.inf)
    ok = ~np.any((empirical > 0.0) & ~finite[None, :], axis=1)
    sub = empirical[ok][:, finite]
    safe = np.where(sub > 0.0, sub, 1.0)
    kls[ok] = np.sum(
        np.where(sub > 0.0, sub * (np.log(safe) - np.log(rd[finite])), 0.0), axis=1
    )
    violations = int(np.sum(kls > budget))
    return {
        "m": m,
        "delta": delta,
        "trials": trials,
        "mode": mode.value,
        "budget_nats": budget,
        "true_risk": list(true_risk.probs),
        "violations": violations,
        "violation_fraction": violations / trials,
        "passed": violations / trials <= delta,
    }


class DirichletLaw:
    """Simplex-valued i.i.d. law: Dirichlet reparameterised to a target mean.

    ``concentration`` is the per-coordinate parameter at uniform mean, so the
    parameters are concentration * M * mu and the mean is exactly mu.
    """

    def __init__(self, concentration: float):
        if not (concentration > 0.0):
            raise ValueError("concentration must be > 0")
        self.concentration = concentration

    @property
    def name(self) -> str:
        return f"dirichlet({self.concentration:g})"

    def mean(self, mu: np.ndarray) -> np.ndarray:
        return mu.copy()

    def sample(self, rng: np.random.Generator, n: int, m: int, mu: np.ndarray) -> np.ndarray:
        alphas = self.concentration * len(mu) * mu
        return rng.dirichlet(alphas, size=(n, m))


class MultinomialLaw:
    """The comparison law itself: one-hot draws with the target mean."""

    name = "multinomial"

    def mean(self, mu: np.ndarray) -> np.ndarray:
        return mu.copy()

    def sample(self, rng: np.random.Generator, n: int, m: int, mu: np.ndarray) -> np.ndarray:
        return rng.multinomial(1, mu, size=(n, m)).astype(float)


class PointMassLaw:
    """Degenerate law: every draw equals the mean."""

    name = "point-mass"

    def mean(self, mu: np.ndarray) -> np.ndarray:
        return mu.copy()

    def sample(self, rng: np.random.Generator, n: int, m: int, mu: np.ndarray) -> np.ndarray:
        return np.broadcast_to(mu, (n, m, len(mu))).copy()


def exact_multinomial_expectation(mu: SimplexVector, m: int) -> float:
    """Closed-form E[exp(m * kl(mean of m one-hot draws || mu))]."""
    total = 0.0
    for k in enumerate_compositions(m, mu.dim):
        log_p = log_multinomial_pmf(k, mu)
        if log_p == -math.inf:
            continue
        x = SimplexVector(tuple(kj / m for kj in k))
        total += math.exp(log_p + m * kl_div(x, mu))
    return total


def mc_maurer_domination(
    mu: SimplexVector,
    m: int,
    M: int,
    samples: int,
    inner_law,
    seed: int = 0,
) -> dict:
    """Paired MC check that the inner law's exponentiated deviation is dominated.

    Estimates E[exp(m*kl(Xbar||mu))] under ``inner_law`` (lhs) and under
    one-hot draws with the same mean (rhs); passes when lhs <= rhs plus three
    combined standard errors. When the inner law is the one-hot law itself the
    same draws are reused and the two sides coincide exactly.
    """
    if mu.dim != M:
        raise DimensionMismatchError(f"mu has dimension {mu.dim}, expected {M}")
    if samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    mu_arr = mu.as_array()
    law_mean = inner_law.mean(mu_arr)
    if np.max(np.abs(law_mean - mu_arr)) > 1e-9:
        raise ValueError(f"inner law mean {law_mean} does not match mu {mu_arr}")

    rng_l, rng_r = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    ref = MultinomialLaw()
    draws_r = ref.sample(rng_r, samples, m, mu_arr)
    if isinstance(inner_law, MultinomialLaw):
        draws_l = draws_r
    else:
        draws_l = inner_law.sample(rng_l, samples, m, mu_arr)

    f_l = np.exp(m * _kl_rows(draws_l.mean(axis=1), mu_arr))
    f_r = np.exp(m * _kl_rows(draws_r.mean(axis=1), mu_arr))
    lhs, rhs = float(f_l.mean()), float(f_r.mean())
    se_l = float(f_l.std(ddof=1) / math.sqrt(samples))
    se_r = float(f_r.std(ddof=1) / math.sqrt(samples))
    diffs = f_l - f_r
    se_diff = float(diffs.std(ddof=1) / math.sqrt(samples))
    return {
        "law": inner_law.name,
        "m": m,
        "M": M,
        "samples": samples,
        "lhs": lhs,
        "rhs": rhs,
        "se_lhs": se_l,
        "se_rhs": se_r,
        "se_diff": se_diff,
        "passed": lhs <= rhs + 3.0 * se_diff,
    }


def prop8_equality_witness(
    q: SimplexVector, j: int, p_j: float
) -> tuple[float, float]:
    """Joint and marginal kl for the proportional completion of coordinate j.

    Fills the remaining coordinates as p_i = q_i * (1 - p_j)/(1 - q_j), the
    unique completion achieving kl(q||p) = kl(q_j||p_j); any other completion
    with the same p_j is strictly larger.
    """
    if not (0 <= j < q.dim):
        raise ValueError(f"index {j} out of range for dimension {q.dim}")
    if q[j] >= 1.0:
        raise ValueError("q_j must be < 1 for the completion to exist")
    if not (0.0 <= p_j < 1.0):
        raise ValueError(f"p_j must be in [0, 1), got {p_j!r}")
    ratio = (1.0 - p_j) / (1.0 - q[j])
    p = SimplexVector(
        tuple(p_j if i == j else ratio * q[i] for i in range(q.dim))
    )
    return kl_div(q, p), scalar_kl(q[j], p_j)


def lemma7_sweep(max_m: int, max_M: int) -> list[dict]:
    """Run the reciprocal-square-root check over the full feasible grid."""
    rows = []
    for M in range(1, max_M + 1):
        for m in range(M, max_m + 1):
            exact, bound = reciprocal_sqrt_sum_check(m, M)
            rows.append(
                {"m": m, "M": M, "exact_sum": exact, "bound": bound, "passed": exact <= bound}
            )
    return rows


def run_suite(
    suite: str,
    seed: int = 0,
    trials: int = 2000,
    samples: int = 100_000,
) -> dict:
    """Run one named verification suite (or 'all') and build a JSON-ready report."""
    suites = ("budget", "lemma5", "lemma7", "prop8")
    if suite != "all" and suite not in suites:
        raise ValueError(f"unknown suite {suite!r}; pick one of {suites + ('all',)}")
    selected = suites if suite == "all" else (suite,)
    results: dict = {}

    if "budget" in selected:
        results["budget"] = mc_bound_violation(
            default_world(), m=100, delta=0.05, trials=trials,
            mode=ConstantMode.EXACT, seed=seed,
        )
    if "lemma5" in selected:
        mu = SimplexVector((1 / 3, 1 / 3, 1 / 3))
        checks = [
            mc_maurer_domination(mu, m=5, M=3, samples=samples,
                                 inner_law=DirichletLaw(conc), seed=seed + i)
            for i, conc in enumerate((0.5, 2.0, 10.0))
        ]
        checks.append(
            mc_maurer_domination(mu, m=5, M=3, samples=samples,
                                 inner_law=PointMassLaw(), seed=seed + 3)
        )
        checks.append(
            mc_maurer_domination(mu, m=5, M=3, samples=samples,
                                 inner_law=MultinomialLaw(), seed=seed + 4)
        )
        results["lemma5"] = checks
    if "lemma7" in selected:
        results["lemma7"] = lemma7_sweep(max_m=14, max_M=5)
    if "prop8" in selected:
        rng = np.random.default_rng(seed)
        worst_gap = 0.0
        perturbation_ok = True
        for _ in range(100):
            M = int(rng.integers(2, 6))
            q = SimplexVector(tuple(rng.dirichlet(np.ones(M))))
            j = int(rng.integers(M))
            p_j = float(rng.uniform(0.0, 0.95))
            joint, marginal = prop8_equality_witness(q, j, p_j)
            worst_gap = max(worst_gap, abs(joint - marginal))
            # a random same-p_j completion must not beat the proportional one
            rest = rng.dirichlet(np.ones(M - 1)) * (1.0 - p_j)
            p = list(rest[:j]) + [p_j] + list(rest[j:])
            if kl_div(q, SimplexVector(tuple(p))) < marginal - 1e-12:
                perturbation_ok = False
        results["prop8"] = {
            "cases": 100,
            "worst_equality_gap": worst_gap,
            "perturbations_dominate": perturbation_ok,
            "passed": worst_gap <= 1e-12 and perturbation_ok,
        }

    def collect(node) -> bool:
        if isinstance(node, dict):
            if "passed" in node and not node["passed"]:
                return False
            return all(collect(v) for v in node.values())
        if isinstance(node, list):
            return all(collect(v) for v in node)
        return True

    return {
        "suite": suite,
        "seed": seed,
        "results": results,
        "passed": collect(results),
    }
