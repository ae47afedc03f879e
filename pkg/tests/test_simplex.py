"""Simplex arithmetic: kl conventions, distances, budget conversions."""

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskcert.errors import DimensionMismatchError
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

mp.mp.dps = 50


def mp_kl(q, p):
    """Term-by-term summation oracle in 50-digit arithmetic."""
    total = mp.mpf(0)
    for qj, pj in zip(q, p):
        if qj == 0:
            continue
        if pj == 0:
            return mp.inf
        total += mp.mpf(qj) * mp.log(mp.mpf(qj) / mp.mpf(pj))
    return total


def random_simplex(rng, M):
    return SimplexVector(tuple(rng.dirichlet(np.ones(M))))


class TestSimplexVector:
    def test_valid_construction(self):
        v = SimplexVector((0.2, 0.3, 0.5))
        assert v.dim == 3
        assert math.isclose(sum(v.probs), 1.0, abs_tol=1e-15)

    def test_renormalises_small_drift(self):
        v = SimplexVector((0.5 + 2e-10, 0.5))
        assert math.fsum(v.probs) == pytest.approx(1.0, abs=1e-15)

    def test_rejects_large_drift(self):
        with pytest.raises(ValueError):
            SimplexVector((0.5, 0.6))

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            SimplexVector((-0.1, 1.1))

    def test_rejects_dimension_one(self):
        with pytest.raises(ValueError):
            SimplexVector((1.0,))

    def test_interior_flag(self):
        assert SimplexVector((0.4, 0.6)).is_interior()
        assert not SimplexVector((1.0, 0.0)).is_interior()


class TestLossVector:
    def test_rejects_all_equal(self):
        with pytest.raises(ValueError):
            LossVector((1.0, 1.0, 1.0))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossVector((-1.0, 2.0))

    def test_max_loss(self):
        assert LossVector((0.0, 2.0, 1.0)).max_loss == 2.0


class TestKlDiv:
    def test_identity_is_zero(self):
        rng = np.random.default_rng(0)
        for M in (2, 3, 7):
            u = random_simplex(rng, M)
            assert kl_div(u, u) == 0.0

    def test_one_term_analytic(self):
        # kl((1,0)||(0.5,0.5)) = ln 2: only the first term contributes
        assert kl_div(SimplexVector((1.0, 0.0)), SimplexVector((0.5, 0.5))) == pytest.approx(
            math.log(2.0), abs=1e-15
        )

    def test_support_violation_is_infinite(self):
        assert kl_div(SimplexVector((0.5, 0.5)), SimplexVector((1.0, 0.0))) == math.inf

    def test_against_extended_precision_oracle(self):
        q = SimplexVector((0.2, 0.3, 0.5))
        p = SimplexVector((0.4, 0.4, 0.2))
        expected = float(mp_kl(q.probs, p.probs))
        assert kl_div(q, p) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.23321130808955419, abs=1e-15)

    def test_random_pairs_against_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            M = int(rng.integers(2, 6))
            q, p = random_simplex(rng, M), random_simplex(rng, M)
            assert kl_div(q, p) == pytest.approx(float(mp_kl(q.probs, p.probs)), abs=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            kl_div(SimplexVector((0.5, 0.5)), SimplexVector((0.2, 0.3, 0.5)))

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            M = int(rng.integers(2, 5))
            q, p = random_simplex(rng, M), random_simplex(rng, M)
            v = kl_div(q, p)
            assert v >= 0.0
            if v == 0.0:
                assert max(abs(a - b) for a, b in zip(q.probs, p.probs)) < 1e-7

    def test_finite_iff_support_contained(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            M = int(rng.integers(2, 5))
            qp = rng.dirichlet(np.ones(M))
            pp = rng.dirichlet(np.ones(M))
            qz = rng.random(M) < 0.4
            pz = rng.random(M) < 0.4
            if qz.all() or pz.all():
                continue
            qp[qz], pp[pz] = 0.0, 0.0
            q = SimplexVector(tuple(qp / qp.sum()))
            p = SimplexVector(tuple(pp / pp.sum()))
            contained = all(pj > 0 for qj, pj in zip(q.probs, p.probs) if qj > 0)
            assert (kl_div(q, p) < math.inf) == contained


class TestScalarKl:
    def test_identity(self):
        for q in (0.0, 0.3, 1.0):
            assert scalar_kl(q, q) == 0.0

    def test_zero_vs_half(self):
        assert scalar_kl(0.0, 0.5) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_exactly_matches_two_vector_kl(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            q, p = rng.random(), rng.random()
            assert scalar_kl(q, p) == kl_div(
                SimplexVector((q, 1.0 - q)), SimplexVector((p, 1.0 - p))
            )

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            scalar_kl(1.2, 0.5)
        with pytest.raises(ValueError):
            scalar_kl(0.5, -0.1)


class TestTotalRisk:
    def test_dot_product(self):
        assert total_risk(LossVector((0.0, 1.0)), SimplexVector((0.9, 0.1))) == pytest.approx(0.1)

    def test_uniform(self):
        l = LossVector((0.0, 0.0, 1.0, 2.0))
        r = SimplexVector((0.25, 0.25, 0.25, 0.25))
        assert total_risk(l, r) == pytest.approx(0.75)

    def test_one_hot_selects_loss(self):
        l = LossVector((0.5, 3.0, 1.0))
        for j in range(3):
            r = SimplexVector(tuple(1.0 if i == j else 0.0 for i in range(3)))
            assert total_risk(l, r) == l[j]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            total_risk(LossVector((0.0, 1.0)), SimplexVector((0.2, 0.3, 0.5)))


class TestDistances:
    def test_tv_examples(self):
        u = SimplexVector((0.25, 0.75))
        assert total_variation(u, u) == 0.0
        assert total_variation(SimplexVector((1.0, 0.0)), SimplexVector((0.0, 1.0))) == 1.0
        assert total_variation(
            SimplexVector((0.2, 0.8)), SimplexVector((0.5, 0.5))
        ) == pytest.approx(0.3, abs=1e-15)

    def test_tv_metric_axioms(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            M = int(rng.integers(2, 5))
            a, b, c = (random_simplex(rng, M) for _ in range(3))
            assert total_variation(a, b) == total_variation(b, a)
            assert total_variation(a, c) <= total_variation(a, b) + total_variation(b, c) + 1e-12

    def test_hellinger_examples(self):
        u = SimplexVector((0.3, 0.7))
        assert hellinger(u, u) == 0.0
        assert hellinger(SimplexVector((1.0, 0.0)), SimplexVector((0.0, 1.0))) == pytest.approx(
            1.0, abs=1e-15
        )

    def test_hellinger_direct_formula_oracle(self):
        q = SimplexVector((0.5, 0.5))
        p = SimplexVector((0.125, 0.875))
        expected = float(
            mp.sqrt(sum((mp.sqrt(mp.mpf(a)) - mp.sqrt(mp.mpf(b))) ** 2
                        for a, b in zip(q.probs, p.probs))) / mp.sqrt(2)
        )
        assert hellinger(q, p) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.29759397210604309, abs=1e-15)

    def test_hellinger_below_sqrt_tv(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            M = int(rng.integers(2, 6))
            q, p = random_simplex(rng, M), random_simplex(rng, M)
            assert hellinger(q, p) <= math.sqrt(total_variation(q, p)) + 1e-12


class TestBudgetConversions:
    def test_zero_budget(self):
        assert tv_bound_from_kl_budget(0.0) == 0.0

    def test_bretagnolle_huber_branch(self):
        # at B = 2 the Pinsker branch exceeds 1, the other gives sqrt(1 - e^-2)
        expected = float(mp.sqrt(1 - mp.e ** -2))
        assert tv_bound_from_kl_budget(2.0) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.92987349503219378, abs=1e-15)

    def test_caps_at_one(self):
        assert tv_bound_from_kl_budget(math.inf) == 1.0
        assert tv_bound_from_kl_budget(1e6) == 1.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            tv_bound_from_kl_budget(-0.1)

    def test_pinsker_inequality_on_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            M = int(rng.integers(2, 5))
            q = SimplexVector(tuple(rng.dirichlet(np.ones(M))))
            p = SimplexVector(tuple(rng.dirichlet(np.ones(M))))
            assert total_variation(q, p) <= tv_bound_from_kl_budget(kl_div(q, p)) + 1e-12

    def test_hellinger_from_tv(self):
        assert hellinger_bound_from_tv(0.0) == 0.0
        assert hellinger_bound_from_tv(1.0) == 1.0
        assert hellinger_bound_from_tv(0.25) == 0.5
        with pytest.raises(ValueError):
            hellinger_bound_from_tv(1.5)


@settings(max_examples=200, derandomize=True)
@given(
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=6),
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=6),
)
def test_kl_nonnegative_property(qs, ps):
    M = min(len(qs), len(ps))
    if M < 2:
        return
    q = SimplexVector(tuple(np.array(qs[:M]) / np.sum(qs[:M])))
    p = SimplexVector(tuple(np.array(ps[:M]) / np.sum(ps[:M])))
    assert kl_div(q, p) >= 0.0
    assert total_variation(q, p) <= tv_bound_from_kl_budget(kl_div(q, p)) + 1e-12
