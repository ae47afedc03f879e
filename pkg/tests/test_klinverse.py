"""Constrained kl-inverse: multiplier root-find, maximiser, envelope gradients."""

import math

import mpmath as mp
import numpy as np
import pytest

from riskcert.errors import BoundaryRiskError, DimensionMismatchError
from riskcert.klinverse import (
    brute_force_kl_inverse,
    grad_f_star,
    kl_inverse_total,
    phi,
    scalar_kl_inverse_lower,
    scalar_kl_inverse_upper,
    solve_mu_star,
)
from riskcert.simplex import LossVector, SimplexVector, kl_div, scalar_kl, total_risk

mp.mp.dps = 50


def mp_phi(mu, u, l):
    """Re-evaluation of the multiplier function in 50-digit arithmetic."""
    recip = sum(mp.mpf(uj) / -(mp.mpf(mu) + mp.mpf(lj)) for uj, lj in zip(u, l))
    logs = sum(mp.mpf(uj) * mp.log(-(mp.mpf(mu) + mp.mpf(lj))) for uj, lj in zip(u, l))
    return mp.log(recip) + logs


def grid_scan_upper(q, B, step=5e-7):
    ps = np.arange(q, 1.0, step)
    qs = np.full_like(ps, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kls = np.where(qs > 0, qs * np.log(qs / ps), 0.0) + np.where(
            qs < 1, (1 - qs) * np.log((1 - qs) / (1 - ps)), 0.0
        )
    ok = ps[kls <= B]
    return float(ok.max())


def grid_scan_lower(q, B, step=5e-7):
    ps = np.arange(step, q + step / 2, step)
    qs = np.full_like(ps, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kls = np.where(qs > 0, qs * np.log(qs / ps), 0.0) + np.where(
            qs < 1, (1 - qs) * np.log((1 - qs) / (1 - ps)), 0.0
        )
    ok = ps[kls <= B]
    return float(ok.min())


def random_interior(rng, M, floor=0.02):
    u = rng.dirichlet(np.ones(M))
    u = (u + floor) / (1.0 + M * floor)
    return SimplexVector(tuple(u))


def random_losses(rng, M, top=5.0):
    while True:
        l = rng.uniform(0.0, top, size=M)
        if l.max() > l.min():
            return LossVector(tuple(l))


class TestPhi:
    def test_direct_substitution_oracle(self):
        u = SimplexVector((0.5, 0.5))
        l = LossVector((0.0, 1.0))
        expected = float(mp_phi(-2.0, u.probs, l.losses))
        assert phi(-2.0, u, l) == pytest.approx(expected, abs=1e-14)
        assert expected == pytest.approx(0.05889151782819173, abs=1e-15)

    def test_random_points_against_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            M = int(rng.integers(2, 6))
            u = random_interior(rng, M)
            l = random_losses(rng, M)
            mu = -l.max_loss - float(rng.uniform(1e-6, 100.0))
            assert phi(mu, u, l) == pytest.approx(
                float(mp_phi(mu, u.probs, l.losses)), abs=1e-12
            )

    def test_vanishes_far_left(self):
        u = SimplexVector((0.3, 0.7))
        l = LossVector((0.0, 1.0))
        assert abs(phi(-1e9 * (1.0 + l.max_loss), u, l)) < 1e-6

    def test_blows_up_at_pole(self):
        # weight 0.1 on the maximal loss makes the divergence fast
        u = SimplexVector((0.9, 0.1))
        l = LossVector((0.0, 1.0))
        assert phi(-l.max_loss - 1e-8, u, l) > 10.0
        # and it keeps growing as the pole is approached
        assert phi(-l.max_loss - 1e-12, u, l) > phi(-l.max_loss - 1e-8, u, l)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            M = int(rng.integers(2, 5))
            u = random_interior(rng, M)
            l = random_losses(rng, M)
            mus = -l.max_loss - np.sort(rng.uniform(1e-4, 50.0, size=4))[::-1]
            values = [phi(float(mu), u, l) for mu in mus]
            assert all(b > a for a, b in zip(values, values[1:]))

    def test_domain_checks(self):
        u = SimplexVector((0.5, 0.5))
        l = LossVector((0.0, 1.0))
        with pytest.raises(ValueError):
            phi(-0.5, u, l)
        with pytest.raises(BoundaryRiskError):
            phi(-2.0, SimplexVector((1.0, 0.0)), l)


class TestSolveMuStar:
    def test_postcondition(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            M = int(rng.integers(2, 6))
            u = random_interior(rng, M)
            l = random_losses(rng, M)
            c = float(rng.uniform(1e-6, 2.0))
            mu = solve_mu_star(u, c, l, tol=1e-12)
            assert mu < -l.max_loss
            assert abs(phi(mu, u, l) - c) <= 1e-12

    def test_tiny_budget_recovers_baseline(self):
        u = SimplexVector((0.25, 0.35, 0.4))
        l = LossVector((0.0, 1.0, 3.0))
        sol = kl_inverse_total(u, 1e-10, l)
        assert max(abs(a - b) for a, b in zip(sol.v_star.probs, u.probs)) < 1e-4
        assert sol.f_star == pytest.approx(total_risk(l, u), abs=1e-4)

    def test_rejects_invalid(self):
        u = SimplexVector((0.5, 0.5))
        l = LossVector((0.0, 1.0))
        with pytest.raises(ValueError):
            solve_mu_star(u, 0.0, l)
        with pytest.raises(BoundaryRiskError):
            solve_mu_star(SimplexVector((1.0, 0.0)), 0.1, l)


class TestKlInverseTotal:
    def test_matches_scalar_bisection_for_binary_losses(self):
        u = SimplexVector((0.1, 0.9))
        l = LossVector((0.0, 1.0))
        sol = kl_inverse_total(u, 0.05, l, tol=1e-13)
        assert sol.f_star == pytest.approx(
            scalar_kl_inverse_upper(0.9, 0.05, tol=1e-13), abs=1e-9
        )

    def test_solution_invariants(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            M = int(rng.integers(2, 6))
            u = random_interior(rng, M)
            l = random_losses(rng, M)
            c = float(rng.uniform(1e-4, 1.5))
            sol = kl_inverse_total(u, c, l, tol=1e-12)
            assert sol.mu_star < -l.max_loss
            assert sol.lambda_star < 0.0
            assert sol.v_star.is_interior()
            assert abs(kl_div(u, sol.v_star) - c) <= 1e-10
            assert sol.f_star >= total_risk(l, u) - 1e-12
            assert sol.f_star <= l.max_loss + 1e-12
            assert sol.grad_c == -sol.lambda_star > 0.0
            # the stated closed form for lambda*
            lam = 1.0 / sum(uj / (sol.mu_star + lj) for uj, lj in zip(u.probs, l.losses))
            assert sol.lambda_star == pytest.approx(lam, rel=1e-12)

    def test_grid_oracle_uniform_three_types(self):
        u = SimplexVector((1 / 3, 1 / 3, 1 / 3))
        l = LossVector((0.0, 1.0, 2.0))
        sol = kl_inverse_total(u, 0.1, l)
        bf = brute_force_kl_inverse(u, 0.1, l, grid_step=1e-3)
        assert abs(sol.f_star - bf) <= 2e-3

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(24)
        u = random_interior(rng, 4)
        l = random_losses(rng, 4)
        sol = kl_inverse_total(u, 0.2, l)
        perm = [2, 0, 3, 1]
        up = SimplexVector(tuple(u[i] for i in perm))
        lp = LossVector(tuple(l[i] for i in perm))
        solp = kl_inverse_total(up, 0.2, lp)
        assert solp.f_star == pytest.approx(sol.f_star, rel=1e-12)
        for new_pos, old_pos in enumerate(perm):
            assert solp.v_star[new_pos] == pytest.approx(sol.v_star[old_pos], rel=1e-10)

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            M = int(rng.integers(2, 5))
            u = random_interior(rng, M)
            l = random_losses(rng, M)
            cs = np.sort(rng.uniform(1e-4, 2.0, size=3))
            fs = [kl_inverse_total(u, float(c), l).f_star for c in cs]
            assert all(b >= a - 1e-12 for a, b in zip(fs, fs[1:]))

    def test_affine_loss_equivariance(self):
        rng = np.random.default_rng(26)
        u = random_interior(rng, 3)
        l = LossVector((0.0, 1.0, 2.0))
        a, b = 2.5, 0.75
        sol = kl_inverse_total(u, 0.3, l)
        sol2 = kl_inverse_total(
            u, 0.3, LossVector(tuple(a * lj + b for lj in l.losses))
        )
        assert sol2.f_star == pytest.approx(a * sol.f_star + b, rel=1e-10)
        for v1, v2 in zip(sol.v_star.probs, sol2.v_star.probs):
            assert v2 == pytest.approx(v1, rel=1e-8)

    def test_degenerate_zero_budget(self):
        u = SimplexVector((0.2, 0.8))
        l = LossVector((0.0, 2.0))
        sol = kl_inverse_total(u, 0.0, l)
        assert sol.v_star is u
        assert sol.f_star == total_risk(l, u)
        assert sol.one_sided
        assert sol.grad_u == l.losses
        assert sol.grad_c == math.inf

    def test_boundary_u_refused(self):
        with pytest.raises(BoundaryRiskError):
            kl_inverse_total(SimplexVector((1.0, 0.0)), 0.1, LossVector((0.0, 1.0)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            kl_inverse_total(SimplexVector((0.5, 0.5)), 0.1, LossVector((0.0, 1.0, 2.0)))


class TestEnvelopeGradients:
    def test_budget_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(27)
        h = 1e-6
        for _ in range(30):
            M = int(rng.integers(2, 6))
            u = random_interior(rng, M, floor=0.05)
            l = random_losses(rng, M)
            c = float(rng.uniform(0.02, 0.5))
            sol = kl_inverse_total(u, c, l, tol=1e-13)
            fd = (
                kl_inverse_total(u, c + h, l, tol=1e-13).f_star
                - kl_inverse_total(u, c - h, l, tol=1e-13).f_star
            ) / (2 * h)
            assert sol.grad_c == pytest.approx(fd, rel=1e-5)

    def test_risk_gradient_matches_simplex_finite_differences(self):
        rng = np.random.default_rng(28)
        h = 1e-6
        for _ in range(30):
            M = int(rng.integers(2, 6))
            u = random_interior(rng, M, floor=0.05)
            l = random_losses(rng, M)
            c = float(rng.uniform(0.02, 0.5))
            sol = kl_inverse_total(u, c, l, tol=1e-13)
            j = int(rng.integers(M))
            # perturb u_j then renormalise; tangent direction is e_j - u
            def shifted(sign):
                probs = np.array(u.probs)
                probs[j] += sign * h
                return SimplexVector(tuple(probs / probs.sum()))

            fd = (
                kl_inverse_total(shifted(+1), c, l, tol=1e-13).f_star
                - kl_inverse_total(shifted(-1), c, l, tol=1e-13).f_star
            ) / (2 * h)
            directional = sum(
                g * (float(i == j) - u[i]) for i, g in enumerate(sol.grad_u)
            )
            assert directional == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_grad_f_star_recomputes_stored_values(self):
        u = SimplexVector((0.3, 0.3, 0.4))
        sol = kl_inverse_total(u, 0.2, LossVector((0.0, 1.0, 2.0)))
        grads, gc = grad_f_star(sol, u)
        assert grads == sol.grad_u
        assert gc == sol.grad_c


class TestScalarInverses:
    def test_zero_budget_is_identity(self):
        assert scalar_kl_inverse_upper(0.3, 0.0) == 0.3
        assert scalar_kl_inverse_lower(0.3, 0.0) == 0.3

    def test_analytic_inversion_at_zero(self):
        # kl(0||p) = -ln(1-p), so the upper inverse at B = ln 2 is 0.5
        assert scalar_kl_inverse_upper(0.0, math.log(2.0)) == pytest.approx(0.5, abs=1e-9)
        assert scalar_kl_inverse_lower(1.0, math.log(2.0)) == pytest.approx(0.5, abs=1e-9)

    def test_grid_scan_oracle(self):
        up = scalar_kl_inverse_upper(0.1, 0.05)
        assert abs(up - grid_scan_upper(0.1, 0.05)) <= 1e-6
        lo = scalar_kl_inverse_lower(0.1, 0.05)
        assert abs(lo - grid_scan_lower(0.1, 0.05)) <= 1e-6

    def test_random_cases_hit_budget(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            q = float(rng.uniform(0.01, 0.99))
            B = float(rng.uniform(1e-4, 1.0))
            up = scalar_kl_inverse_upper(q, B)
            lo = scalar_kl_inverse_lower(q, B)
            assert lo <= q <= up
            assert scalar_kl(q, up) == pytest.approx(B, abs=1e-10)
            if lo > 0.0:
                assert scalar_kl(q, lo) == pytest.approx(B, abs=1e-10)

    def test_saturation(self):
        assert scalar_kl_inverse_upper(0.5, 1e9) == 1.0
        assert scalar_kl_inverse_lower(0.5, 1e9) == 0.0
        assert scalar_kl_inverse_upper(1.0, 0.3) == 1.0
        assert scalar_kl_inverse_lower(0.0, 0.3) == 0.0

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            scalar_kl_inverse_upper(1.5, 0.1)
        with pytest.raises(ValueError):
            scalar_kl_inverse_upper(0.5, -0.1)


class TestBruteForce:
    def test_zero_budget_on_grid(self):
        u = SimplexVector((0.2, 0.8))
        l = LossVector((0.0, 1.0))
        assert brute_force_kl_inverse(u, 0.0, l, grid_step=1e-3) == pytest.approx(
            total_risk(l, u), abs=1e-12
        )

    def test_monotone_in_budget(self):
        u = SimplexVector((0.3, 0.3, 0.4))
        l = LossVector((0.0, 1.0, 2.0))
        vals = [brute_force_kl_inverse(u, c, l, grid_step=2e-3) for c in (0.01, 0.1, 0.5)]
        assert vals == sorted(vals)

    def test_agreement_band_with_solver(self):
        rng = np.random.default_rng(30)
        for _ in range(10):
            M = int(rng.integers(2, 4))
            u = random_interior(rng, M, floor=0.05)
            l = random_losses(rng, M)
            c = float(rng.uniform(0.01, 0.5))
            bf = brute_force_kl_inverse(u, c, l, grid_step=1e-3)
            sol = kl_inverse_total(u, c, l)
            assert bf <= sol.f_star + 1e-9  # grid points are feasible
            assert abs(sol.f_star - bf) <= 2e-3 * l.max_loss

    def test_rejects_large_M(self):
        u = SimplexVector(tuple([0.2] * 5))
        l = LossVector((0.0, 1.0, 2.0, 3.0, 4.0))
        with pytest.raises(ValueError):
            brute_force_kl_inverse(u, 0.1, l, grid_step=0.01)
