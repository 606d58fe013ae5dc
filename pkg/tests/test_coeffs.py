import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wpflsim.coeffs import (BoundConstants, empirical_mu_l, eps_f, eps_p_of,
                            feasible_sets, fl_bound_step, gamma_constants,
                            lambda_of_eta, minimize_phi, optimal_eta_f,
                            phi_terms, pl_bound_overall, theta_l)
from wpflsim.errors import ConfigError, ConstraintViolation
from wpflsim.models import QuadraticModel
from wpflsim.rng import substream

getcontext().prec = 50


def make_consts(mu=0.13, lsmooth=0.43, g0=2.0, m_dist=2.0, clip_c=3.0,
                sigma_dp=0.006, model_size=7850, r_bits=16, **frees):
    beta = 1.0 / (2 ** r_bits - 1)
    e_l = beta * (clip_c + 3 * sigma_dp)
    e_g = beta * clip_c
    return BoundConstants(mu=mu, lsmooth=lsmooth, g0=g0, m_dist=m_dist,
                          clip_c=clip_c, sigma_dp=sigma_dp, model_size=model_size,
                          e_l_max=e_l, e_g_max=e_g, beta_l=beta, beta_g=beta,
                          **frees)


class TestThetaL:
    def test_zero_errors(self):
        assert theta_l(np.zeros(10), make_consts()) == 0.0

    def test_empty_selection(self):
        assert theta_l(np.array([]), make_consts()) == 0.0

    def test_linear_in_error_sum(self):
        c = make_consts()
        base = theta_l(np.full(10, 0.01), c)
        assert theta_l(np.full(10, 0.02), c) == pytest.approx(2 * base, rel=1e-12)

    def test_frozen_value(self):
        # high-precision oracle: (2C^2 + (2-b^2) w (C+3s)^2 - w s^2) / 10 * 0.1
        b = Decimal(1) / Decimal(2 ** 16 - 1)
        cd, sd, wd = Decimal(3), Decimal("0.006"), Decimal(7850)
        coef = 2 * cd ** 2 + (2 - b * b) * wd * (cd + 3 * sd) ** 2 - wd * sd * sd
        expected = float(coef / 10 * Decimal("0.1"))
        got = theta_l(np.full(10, 0.01), make_consts())
        assert got == pytest.approx(expected, rel=1e-12)


class TestEpsF:
    def test_frozen_value(self):
        got = eps_f(0.3481, make_consts(phi1=0.01, phi2=0.01, varphi1=0.01, varphi2=0.01))
        expected = 1.01 * (1.01 + 1.01 * 0.43 ** 2 * 0.3481 ** 2 - 0.13 * 0.3481)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.99725, abs=1e-4)

    def test_violation_at_tiny_rate(self):
        with pytest.raises(ConstraintViolation):
            eps_f(1e-9, make_consts())

    def test_parabola_vertex(self):
        c = make_consts()
        eta = optimal_eta_f(c)
        lo = eps_f(eta, c, check=False)
        assert lo <= eps_f(eta - 0.01, c, check=False)
        assert lo <= eps_f(eta + 0.01, c, check=False)

    def test_convex_in_eta(self):
        c = make_consts()
        f = lambda e: eps_f(e, c, check=False)
        h = 1e-4
        for eta in np.linspace(0.05, 0.9, 30):
            assert f(eta - h) + f(eta + h) - 2 * f(eta) >= -1e-12


class TestOptimalEtaF:
    def test_mlr_profile(self):
        assert optimal_eta_f(make_consts(phi1=0.01, phi2=0.01, varphi1=0.01)) == \
            pytest.approx(0.13 / (2 * 1.01 * 0.43 ** 2), rel=1e-12)

    def test_steeper_profile(self):
        # construction fails eps_F feasibility at these defaults, so check the
        # vertex formula directly
        assert 0.27 / (2 * 1.01 * 1.32 ** 2) == pytest.approx(0.0767, abs=1e-4)
        c = make_consts(mu=0.27, lsmooth=1.32, phi1=1e-3, phi2=1e-3,
                        varphi1=1e-3, varphi2=1e-3)
        assert optimal_eta_f(c) == pytest.approx(0.27 / (2 * 1.001 * 1.32 ** 2), rel=1e-12)

    def test_flat_landscape_rejected(self):
        with pytest.raises(ConfigError):
            make_consts(mu=0.2, lsmooth=0.2)


class TestGammaConstants:
    def test_theta_zero_collapses(self):
        c = make_consts()
        g = gamma_constants(c, 0.0, 0.0)
        assert g.gamma2 == g.gamma0
        assert g.gamma3 == g.gamma1

    def test_vanishing_noise_and_quantization(self):
        c = BoundConstants(mu=0.13, lsmooth=0.43, g0=2.0, m_dist=2.0, clip_c=3.0,
                           sigma_dp=0.0, model_size=7850, e_l_max=0.0, e_g_max=0.0,
                           beta_l=0.0, beta_g=0.0)
        g = gamma_constants(c, 0.0, 0.0)
        assert g.gamma1 == 0.0

    def test_frozen_full_evaluation(self):
        c = make_consts(phi1=0.01, phi2=0.01, varphi1=0.01, varphi2=0.01)
        g = gamma_constants(c, 100.0, 0.5)
        p = Decimal("0.01")
        w, cd = Decimal(7850), Decimal(3)
        e_l = (cd + 3 * Decimal("0.006")) / Decimal(2 ** 16 - 1)
        e_g = cd / Decimal(2 ** 16 - 1)
        noise = Decimal("0.006") ** 2 + e_l ** 2
        g0 = (1 + 1 / p) * (2 * (1 + 1 / p) * cd ** 2 + 2 * w * (1 + p) * noise
                            + 2 * w * (cd ** 2 - e_l ** 2))
        g1 = w * (1 + p) * (1 + 1 / p + 1 / p) * noise + 2 * w * (1 + 1 / p) * e_g ** 2
        assert g.gamma0 == pytest.approx(float(g0), rel=1e-12)
        assert g.gamma1 == pytest.approx(float(g1), rel=1e-12)
        assert g.gamma2 == pytest.approx(float(2 * (1 + 1 / p) * (1 + p) * 100 + g0), rel=1e-12)
        assert g.gamma3 == pytest.approx(float((1 + p) * (1 + 1 / p + 1 / p) * 100 + g1), rel=1e-12)
        assert g.h1 == pytest.approx(float(2 * (1 + 1 / p) * (1 + p) * Decimal("0.5")
                                           + (1 + p) * (1 + 1 / p + 1 / p)), rel=1e-12)


class TestLambdaEta:
    def test_zero_at_double_root(self):
        mu = 0.13
        eps_p = 1 - mu * mu / 4
        assert lambda_of_eta(mu / 2, eps_p, mu) == pytest.approx(0.0, abs=1e-12)

    def test_two_at_left_endpoint(self):
        mu, eps_p = 0.13, 1 - 0.13 ** 2 / 4
        eta1 = 1 - math.sqrt(eps_p)
        assert lambda_of_eta(eta1, eps_p, mu) == pytest.approx(2.0, rel=1e-9)

    def test_zero_at_eta2_root(self):
        assert lambda_of_eta(0.05, 0.996, 0.13) == pytest.approx(0.0, abs=1e-12)
        assert lambda_of_eta(0.08, 0.996, 0.13) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_zero_eta(self):
        with pytest.raises(ValueError):
            lambda_of_eta(0.0, 0.99, 0.13)


class TestEpsP:
    def test_at_zero_rate(self):
        assert eps_p_of(0.0, 1.0, 0.13) == 1.0

    def test_frozen_value(self):
        assert eps_p_of(0.03, 1.0, 0.13) == pytest.approx(0.96895, rel=1e-12)

    @given(st.floats(0.05, 1.9), st.floats(0.0, 0.2), st.floats(0.01, 0.99))
    @settings(max_examples=200)
    def test_algebraic_inverse(self, mu, margin, frac):
        # any eta in the feasible sets maps back to the configured eps_p
        eps_p = 1 - mu * mu / 4 + margin * (mu * mu / 4)
        if not eps_p < 1:
            return
        omega0, omega1 = feasible_sets(eps_p, mu)
        for region in (omega0, omega1):
            if region is None:
                continue
            lo, hi = region
            eta = lo + frac * (hi - lo)
            if not lo < eta < hi:
                continue
            lam = lambda_of_eta(eta, eps_p, mu)
            assert eps_p_of(eta, lam, mu) == pytest.approx(eps_p, abs=1e-12)
            assert 0.0 < lam < 2.0


class TestFeasibleSets:
    def test_mlr_case(self):
        omega0, omega1 = feasible_sets(0.996, 0.13)
        assert omega0[0] == pytest.approx(1 - math.sqrt(0.996), rel=1e-12)
        assert omega0[1] == pytest.approx(0.05, rel=1e-9)
        assert omega1[0] == pytest.approx(0.08, rel=1e-9)
        assert omega1[1] == 1.0

    def test_second_region_empty(self):
        omega0, omega1 = feasible_sets(0.6, 1.5)
        assert omega0[0] == pytest.approx(1 - math.sqrt(0.6), rel=1e-12)
        assert omega0[1] == pytest.approx((1.5 - math.sqrt(1.5 ** 2 - 1.6)) / 2, rel=1e-12)
        assert omega1 is None

    def test_zero_discriminant(self):
        mu = 0.13
        omega0, omega1 = feasible_sets(1 - mu * mu / 4, mu)
        assert omega0[1] == pytest.approx(mu / 2, rel=1e-12)

    def test_rejects_bad_eps_p(self):
        with pytest.raises(ConfigError):
            feasible_sets(0.5, 0.13)
        with pytest.raises(ConfigError):
            feasible_sets(1.0, 0.13)


class TestPhiTerms:
    def test_lambda_two_gradient_term(self):
        c = make_consts()
        g, _, _ = phi_terms(0.01, 2.0, c, gamma_constants(c, 0.0, 0.0), 0.0, 0.0, 1)
        assert g == pytest.approx((2 * (c.g0 / c.mu + c.m_dist)) ** 2, rel=1e-12)

    def test_eta_zero_limit(self):
        c = make_consts()
        gam = gamma_constants(c, 10.0, 0.0)
        lam = 0.7
        _, psi, phi = phi_terms(0.0, lam, c, gam, 0.2, 5.0, 10)
        assert psi == pytest.approx(lam ** 2, rel=1e-12)
        fl = (c.g0 ** 2 + c.m_dist * c.mu) ** 2 / (10 * c.mu ** 2) * 5.0
        assert phi == pytest.approx(psi * (gam.gamma2 * 0.2 + gam.gamma3 + fl), rel=1e-12)

    def test_lambda_zero_rejected(self):
        c = make_consts()
        with pytest.raises(ValueError):
            phi_terms(0.01, 0.0, c, gamma_constants(c, 0.0, 0.0), 0.0, 0.0, 1)

    def test_empty_selection_drops_fl_term(self):
        c = make_consts()
        gam = gamma_constants(c, 0.0, 0.0)
        _, psi, phi = phi_terms(0.01, 0.5, c, gam, 0.0, 0.0, 0)
        g = ((1 - 0.25) * c.g0 + 0.5 * (c.g0 / c.mu + c.m_dist)) ** 2
        assert phi == pytest.approx((1 + 0.125) * 1e-4 * g + psi * gam.gamma3, rel=1e-12)


class TestMinimizePhi:
    def test_matches_dense_grid(self):
        c = make_consts()
        gam = gamma_constants(c, 50.0, 0.0)
        eps_p = 1 - c.mu ** 2 / 8
        eta, lam, phi = minimize_phi(c, gam, 1e-4, 5.0, 10, eps_p)
        omega0, omega1 = feasible_sets(eps_p, c.mu)
        best = np.inf
        for region in (omega0, omega1):
            if region is None:
                continue
            lo, hi = region
            m = max(1e-12, 1e-9 * (hi - lo))
            grid = np.linspace(lo + m, hi - m, 200_000)
            lams = ((1 - eps_p) / grid + grid - c.mu) / (1 - c.mu / 2)
            psi = (grid ** 2 + 1) * lams ** 2 + grid ** 3 / lams
            gterm = ((1 - lams / 2) * c.g0 + lams * (c.g0 / c.mu + c.m_dist)) ** 2
            fl = (c.g0 ** 2 + c.m_dist * c.mu) ** 2 / (10 * c.mu ** 2) * 5.0
            vals = (1 + lams ** 3) * grid ** 2 * gterm + psi * (gam.gamma2 * 1e-4 + gam.gamma3 + fl)
            best = min(best, vals.min())
        assert phi == pytest.approx(best, abs=1e-6 * (1 + abs(best)))
        assert eps_p_of(eta, lam, c.mu) == pytest.approx(eps_p, abs=1e-12)

    def test_single_region_case(self):
        # second interval empty: search must still succeed on the first
        c = make_consts(mu=1.5, lsmooth=2.5, phi1=1e-3, phi2=1e-3,
                        varphi1=1e-3, varphi2=1e-3)
        gam = gamma_constants(c, 1.0, 0.0)
        eta, lam, phi = minimize_phi(c, gam, 0.0, 1.0, 5, 0.6)
        omega0, omega1 = feasible_sets(0.6, 1.5)
        assert omega1 is None
        assert omega0[0] < eta < omega0[1]
        assert 0.0 < lam < 2.0

    def test_phi_positive_on_feasible_sets(self):
        rng = substream(11, "pos")
        done = 0
        while done < 50:
            mu = rng.uniform(0.1, 1.7)
            try:
                c = make_consts(mu=mu, lsmooth=mu * rng.uniform(1.1, 2.0),
                                g0=rng.uniform(0.5, 3), m_dist=rng.uniform(0.5, 3),
                                phi1=1e-3, phi2=1e-3, varphi1=1e-3, varphi2=1e-3)
            except ConfigError:
                continue  # vertex of eps_F outside (0, 1); redraw
            done += 1
            eps_p = 1 - mu * mu / rng.uniform(4.5, 16)
            gam = gamma_constants(c, rng.uniform(0, 100), 0.0)
            for region in feasible_sets(eps_p, mu):
                if region is None:
                    continue
                lo, hi = region
                for frac in (0.1, 0.5, 0.9):
                    eta = lo + frac * (hi - lo)
                    lam = lambda_of_eta(eta, eps_p, mu)
                    if not 0 < lam < 2:
                        continue
                    _, psi, phi = phi_terms(eta, lam, c, gam,
                                            rng.uniform(0, 1), 1.0, 5)
                    assert psi > 0 and phi > 0

    def test_numerical_convexity_along_eta(self):
        c = make_consts()
        gam = gamma_constants(c, 50.0, 0.0)
        eps_p = 1 - c.mu ** 2 / 8
        omega0, _ = feasible_sets(eps_p, c.mu)
        lo, hi = omega0
        h = 1e-4 * (hi - lo)

        def f(eta):
            lam = lambda_of_eta(eta, eps_p, c.mu)
            return phi_terms(eta, lam, c, gam, 1e-4, 5.0, 10)[2]

        for eta in np.linspace(lo + 5 * h, hi - 5 * h, 100):
            assert f(eta - h) + f(eta + h) - 2 * f(eta) >= -1e-8


class TestBoundRecursions:
    def test_fl_step(self):
        assert fl_bound_step(1.0, 0.5, 0.0) == 0.5

    def test_fl_fixed_point(self):
        eps, gamma = 0.8, 3.0
        fp = gamma / (1 - eps)
        assert fl_bound_step(fp, eps, gamma) == pytest.approx(fp, rel=1e-12)

    def test_fl_frozen_value(self):
        c = make_consts()
        gam = gamma_constants(c, 1430.184, 0.001)
        gamma_next = gam.h1 * 1430.184 + gam.gamma0 * 0.001 + gam.gamma1
        out = fl_bound_step(10.0, 0.9, gamma_next)
        assert out == pytest.approx(9.0 + gamma_next, rel=1e-12)

    def test_pl_overall_zero_rounds(self):
        assert pl_bound_overall(7.0, 0.9, 5.0, 0) == 7.0

    def test_pl_overall_pure_decay(self):
        assert pl_bound_overall(2.0, 0.5, 0.0, 10) == pytest.approx(2.0 * 0.5 ** 10)

    def test_pl_overall_geometric_limit(self):
        val = pl_bound_overall(1.0, 0.9, 2.0, 2000)
        assert val == pytest.approx(2.0 / 0.1, rel=1e-9)

    def test_pl_overall_divergent_rejected(self):
        with pytest.raises(ConstraintViolation):
            pl_bound_overall(1.0, 1.0, 2.0, 5)


class TestEmpiricalMuL:
    def test_quadratic_eigenvalues(self):
        model = QuadraticModel(np.array([0.2, 1.5]))
        x = substream(0, "q").normal(0, 1, (50, 2))
        y = np.zeros(50, dtype=int)
        mu, lsmooth = empirical_mu_l(model, x, y, substream(1, "q"), n_pairs=10_000)
        assert mu == pytest.approx(0.2, rel=0.05)
        assert lsmooth == pytest.approx(1.5, rel=0.05)

    def test_ordering(self):
        model = QuadraticModel(np.array([0.3, 0.7, 1.1]))
        x = substream(2, "q").normal(0, 1, (20, 3))
        mu, lsmooth = empirical_mu_l(model, x, np.zeros(20, dtype=int),
                                     substream(3, "q"), n_pairs=50)
        assert mu <= lsmooth

    def test_too_few_pairs(self):
        model = QuadraticModel(np.array([1.0]))
        with pytest.raises(ValueError):
            empirical_mu_l(model, np.zeros((5, 1)), np.zeros(5, dtype=int),
                           substream(0, "q"), n_pairs=1)


class TestBoundConstantsValidation:
    def test_defaults_reject_steep_profile(self):
        # 0.01 free constants violate the contraction requirement here
        with pytest.raises(ConfigError):
            make_consts(mu=0.27, lsmooth=1.32, phi1=0.01, phi2=0.01,
                        varphi1=0.01, varphi2=0.01)

    def test_smaller_constants_fix_it(self):
        c = make_consts(mu=0.27, lsmooth=1.32, phi1=1e-3, phi2=1e-3,
                        varphi1=1e-3, varphi2=1e-3)
        assert 0 < eps_f(optimal_eta_f(c), c) < 1

    def test_mu_bounds(self):
        with pytest.raises(ConfigError):
            make_consts(mu=2.0, lsmooth=2.5)
        with pytest.raises(ConfigError):
            make_consts(mu=0.5, lsmooth=0.3)
