import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from urnkit.model import (
    ReplacementDistribution,
    ReplacementStructure,
    cyclic,
    friedman,
    matching,
    mean_matrix,
)
from urnkit.spectral import classify, decomposition_for
from urnkit import limits as L


def yule() -> ReplacementStructure:
    return ReplacementStructure(
        a=(1.0,), rules=(ReplacementDistribution(0, (((1,), 1.0),)),), S=1.0
    )


def pure_death() -> ReplacementStructure:
    return ReplacementStructure(
        a=(1.0,), rules=(ReplacementDistribution(0, (((-1,), 1.0),)),), S=-1.0
    )


def blocks_at(structure, lam):
    dec = decomposition_for(mean_matrix(structure))
    return dec, dec.blocks_at(lam)


class TestCovW1:
    def test_single_colour_deterministic(self):
        s = ReplacementStructure(
            a=(1.0,), rules=(ReplacementDistribution(0, (((3,), 1.0),)),), S=3.0
        )
        assert L.cov_W1(1, 1, s, [1.0]).cov[0, 0] == pytest.approx(9.0)

    def test_friedman_2_1(self):
        cov = L.cov_W1(1, 1, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, [[2.5, 2], [2, 2.5]], atol=1e-12)

    def test_zero_time(self):
        np.testing.assert_array_equal(L.cov_W1(0, 0, friedman(2, 1), [0.5, 0.5]).cov, 0)

    def test_min_rule(self):
        c1 = L.cov_W1(0.5, 2.0, friedman(2, 1), [0.5, 0.5]).cov
        c2 = L.cov_W1(0.5, 0.5, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(c1, c2)

    def test_negative_time_rejected(self):
        with pytest.raises(L.DomainError):
            L.cov_W1(-1, 0, friedman(2, 1), [0.5, 0.5])


class TestCovW2:
    def test_zero_start(self):
        cov = L.cov_W2(0.0, 0.7, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, 0, atol=1e-12)

    def test_yule_closed_form(self):
        for t in (0.5, 1.0, 2.0):
            cov = L.cov_W2(t, t, yule(), [1.0]).cov
            assert cov[0, 0] == pytest.approx(math.e ** (2 * t) - math.e**t, abs=1e-8)

    def test_matching_bridge(self):
        d = 2
        for t1, t2 in [(0.3, 0.3), (0.3, 0.6), (0.5, 0.9)]:
            s1, s2 = -math.log(1 - t1), -math.log(1 - t2)
            cov = L.cov_W2(s1, s2, matching(d), [0.5, 0.5]).cov
            np.testing.assert_allclose(cov, t1 * (1 - t2) / d * np.eye(d), atol=1e-8)

    def test_psd_monotone_in_t(self):
        prev = None
        for t in (0.25, 0.5, 1.0, 2.0):
            cov = L.cov_W2(t, t, friedman(2, 1), [0.5, 0.5]).cov
            if prev is not None:
                eigs = np.linalg.eigvalsh(cov - prev)
                assert eigs.min() > -1e-9
            prev = cov

    def test_quad_refinement_within_error(self):
        c1 = L.cov_W2(1.0, 1.0, friedman(2, 1), [0.5, 0.5], quad_tol=1e-7)
        c2 = L.cov_W2(1.0, 1.0, friedman(2, 1), [0.5, 0.5], quad_tol=5e-8)
        assert np.abs(c1.cov - c2.cov).max() <= max(c1.quad_error, 1e-7)


class TestCovWs:
    def test_friedman_2_1_stationary_variance(self):
        cov = L.cov_Ws(0.0, 0.0, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-8)

    def test_shift_invariance(self):
        a = L.cov_Ws(0.3, 1.1, friedman(2, 1), [0.5, 0.5]).cov
        b = L.cov_Ws(1.3, 2.1, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_long_lag_decorrelates(self):
        far = L.cov_Ws(0.0, 40.0, friedman(2, 1), [0.5, 0.5]).cov
        assert np.abs(far).max() < 1e-8

    def test_mu_invariance_when_leading_simple(self):
        a = L.cov_Ws(0.0, 0.0, friedman(2, 1), [0.5, 0.5]).cov
        b = L.cov_Ws(0.0, 0.0, friedman(2, 1), [0.3, 0.7]).cov
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_requires_small_spectrum(self):
        with pytest.raises(L.DomainError):
            L.cov_Ws(0.0, 0.0, friedman(5, 1), [0.5, 0.5])


class TestCovWJk:
    def test_friedman_3_1_unit_time(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        cov = L.cov_WJk(1.0, 1.0, blk, 1, f31, [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, [[1, -1], [-1, 1]], atol=1e-10)

    def test_brownian_linearity_in_t(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        c1 = L.cov_WJk(0.5, 0.5, blk, 1, f31, [0.5, 0.5]).cov
        c2 = L.cov_WJk(1.5, 1.5, blk, 1, f31, [0.5, 0.5]).cov
        np.testing.assert_allclose(3 * c1, c2, atol=1e-10)

    def test_zero_time(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        np.testing.assert_allclose(
            L.cov_WJk(0.0, 0.0, blk, 1, f31, [0.5, 0.5]).cov, 0, atol=1e-12
        )

    def test_mu_invariance_when_leading_simple(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        a = L.cov_WJk(1.0, 1.0, blk, 1, f31, [0.5, 0.5]).cov
        b = L.cov_WJk(1.0, 1.0, blk, 1, f31, [0.2, 0.8]).cov
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_complex_law_has_zero_pseudo_cov(self):
        s = cyclic(2, 1, 3)
        dec = decomposition_for(mean_matrix(s))
        blk = next(b for b in dec.blocks if b.lam.imag > 1e-9)
        lc = L.cov_WJk(1.0, 1.0, blk, 1, s, [1 / 3] * 3)
        np.testing.assert_allclose(lc.pseudo_cov, 0, atol=1e-12)
        np.testing.assert_allclose(lc.cov, lc.cov.conj().T, atol=1e-10)

    def test_non_critical_block_rejected(self):
        f21 = friedman(2, 1)
        dec, (blk,) = blocks_at(f21, 1.0)  # small, not critical
        with pytest.raises(L.DomainError):
            L.cov_WJk(1.0, 1.0, blk, 1, f21, [0.5, 0.5])


class TestCrossCovCritical:
    def test_conjugate_pair_couples_through_plain_moment(self):
        s = cyclic(2, 1, 3)
        dec = decomposition_for(mean_matrix(s))
        blk = next(b for b in dec.blocks if b.lam.imag > 1e-9)
        conj_blk = dec.blocks[blk.conj_index]
        cov, pseudo = L.cross_cov_critical(
            blk, 1, conj_blk, 1, 1.0, 1.0, s, [1 / 3] * 3
        )
        np.testing.assert_allclose(cov, 0, atol=1e-12)       # different eigenvalues
        assert np.abs(pseudo).max() > 1e-6                   # mutual conjugates couple

    def test_self_consistency_with_cov_WJk(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        cov, _ = L.cross_cov_critical(blk, 1, blk, 1, 0.7, 1.3, f31, [0.5, 0.5])
        ref = L.cov_WJk(0.7, 1.3, blk, 1, f31, [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, ref, atol=1e-12)


class TestPolyTimeIntegral:
    def test_known_value(self):
        assert L.poly_time_integral(0.7, 1.3, 1, 2, 1) == pytest.approx(
            0.7 * 1.3 - 0.7**2 / 2
        )

    @settings(max_examples=30, deadline=None)
    @given(
        st.floats(0.05, 2.0),
        st.floats(0.0, 2.0),
        st.integers(1, 3),
        st.integers(1, 3),
        st.integers(1, 2),
    )
    def test_matches_numeric_quadrature(self, t1, dt, k1, k2, m1):
        t2 = t1 + dt
        exact = L.poly_time_integral(t1, t2, k1, k2, m1)
        num, _ = quad(
            lambda v: (t1 - v) ** (k1 - 1) * (t2 - v) ** (k2 - 1) * v ** (m1 - 1),
            0.0,
            t1,
        )
        assert exact == pytest.approx(num, rel=1e-9, abs=1e-12)


class TestVarVJ:
    def test_friedman_5_1_second_block(self):
        f51 = friedman(5, 1)
        dec, (blk,) = blocks_at(f51, 4.0)
        cov, pseudo, horizon = L.var_VJ(blk, blk, f51, [0.5, 0.5])
        np.testing.assert_allclose(cov, [[2, -2], [-2, 2]], atol=1e-8)
        np.testing.assert_allclose(pseudo, cov, atol=1e-10)
        assert horizon < 1e4

    def test_leading_block_mass_variance(self):
        # a' Var(V_lead) a = S beta1 exactly (mass martingale variance)
        f51 = friedman(5, 1)
        dec, (blk,) = blocks_at(f51, 6.0)
        for mu in ([0.5, 0.5], [0.3, 0.7]):
            cov, _, _ = L.var_VJ(blk, blk, f51, mu)
            beta1 = float(np.dot([1.0, 1.0], mu))
            assert np.ones(2) @ np.real(cov) @ np.ones(2) == pytest.approx(
                6.0 * beta1, abs=1e-7
            )

    def test_cross_block_covariance(self):
        # vanishes at the symmetric composition, scales with mu1 - mu2
        f51 = friedman(5, 1)
        dec = decomposition_for(mean_matrix(f51))
        J1 = dec.blocks_at(6.0)[0]
        J2 = dec.blocks_at(4.0)[0]
        cov0, _, _ = L.var_VJ(J2, J1, f51, [0.5, 0.5])
        np.testing.assert_allclose(cov0, 0, atol=1e-9)
        cov, _, _ = L.var_VJ(J2, J1, f51, [0.3, 0.7])
        expected = (5 - 1) * (0.3 - 0.7) / 4 * np.array([[1, 1], [-1, -1]])
        np.testing.assert_allclose(cov, expected, atol=1e-8)

    def test_small_block_rejected(self):
        f21 = friedman(2, 1)
        dec, (blk,) = blocks_at(f21, 1.0)
        with pytest.raises(L.DomainError):
            L.var_VJ(blk, blk, f21, [0.5, 0.5])


class TestUrnLimits:
    def test_y1_friedman(self):
        cov = L.cov_Y1(1.0, 1.0, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(cov, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-12)

    def test_y1_single_colour_degenerates(self):
        s = ReplacementStructure(
            a=(1.0,), rules=(ReplacementDistribution(0, (((2,), 1.0),)),), S=2.0
        )
        assert abs(L.cov_Y1(1.0, 1.0, s, [1.0]).cov[0, 0]) < 1e-14

    def test_y1_consistency_chain(self):
        for mu in ([0.5, 0.5], [0.25, 0.75]):
            for s in (friedman(2, 1), friedman(5, 1)):
                direct = L.cov_Y1(1.0, 1.0, s, mu).cov
                mapped = L.cov_Y1_via_W1(1.0, 1.0, s, mu).cov
                assert np.abs(direct - mapped).max() < 1e-10

    def test_y2_matching_bridge_variance(self):
        d = 4
        cov = L.cov_Y2(0.5, 0.5, matching(d), [0.25] * 4).cov
        expected = 0.5 * 0.5 / d * (np.eye(d) - np.ones((d, d)) / d)
        np.testing.assert_allclose(cov, expected, atol=1e-8)
        assert cov[0, 0] == pytest.approx(0.25 * 0.25 * (d - 1) / d, abs=1e-8)

    def test_y2_domain_guard(self):
        with pytest.raises(L.DomainError, match="extinct"):
            L.cov_Y2(0.5, 1.5, matching(2), [0.5, 0.5])

    def test_ys_scaling_of_ws(self):
        ys = L.cov_Ys(1.0, 1.0, friedman(2, 1), [0.5, 0.5]).cov
        ws = L.cov_Ws(0.0, 0.0, friedman(2, 1), [0.5, 0.5]).cov
        np.testing.assert_allclose(ys, 3.0 * ws, atol=1e-9)

    def test_ys_lag_decay_exponent(self):
        t1, t2 = 0.5, 1.0
        lag = L.cov_Ys(t1, t2, friedman(2, 1), [0.5, 0.5]).cov
        var = L.cov_Ys(t1, t1, friedman(2, 1), [0.5, 0.5]).cov
        ratio = lag[0, 0] / var[0, 0]
        assert ratio == pytest.approx((t2 / t1) ** ((1 - 1.5) / 3), abs=1e-9)

    def test_zj_friedman_5_1(self):
        f51 = friedman(5, 1)
        dec, (blk,) = blocks_at(f51, 4.0)
        cov = L.cov_ZJ(blk, blk, f51, [0.5, 0.5]).cov
        expected = 6 ** (4 / 3) * np.array([[2, -2], [-2, 2]])
        np.testing.assert_allclose(np.real(cov), expected, atol=1e-6)

    def test_zj_depends_on_mu(self):
        f51 = friedman(5, 1)
        dec, (blk,) = blocks_at(f51, 4.0)
        sym = np.real(L.cov_ZJ(blk, blk, f51, [0.5, 0.5]).cov)
        asym = np.real(L.cov_ZJ(blk, blk, f51, [0.3, 0.7]).cov)
        assert np.abs(sym - asym).max() > 1e-3

    def test_zs_single_colour_is_zero(self):
        s = ReplacementStructure(
            a=(1.0,), rules=(ReplacementDistribution(0, (((2,), 1.0),)),), S=2.0
        )
        np.testing.assert_allclose(L.cov_ZS(s, [1.0]).cov, 0, atol=1e-9)

    def test_yjk_scalar_map(self):
        f31 = friedman(3, 1)
        dec, (blk,) = blocks_at(f31, 2.0)
        y = L.cov_YJk(1.0, 1.0, blk, 1, f31, [0.5, 0.5]).cov
        w = L.cov_WJk(1.0, 1.0, blk, 1, f31, [0.5, 0.5]).cov
        S, beta1, kappa, lam = 4.0, 1.0, 1, 2.0
        scale = (S ** -(kappa - 0.5) * (S / beta1) ** (lam / S)) ** 2
        np.testing.assert_allclose(y, scale * w, atol=1e-10)


class TestUrnLimitDispatcher:
    def test_modes_match_law_functions(self):
        f21 = friedman(2, 1)
        mu = [0.5, 0.5]
        np.testing.assert_allclose(
            L.urn_limit_cov("ibd", 1, 1, f21, mu).cov, L.cov_Y1(1, 1, f21, mu).cov
        )
        np.testing.assert_allclose(
            L.urn_limit_cov("tr", 0.5, 0.5, f21, mu).cov,
            L.cov_Y2(0.5, 0.5, f21, mu).cov,
        )
        np.testing.assert_allclose(
            L.urn_limit_cov("tsd-small", 1, 1, f21, mu).cov,
            L.cov_Ys(1, 1, f21, mu).cov,
        )

    def test_large_mode_picks_dominant_block(self):
        f51 = friedman(5, 1)
        auto = L.urn_limit_cov("tsd-large", 1, 1, f51, [0.5, 0.5]).cov
        expected = 6 ** (4 / 3) * np.array([[2, -2], [-2, 2]])
        np.testing.assert_allclose(np.real(auto), expected, atol=1e-6)

    def test_nonsimple_aggregates_leading_blocks(self):
        from urnkit.model import identity

        cov = L.urn_limit_cov("tsd-large", 1, 1, identity(2, 1), [0.5, 0.5]).cov
        # two-colour identity urn: Z_S is the Gaussian limit of the Dirichlet
        # split; nonzero anti-diagonal structure, exactly mass-neutral
        assert np.abs(cov).max() > 1e-3
        np.testing.assert_allclose(np.ones(2) @ np.real(cov) @ np.ones(2), 0, atol=1e-8)

    def test_critical_mode_needs_block(self):
        with pytest.raises(L.DomainError):
            L.urn_limit_cov("tsd-critical", 1, 1, friedman(3, 1), [0.5, 0.5])


class TestOscillatoryCompose:
    def test_zero_phase_returns_real_part(self):
        re, im = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        out = L.oscillatory_compose(1 + 1j, 100, 100, 1.0, re, im, S=2.0)
        np.testing.assert_allclose(out, re)  # log(n/N) = 0

    def test_quarter_period(self):
        re, im = np.array([1.0]), np.array([3.0])
        lam = 1 + 2j
        n, N, S = 1000, 10, 2.0
        t = math.pi / 2 * S / (lam.imag * math.log(n / N))
        out = L.oscillatory_compose(lam, n, N, t, re, im, S=S)
        np.testing.assert_allclose(out, -im, atol=1e-12)

    def test_period(self):
        lam, n, N, S = 1 + 3j, 500, 5, 4.0
        period = 2 * math.pi * S / (lam.imag * math.log(n / N))
        re, im = np.array([1.7]), np.array([-0.4])
        a = L.oscillatory_compose(lam, n, N, 0.3, re, im, S=S)
        b = L.oscillatory_compose(lam, n, N, 0.3 + period, re, im, S=S)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_real_eigenvalue_rejected(self):
        with pytest.raises(L.DomainError):
            L.oscillatory_compose(2.0, 10, 5, 1.0, np.ones(1), np.ones(1), S=1.0)


class TestCentering:
    def test_t_zero_linear_clock(self):
        # ell_1(n, 0) = 0, so linear-clock centerings start at N mu
        dec = decomposition_for(mean_matrix(friedman(2, 1)))
        for mode in ("ibd", "tr", "tsd-small"):
            out = L.centering(mode, 100, 1000, 0.0, dec, [0.5, 0.5], S=3.0, beta1=1.0)
            np.testing.assert_allclose(out, [500, 500], atol=1e-9)

    def test_t_zero_stretched_clock_is_draw_N(self):
        # the stretched clock starts at draw N: ell_2(n, 0) = log(1 + S/beta1)
        dec = decomposition_for(mean_matrix(friedman(2, 1)))
        N = 1000
        out = L.centering("tsd-large", 100000, N, 0.0, dec, [0.5, 0.5], S=3.0, beta1=1.0)
        assert out.sum() == pytest.approx(N * 1.0 + 3.0 * N, rel=1e-12)

    def test_matching_linear_decay(self):
        dec = decomposition_for(mean_matrix(matching(2)))
        n = N = 1000
        for t in (0.25, 0.5, 0.75):
            out = L.centering("tr", n, N, t, dec, [0.5, 0.5], S=-1.0, beta1=1.0)
            np.testing.assert_allclose(out, n * (1 - t) / 2 * np.ones(2), atol=1e-8)

    def test_tsd_stretched_clock_mass(self):
        # a . centering must equal N beta1 + S N (n/N)^t exactly
        dec = decomposition_for(mean_matrix(friedman(5, 1)))
        n, N, t = 10**6, 100, 0.75
        out = L.centering("tsd-large", n, N, t, dec, [0.5, 0.5], S=6.0, beta1=1.0)
        assert out.sum() == pytest.approx(N + 6 * N * (n / N) ** t, rel=1e-12)

    def test_domain_violation_is_error(self):
        dec = decomposition_for(mean_matrix(matching(2)))
        with pytest.raises(L.DomainError):
            L.centering("tr", 1000, 1000, 1.5, dec, [0.5, 0.5], S=-1.0, beta1=1.0)

    def test_spectral_vs_series_expm(self):
        import scipy.linalg

        A = mean_matrix(friedman(2, 1))
        dec = decomposition_for(A)
        n, N, t = 10**4, 100, 1.0
        ell = math.log1p(3 * (n / N) ** t) / 3
        spectral = L.centering("tsd-critical", n, N, t, dec, [0.5, 0.5], S=3.0, beta1=1.0)
        series = N * scipy.linalg.expm(A * ell) @ np.array([0.5, 0.5])
        np.testing.assert_allclose(spectral, series, rtol=1e-10)


class TestMcbpSecondMoment:
    def test_t_zero(self):
        mean, cov = L.mcbp_second_moment(friedman(2, 1), [5, 5], 0.0)
        np.testing.assert_allclose(mean, [5, 5])
        np.testing.assert_allclose(cov, 0)

    def test_yule(self):
        mean, cov = L.mcbp_second_moment(yule(), [1.0], 1.0)
        assert mean[0] == pytest.approx(math.e, abs=1e-10)
        assert cov[0, 0] == pytest.approx(math.e**2 - math.e, abs=1e-8)

    def test_pure_death(self):
        t = 0.9
        mean, cov = L.mcbp_second_moment(pure_death(), [5.0], t)
        assert mean[0] == pytest.approx(5 * math.exp(-t), abs=1e-10)
        assert cov[0, 0] == pytest.approx(5 * math.exp(-t) * (1 - math.exp(-t)), abs=1e-8)


class TestScaling:
    def test_unknown_mode_rejected(self):
        from urnkit.model import UrnSpec

        spec = UrnSpec(friedman(2, 1), N=10, mu=["1/2", "1/2"], n=100)
        with pytest.raises(L.DomainError):
            L.make_scaling("sideways", spec)

    def test_component_scaling_needs_kappa(self):
        from urnkit.model import UrnSpec

        f31 = friedman(3, 1)
        spec = UrnSpec(f31, N=10, mu=["1/2", "1/2"], n=1000)
        dec, (blk,) = blocks_at(f31, 2.0)
        with pytest.raises(L.DomainError, match="kappa"):
            L.make_scaling("tsd-critical", spec, block=blk)

    def test_grid_indices(self):
        assert L.grid_draw_index("ibd", 500, 10**4, 0.5) == 250
        assert L.grid_draw_index("tsd-large", 10**6, 100, 1.0) == 10**6
        assert L.grid_draw_index("tsd-large", 10**6, 100, 0.5) == 10**4
