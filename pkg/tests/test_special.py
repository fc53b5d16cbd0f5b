"""Special functions against scipy and frozen high-precision (mpmath, 40 digits) values."""
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special as sp

from gograd import special
from gograd.special import DomainError, FnEvalResult

A_GRID = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
X_GRID = [0.01, 0.1, 1.0, 5.0, 20.0]


class TestLogGammaDigamma:
    @pytest.mark.parametrize("x, expected", [
        (1.0, 0.0),
        (0.5, 0.5 * math.log(math.pi)),
        (10.0, math.log(362880.0)),
    ])
    def test_log_gamma_values(self, x, expected):
        assert special.log_gamma(x) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("x, expected", [
        (1.0, -0.5772156649015329),
        (2.0, 1.0 - 0.5772156649015329),
        (0.5, -1.963510026021423479),
        (7.3, 1.917820335637986072),
        (1e-3, -1000.5755719318102797),
    ])
    def test_digamma_values(self, x, expected):
        assert special.digamma(x) == pytest.approx(expected, rel=1e-13, abs=1e-13)

    def test_digamma_matches_scipy_on_a_sweep(self):
        x = np.geomspace(1e-4, 1e4, 400)
        np.testing.assert_allclose(special.digamma(x), sp.digamma(x), rtol=1e-13, atol=1e-13)

    def test_digamma_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            special.digamma(0.0)

    def test_vector_and_scalar_shapes(self):
        assert isinstance(special.digamma(3.0), float)
        assert special.log_gamma(np.ones((2, 3))).shape == (2, 3)


class TestIncompleteGamma:
    def test_endpoints_and_exponential_case(self):
        assert special.reg_gamma_p(1.0, 0.0) == 0.0
        assert special.reg_gamma_p(1.0, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-14)

    def test_frozen_value(self):
        assert special.reg_gamma_p(2.5, 3.0) == pytest.approx(0.69378108158672159912, abs=1e-13)

    def test_against_scipy_grid(self):
        a, x = np.meshgrid(np.geomspace(0.01, 200, 40), np.geomspace(1e-3, 400, 40))
        np.testing.assert_allclose(special.reg_gamma_p(a, x), sp.gammainc(a, x), atol=1e-13)
        q = special.reg_gamma_q(a, x)
        ref = sp.gammaincc(a, x)
        big = ref > 1e-280
        np.testing.assert_allclose(q[big], ref[big], rtol=1e-11)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 100), st.floats(0, 200))
    def test_complement(self, a, x):
        total = special.reg_gamma_p(a, x) + special.reg_gamma_q(a, x)
        assert total == pytest.approx(1.0, abs=1e-13)

    def test_domain(self):
        with pytest.raises(DomainError):
            special.reg_gamma_p(-1.0, 1.0)
        with pytest.raises(DomainError):
            special.reg_gamma_q(1.0, -0.5)


class TestGammaShapeDerivative:
    @pytest.mark.parametrize("backend", ["series", "fd", "auto"])
    def test_zero_at_origin(self, backend):
        for a in A_GRID:
            assert special.grad_reg_gamma_p_wrt_a(a, 0.0, backend=backend) == 0.0

    @pytest.mark.parametrize("a, x, expected", [
        (1.0, 1.0, -0.43172971063489869613),
        (0.5, 2.0, -0.13561933520399724326),
    ])
    def test_frozen_values(self, a, x, expected):
        for backend in ("series", "fd"):
            got = special.grad_reg_gamma_p_wrt_a(a, x, backend=backend)
            assert got == pytest.approx(expected, abs=1e-10)

    def test_saturated_tail(self):
        assert abs(special.grad_reg_gamma_p_wrt_a(3.0, 30.0)) < 1e-8

    def test_backends_agree_on_grid(self):
        a, x = np.meshgrid(A_GRID, X_GRID)
        s = special.grad_reg_gamma_p_wrt_a(a, x, backend="series")
        f = special.grad_reg_gamma_p_wrt_a(a, x, backend="fd")
        assert np.max(np.abs(s - f)) < 1e-6

    def test_full_output(self):
        res = special.grad_reg_gamma_p_wrt_a(2.0, 3.0, backend="fd", full_output=True)
        assert isinstance(res, FnEvalResult)
        assert res.est_abs_error < 1e-8
        with pytest.raises(ValueError):
            special.grad_reg_gamma_p_wrt_a(np.ones(2), np.ones(2), full_output=True)

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            special.grad_reg_gamma_p_wrt_a(1.0, 1.0, backend="quad")

    def test_nabla_ratio_matches_definition(self):
        # 30-digit oracle: the double-precision CDF difference is useless deep in the tail
        mp.mp.dps = 30
        for a in [0.05, 0.3, 1.0, 4.0, 30.0]:
            for x in [1e-6, 0.2, 1.0, 6.0, 50.0]:
                dP = mp.diff(lambda s: mp.gammainc(s, 0, x, regularized=True), a)
                dens = mp.mpf(x) ** (a - 1) * mp.exp(-x) / mp.gamma(a)
                ref = float(dP / dens)
                assert special.gamma_shape_nabla_ratio(a, x) == pytest.approx(ref, rel=1e-9, abs=1e-15)

    def test_nabla_ratio_finite_at_tiny_x(self):
        r = special.gamma_shape_nabla_ratio(0.01, 1e-300)
        assert np.isfinite(r)


class TestIncompleteBeta:
    def test_endpoints_and_symmetry(self):
        assert special.reg_beta_i(0.0, 2.0, 3.0) == 0.0
        assert special.reg_beta_i(1.0, 2.0, 3.0) == 1.0
        assert special.reg_beta_i(0.5, 2.0, 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_nb_cdf_by_pmf_summation(self):
        r, p = 10, 0.2
        pmf = [math.comb(y + r - 1, y) * p**y * (1 - p) ** r for y in range(11)]
        assert special.reg_beta_i(0.8, 10.0, 11.0) == pytest.approx(sum(pmf), abs=1e-14)
        assert special.reg_beta_i(0.8, 10.0, 11.0) == pytest.approx(0.99943658630233981041, abs=1e-14)

    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        x = rng.random(2000)
        a = rng.uniform(0.05, 60, 2000)
        b = rng.uniform(0.05, 60, 2000)
        np.testing.assert_allclose(special.reg_beta_i(x, a, b), sp.betainc(a, b, x), atol=5e-13)
        upper = special.reg_beta_i_upper(x, a, b)
        ref = sp.betaincc(a, b, x)
        big = ref > 1e-250
        np.testing.assert_allclose(upper[big], ref[big], rtol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 1024), st.floats(0.05, 50), st.floats(0.05, 50))
    def test_reflection(self, k, a, b):
        x = k / 1024.0  # 1 - x is exact
        assert special.reg_beta_i(x, a, b) == pytest.approx(1 - special.reg_beta_i(1 - x, b, a), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.floats(0.05, 50), st.floats(0.05, 50))
    def test_tails_sum_to_one(self, x, a, b):
        total = special.reg_beta_i(x, a, b) + special.reg_beta_i_upper(x, a, b)
        assert total == pytest.approx(1.0, abs=1e-13)

    def test_domain(self):
        with pytest.raises(DomainError):
            special.reg_beta_i(1.5, 1.0, 1.0)


class TestBetaShapeDerivative:
    def test_endpoints(self):
        for which in ("a", "b"):
            assert special.grad_reg_beta_wrt_shape(0.0, 2.0, 3.0, which) == 0.0
            assert special.grad_reg_beta_wrt_shape(1.0, 2.0, 3.0, which) == 0.0

    @pytest.mark.parametrize("x, a, b, which, expected", [
        (0.5, 2.0, 2.0, "a", -0.22157359027997265471),
        (0.8, 10.0, 11.0, "a", -3.2090934652201922303e-4),
        (0.3, 2.0, 5.0, "b", 0.099444894569456877070),
    ])
    def test_frozen_values(self, x, a, b, which, expected):
        assert special.grad_reg_beta_wrt_shape(x, a, b, which) == pytest.approx(expected, rel=1e-7)

    def test_raising_a_moves_mass_right(self):
        assert special.grad_reg_beta_wrt_shape(0.5, 2.0, 2.0, "a") < 0

    def test_nb_cdf_r_derivative_by_pmf_sum(self):
        r, p, h = 10.0, 0.2, 1e-5

        def cdf(rr):
            y = np.arange(11)
            logpmf = sp.gammaln(y + rr) - sp.gammaln(rr) - sp.gammaln(y + 1) + y * np.log(p) + rr * np.log1p(-p)
            return np.exp(logpmf).sum()

        ref = (cdf(r + h) - cdf(r - h)) / (2 * h)
        assert special.grad_reg_beta_wrt_shape(0.8, r, 11.0, "a") == pytest.approx(ref, rel=1e-6)

    def test_bad_which(self):
        with pytest.raises(ValueError):
            special.grad_reg_beta_wrt_shape(0.5, 1.0, 1.0, "c")
