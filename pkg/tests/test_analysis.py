import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracspde.analysis import (
    BlowupParams,
    blowup_params,
    blowup_threshold,
    ensemble_variance,
    estimate_moment,
    excess_kurtosis,
    finite_energy,
    graded_grid,
    holder_exponent,
    iterate_moment_inequality,
    jackknife,
    laplace_transform,
    log_spaced_lags,
    product_integration_weights,
)
from fracspde.errors import DomainError, InsufficientReplicatesError
from fracspde.kernel import FractionalParams, kernel_constants
from fracspde.noise import GridSpec
from fracspde.solver import Ensemble
from fracspde.specfun import mittag_leffler_pos

HALF = FractionalParams(0.5, 2.0)
# C1^(4/3) for (beta, alpha, d) = (0.5, 2, 1) with c = l = 1, eps = 0.5;
# C1 from the z-integral quadrature, pinned as a regression value.
THETA0_HALF = 0.1714731329273225


def gaussian_ensemble(n_rep, n_steps=5, n_x=8, seed=0, scale=1.0):
    grid = GridSpec(L=1.0, n_x=n_x, n_t=8, T=1.0)
    values = scale * np.random.default_rng(seed).normal(size=(n_rep, n_steps, n_x))
    return Ensemble(grid, values, np.arange(n_steps))


class TestJackknife:
    def test_mean_matches_classical_error(self):
        x = np.random.default_rng(1).normal(size=500)
        est, se = jackknife(x, np.mean, n_groups=500)
        assert est == pytest.approx(x.mean())
        assert se == pytest.approx(x.std(ddof=1) / math.sqrt(500), rel=1e-10)

    def test_vector_statistic(self):
        x = np.random.default_rng(2).normal(size=(300, 3))
        est, se = jackknife(x, lambda s: s.mean(axis=0), n_groups=50)
        assert est.shape == (3,) and se.shape == (3,)
        assert np.all(se > 0)

    def test_grouped_close_to_full(self):
        x = np.random.default_rng(3).exponential(size=2000)
        _, full = jackknife(x, np.var, n_groups=2000)
        _, grouped = jackknife(x, np.var, n_groups=200)
        assert grouped == pytest.approx(full, rel=0.25)


class TestMoments:
    def test_requires_replicates(self):
        with pytest.raises(InsufficientReplicatesError):
            estimate_moment(gaussian_ensemble(99), 0.125, 0.0, 2)

    def test_gaussian_moments(self):
        ens = gaussian_ensemble(20_000, scale=1.5)
        m2 = estimate_moment(ens, 0.25, 0.25, 2)
        assert abs(m2.value - 2.25) <= 4 * m2.std_error
        m4 = estimate_moment(ens, 0.25, 0.25, 4)
        # Gaussian fourth moment is 3 (E u^2)^2
        assert abs(m4.value - 3 * 2.25**2) <= 4 * m4.std_error
        var, se = ensemble_variance(ens, 0.25, 0.25)
        assert abs(var - 2.25) <= 4 * se
        kurt, kse = excess_kurtosis(ens, 0.25, 0.25)
        assert abs(kurt) <= 4 * kse

    def test_bad_point(self):
        ens = gaussian_ensemble(100)
        with pytest.raises(DomainError):
            estimate_moment(ens, 0.3, 0.0, 2)
        with pytest.raises(DomainError):
            estimate_moment(ens, 0.125, 0.01, 2)
        with pytest.raises(DomainError):
            estimate_moment(ens, 0.125, 0.0, 0.5)


class TestHolder:
    def test_lags(self):
        lags = log_spaced_lags(4, 64, 8)
        assert lags[0] == 4 and lags[-1] == 64 and np.all(np.diff(lags) > 0)
        assert log_spaced_lags(5.5, 5.7, 3).size == 0

    def test_brownian_time_slope(self):
        # Brownian motion: E|B_{t+h} - B_t|^2 = h, slope exactly 1
        grid = GridSpec(L=1.0, n_x=8, n_t=128, T=1.0)
        rng = np.random.default_rng(4)
        paths = np.cumsum(rng.normal(scale=math.sqrt(grid.dt), size=(400, 129, 8)), axis=1)
        ens = Ensemble(grid, paths, np.arange(129))
        fit = holder_exponent(ens, "time", 2, (4 * grid.dt, 64 * grid.dt), base_time=0.25)
        assert abs(fit.slope - 1.0) <= 4 * fit.std_error
        assert fit.ci_low < fit.slope < fit.ci_high

    def test_too_few_lags(self):
        ens = gaussian_ensemble(100)
        with pytest.raises(DomainError):
            holder_exponent(ens, "space", 2, (0.125, 0.25))
        with pytest.raises(DomainError):
            holder_exponent(ens, "time", 3, (0.125, 0.5))
        with pytest.raises(DomainError):
            holder_exponent(ens, "diagonal", 2, (0.125, 0.5))


class TestThreshold:
    def test_pinned_value(self):
        bp = blowup_params(HALF, 1.0, 1.0, 0.5)
        assert blowup_threshold(HALF, bp) == pytest.approx(THETA0_HALF, rel=1e-12)
        assert THETA0_HALF == pytest.approx(kernel_constants(HALF).c_one ** (4 / 3), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(l1=st.floats(0.1, 5.0), factor=st.floats(1.01, 3.0), eps=st.floats(0.01, 2.0))
    def test_monotone_in_l(self, l1, factor, eps):
        c1 = kernel_constants(HALF).c_one
        a = blowup_threshold(HALF, BlowupParams(1.0, l1, eps, 1.0, c1))
        b = blowup_threshold(HALF, BlowupParams(1.0, l1 * factor, eps, 1.0, c1))
        assert b > a

    def test_eps_limit(self):
        c1 = kernel_constants(HALF).c_one
        limit = (4.0 * c1) ** (4 / 3)
        for eps in (1e-4, 1e-6, 1e-8):
            val = blowup_threshold(HALF, BlowupParams(2.0, 3.0, eps, 1.0, c1))
            assert val == pytest.approx(limit, rel=10 * eps)


class TestProductIntegration:
    @pytest.mark.parametrize("gamma", [0.0, 0.25, 0.5, 0.9])
    def test_linear_functions_exact(self, gamma):
        t = graded_grid(3.0, 40)
        W = product_integration_weights(t, gamma)
        # int_0^t (t-s)^-g ds and int_0^t (t-s)^-g s ds in closed form
        np.testing.assert_allclose(W @ np.ones_like(t), t ** (1 - gamma) / (1 - gamma), rtol=1e-12, atol=1e-14)
        ref = t ** (2 - gamma) / ((1 - gamma) * (2 - gamma))
        np.testing.assert_allclose(W @ t, ref, rtol=1e-11, atol=1e-14)

    def test_rejects(self):
        with pytest.raises(DomainError):
            product_integration_weights([0, 1], 1.0)
        with pytest.raises(DomainError):
            graded_grid(1.0, 1)


class TestVolterra:
    def test_base_and_monotone(self):
        bp = blowup_params(HALF, 1.0, 1.5, 0.5)
        t = graded_grid(2.0, 100)
        res = iterate_moment_inequality(HALF, bp, t, 6)
        np.testing.assert_array_equal(res.iterates[0], 2.25)
        for a, b in zip(res.iterates, res.iterates[1:]):
            assert np.all(b >= a)

    def test_linear_case_limit(self):
        # eps = 0: I = l^2 + c^2 C* int (t-s)^-g I ds has solution l^2 E_{1-g}(c^2 C1 t^(1-g))
        bp = blowup_params(HALF, 0.1, 1.0, 0.0)
        t = graded_grid(5.0, 400)
        res = iterate_moment_inequality(HALF, bp, t, 30)
        assert not res.diverged
        ref = np.array([mittag_leffler_pos(0.75, 0.01 * bp.c_one * s**0.75) for s in t])
        np.testing.assert_allclose(res.iterates[-1], ref, rtol=1e-6)
        assert np.max(np.abs(res.iterates[-1] - res.iterates[-2])) < 1e-14

    def test_superlinear_diverges(self):
        bp = blowup_params(HALF, 1.0, 1.0, 0.5)
        t = graded_grid(20.0, 800)
        res = iterate_moment_inequality(HALF, bp, t, 24)
        assert res.diverged
        theta = 0.9 * blowup_threshold(HALF, bp)
        assert laplace_transform(t, res.iterates[-1], theta) > 1e6

    def test_bad_grid(self):
        bp = blowup_params(HALF, 1.0, 1.0, 0.5)
        with pytest.raises(DomainError):
            iterate_moment_inequality(HALF, bp, [0.1, 0.5, 1.0], 2)

    def test_laplace_constant(self):
        t = np.linspace(0, 40, 40001)
        assert laplace_transform(t, np.ones_like(t), 0.5) == pytest.approx(2 * (1 - math.exp(-20)), rel=1e-7)


class TestFiniteEnergy:
    def test_constant_field(self):
        grid = GridSpec(L=1.0, n_x=8, n_t=4000, T=8.0)
        steps = np.arange(4001)
        ens = Ensemble(grid, np.full((1, 4001, 8), 1.5), steps)
        with pytest.warns(RuntimeWarning):
            est = finite_energy(ens, 0.1)
        assert est.value == pytest.approx(2.25 * (1 - math.exp(-0.8)) / 0.1, rel=1e-6)
        assert not est.horizon_ok

    def test_horizon_and_overflow(self):
        grid = GridSpec(L=1.0, n_x=8, n_t=8, T=16.0)
        ens = Ensemble(grid, np.ones((3, 9, 8)), np.arange(9), overflow=np.array([False, True, False]))
        est = finite_energy(ens, 1.0)
        assert est.overflow and math.isinf(est.value)
        with pytest.raises(DomainError):
            finite_energy(ens, 0.0)
