import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from fracspde.errors import DomainError, UnsupportedConfigurationError
from fracspde.kernel import (
    FractionalParams,
    caputo_residual,
    exp_moment_check,
    green_density,
    green_density_subordination,
    increment_l2_space,
    increment_l2_time,
    kernel_constants,
    kernel_l2_norm,
    kernel_table,
    space_increment_lower_constant,
    space_increment_upper,
    symbol,
    time_increment_bound,
    write_kernel_csv,
    z_integral_bounds,
)
from fracspde.specfun import beta_fn

GAUSS = FractionalParams(beta=1.0, alpha=2.0)
HALF = FractionalParams(beta=0.5, alpha=2.0)

# G_1(0) for beta = 1/2, alpha = 2, d = 1: int_0^inf (4 pi s)^-1/2 pi^-1/2 e^{-s^2/4} ds
# = Gamma(1/4) / (2 sqrt(2) pi).
G0_HALF = math.gamma(0.25) / (2 * math.sqrt(2) * math.pi)

# Regression constants for beta = 1/2, alpha = 2, d = 1, pinned after the
# z-integral was checked against its Beta-function sandwich.
Z_HALF = 1.3662907715524397
C_STAR_HALF = 0.21745192999341031
C_ONE_HALF = 0.2664692269972136


def gaussian_time_increment(t, tp):
    """Real-space oracle for beta = 1: int_0^t ||G_{tp-r} - G_{t-r}||^2 dr."""

    def f(r):
        a, b = tp - r, t - r
        return (8 * math.pi * a) ** -0.5 + (8 * math.pi * b) ** -0.5 - 2 * (4 * math.pi * (a + b)) ** -0.5

    return integrate.quad(f, 0, t, limit=200, epsabs=1e-14)[0]


def gaussian_space_increment(t, h):
    """Oracle for beta = 1: int_0^t 2 (8 pi u)^-1/2 (1 - exp(-h^2 / (8 u))) du."""
    f = lambda u: 2 * (8 * math.pi * u) ** -0.5 * -math.expm1(-h * h / (8 * u))
    return integrate.quad(f, 0, t, limit=200, epsabs=1e-16, points=[h * h])[0]


class TestParams:
    def test_existence_condition(self):
        FractionalParams(0.5, 2.0, d=3)
        with pytest.raises(DomainError):
            FractionalParams(1.0, 2.0, d=2)
        with pytest.raises(DomainError):
            FractionalParams(0.0, 2.0)
        with pytest.raises(DomainError):
            FractionalParams(0.5, 2.5)
        with pytest.raises(DomainError):
            FractionalParams(0.5, 2.0, nu=0.0)

    def test_decay_exponent(self):
        assert FractionalParams(0.5, 2.0, d=3).decay_exponent == 0.75


class TestSymbol:
    def test_values(self):
        assert symbol(HALF, 1.0, 0.0) == 1.0
        assert symbol(GAUSS, 1.0, 2.0) == pytest.approx(math.exp(-4), rel=1e-12)

    def test_monotone(self):
        xi = np.linspace(0, 50, 500)
        for p in (HALF, FractionalParams(0.3, 1.2)):
            assert np.all(np.diff(symbol(p, 0.7, xi)) <= 0)


class TestGreenDensity:
    def test_gaussian(self):
        assert green_density(GAUSS, 1.0, 0.0) == pytest.approx(1 / math.sqrt(4 * math.pi), abs=1e-10)
        assert green_density(GAUSS, 2.0, 1.3) == pytest.approx(
            math.exp(-1.69 / 8) / math.sqrt(8 * math.pi), abs=1e-10
        )

    def test_half_at_origin(self):
        assert green_density(HALF, 1.0, 0.0) == pytest.approx(G0_HALF, abs=1e-9)
        assert green_density_subordination(HALF, 1.0, 0.0) == pytest.approx(G0_HALF, abs=1e-9)

    @pytest.mark.parametrize("beta", [0.5, 0.8])
    def test_routes_agree(self, beta):
        p = FractionalParams(beta, 2.0)
        for t in (0.3, 1.0, 3.0):
            for x in (0.0, 0.7, 2.0, 5.0):
                assert green_density(p, t, x) == pytest.approx(green_density_subordination(p, t, x), abs=1e-8)

    def test_cauchy_subordination_matches_fourier(self):
        p = FractionalParams(0.6, 1.0)
        for x in (0.4, 1.5):
            assert green_density(p, 1.0, x) == pytest.approx(green_density_subordination(p, 1.0, x), abs=1e-7)

    def test_symmetry(self):
        p = FractionalParams(0.7, 1.5)
        for x in (0.3, 1.1, 4.0):
            assert green_density(p, 1.0, x) == green_density(p, 1.0, -x)

    def test_nearly_gaussian(self):
        p = FractionalParams(0.999, 2.0)
        assert green_density_subordination(p, 1.0, 0.0) == pytest.approx(1 / math.sqrt(4 * math.pi), abs=1e-3)

    def test_normalisation_1d(self):
        p = FractionalParams(0.5, 2.0)
        L = 40.0
        total = 2 * sum(
            integrate.quad(lambda x: green_density(p, 1.0, x), a, b, epsabs=1e-12)[0]
            for a, b in [(0, 1), (1, 4), (4, 10), (10, L / 2)]
        )
        assert total == pytest.approx(1.0, abs=1e-5)
        xs = np.linspace(-L / 2, L / 2, 41)
        assert all(green_density(p, 1.0, x) >= 0 for x in xs)

    def test_dimension_dispatch(self):
        p3 = FractionalParams(0.5, 2.0, d=3)
        v = green_density(p3, 1.0, [0.3, 0.4, 0.0])
        assert v == pytest.approx(green_density_subordination(p3, 1.0, [0.5, 0.0, 0.0]), rel=1e-12)
        with pytest.raises(UnsupportedConfigurationError):
            green_density(FractionalParams(0.5, 1.5, d=2), 1.0, [0.3, 0.4])
        with pytest.raises(DomainError):
            green_density_subordination(p3, 1.0, [0.0, 0.0, 0.0])

    def test_kernel_table_csv(self, tmp_path):
        rows = kernel_table(GAUSS, [1.0], [0.0, 1.0], "fourier")
        assert rows[0][2] == pytest.approx(0.2820948, abs=1e-7)
        path = tmp_path / "k.csv"
        write_kernel_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x,G,method,abs_err" and len(lines) == 3


class TestL2:
    def test_gaussian(self):
        for t in (0.5, 1.0, 3.0):
            assert kernel_l2_norm(GAUSS, t) == pytest.approx((8 * math.pi * t) ** -0.5, abs=1e-10)

    def test_half_constants(self):
        k = kernel_constants(HALF)
        assert k.z_integral == pytest.approx(Z_HALF, rel=1e-10)
        assert k.c_star == pytest.approx(C_STAR_HALF, rel=1e-10)
        assert k.c_one == pytest.approx(k.c_star * math.gamma(0.75), rel=1e-14)
        assert k.c_one == pytest.approx(C_ONE_HALF, rel=1e-10)
        lo, hi = z_integral_bounds(HALF)
        assert lo <= k.z_integral <= hi
        assert lo == pytest.approx(beta_fn(0.5, 1.5) / math.gamma(0.5) ** 0.5, rel=1e-14)
        assert hi == pytest.approx(beta_fn(0.5, 1.5) * math.gamma(1.5) ** 0.5, rel=1e-14)
        assert (lo, hi) == (pytest.approx(1.1799, abs=1e-4), pytest.approx(1.4787, abs=1e-4))

    def test_z_integral_quadrature(self):
        # int_0^inf z^(-1/2) E_{1/2}(-z)^2 dz with E_{1/2}(-z) = erfcx(z) and z = v^2
        val = integrate.quad(lambda v: 2 * special.erfcx(v * v) ** 2, 0, np.inf, limit=200)[0]
        assert val == pytest.approx(Z_HALF, rel=1e-9)

    def test_scaling(self):
        for p in (HALF, FractionalParams(0.3, 1.0), FractionalParams(0.8, 1.7, d=1)):
            ratio = kernel_l2_norm(p, 4.0) / kernel_l2_norm(p, 1.0)
            assert ratio == pytest.approx(4 ** -p.decay_exponent, abs=1e-8)

    @pytest.mark.parametrize("beta", [0.3, 0.5, 0.7, 0.9])
    @pytest.mark.parametrize("alpha", [1.0, 1.5, 2.0])
    def test_sandwich(self, beta, alpha):
        p = FractionalParams(beta, alpha)
        lo, hi = z_integral_bounds(p)
        z = kernel_constants(p).z_integral
        assert lo <= z <= hi


class TestIncrements:
    def test_time_zero_lag(self):
        assert increment_l2_time(HALF, 1.0, 1.0) == 0.0

    def test_time_gaussian_oracle(self):
        assert increment_l2_time(GAUSS, 1.0, 2.0) == pytest.approx(gaussian_time_increment(1.0, 2.0), abs=1e-6)
        assert increment_l2_time(GAUSS, 0.5, 0.6) == pytest.approx(gaussian_time_increment(0.5, 0.6), abs=1e-6)

    def test_time_bound_half(self):
        v = increment_l2_time(HALF, 1.0, 1.1)
        bound = C_STAR_HALF / 0.75 * 0.1**0.75
        assert time_increment_bound(HALF, 1.0, 1.1) == pytest.approx(bound, rel=1e-9)
        assert 0 < v <= bound

    @settings(max_examples=10, deadline=None)
    @given(t=st.floats(0.05, 3.0), lag=st.floats(1e-3, 2.0))
    def test_time_bound_property(self, t, lag):
        p = FractionalParams(0.7, 2.0)
        assert increment_l2_time(p, t, t + lag) <= time_increment_bound(p, t, t + lag)

    def test_space_gaussian_oracle(self):
        for h in (0.01, 0.1, 0.5):
            assert increment_l2_space(GAUSS, 1.0, h) == pytest.approx(gaussian_space_increment(1.0, h), rel=1e-7)

    def test_space_monotone_to_zero(self):
        hs = [0.1, 0.03, 0.01, 0.003, 0.001]
        v = [increment_l2_space(HALF, 1.0, h) for h in hs]
        assert all(a > b for a, b in zip(v, v[1:])) and v[-1] < 1e-6

    def test_space_slope_half(self):
        hs = np.geomspace(1e-3, 1e-2, 5)
        v = [increment_l2_space(HALF, 1.0, h) for h in hs]
        slope = np.polyfit(np.log(hs), np.log(v), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.05)

    def test_space_two_sided_bounds(self):
        hs = np.geomspace(1e-3, 1e-1, 6)
        c_lo = space_increment_lower_constant(HALF, 1.0, hs)
        c_up, expo = space_increment_upper(HALF, 1.0)
        assert c_lo > 0 and expo == 2.0
        for h in hs:
            v = increment_l2_space(HALF, 1.0, h)
            assert c_lo * h**2 <= v * (1 + 1e-12) and v <= c_up * h**expo

    def test_space_three_dimensions(self):
        p = FractionalParams(0.5, 2.0, d=3)
        v1, v2 = increment_l2_space(p, 1.0, 0.01), increment_l2_space(p, 1.0, 0.02)
        c_up, expo = space_increment_upper(p, 1.0)
        assert 0 < v1 < v2 <= c_up * 0.02**expo


class TestExpMoment:
    def test_lambda_zero(self):
        lhs, rhs = exp_moment_check(HALF, 0.0, 1.0)
        assert lhs == pytest.approx(1.0, abs=1e-8) and rhs == 1.0

    def test_gaussian(self):
        lhs, rhs = exp_moment_check(GAUSS, 1.0, 1.0)
        assert lhs == pytest.approx(math.e, rel=1e-12) and rhs == pytest.approx(math.e, rel=1e-14)

    def test_half(self):
        lhs, rhs = exp_moment_check(HALF, 0.5, 1.0)
        assert lhs == pytest.approx(rhs, abs=1e-5)

    def test_requires_alpha_two(self):
        with pytest.raises(DomainError):
            exp_moment_check(FractionalParams(0.5, 1.5), 1.0, 1.0)


class TestCaputo:
    def test_converges(self):
        r1 = caputo_residual(0.5, 1.0, 256)
        r2 = caputo_residual(0.5, 1.0, 512)
        assert r1 / r2 >= 1.4

    def test_constant_solution(self):
        assert caputo_residual(0.5, 0.0, 64) == 0.0

    def test_rejects(self):
        with pytest.raises(DomainError):
            caputo_residual(1.0, 1.0, 64)
        with pytest.raises(DomainError):
            caputo_residual(0.5, 1.0, 8)
