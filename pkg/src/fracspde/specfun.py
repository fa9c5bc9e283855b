"""Special functions behind the fundamental solution.

Mittag-Leffler function on the negative real axis, gamma/beta helpers, the
one-sided stable density ``g_beta`` and the density and moments of the
inverse stable subordinator ``E_t``.

All functions are pure; the only state is an ``lru_cache`` of Chebyshev
interpolants keyed by ``(beta, policy)``, which is safe to share between
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev
from scipy import integrate, optimize, special

from .errors import AccuracyError, DomainError

__all__ = [
    "MLEvalPolicy",
    "DEFAULT_POLICY",
    "mittag_leffler_neg",
    "mittag_leffler_pos",
    "log_gamma",
    "beta_fn",
    "stable_density",
    "inv_subordinator_density",
    "inv_subordinator_moment",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class MLEvalPolicy:
    """Branch cutoffs and accuracy target for :func:`mittag_leffler_neg`.

    Arguments ``x <= taylor_cutoff`` use the power series, ``x >=
    asymptotic_cutoff`` the optimally truncated asymptotic series, and the
    range in between a Chebyshev interpolant (in ``log x``) of the
    spectral integral representation.
    """

    taylor_cutoff: float = 1.0
    asymptotic_cutoff: float = 50.0
    target_abs_error: float = 1e-12

    def __post_init__(self):
        if not (self.taylor_cutoff > 0 and self.asymptotic_cutoff > 0):
            raise DomainError("policy cutoffs must be positive")
        if not self.taylor_cutoff < self.asymptotic_cutoff:
            raise DomainError("taylor_cutoff must be smaller than asymptotic_cutoff")
        if not 0 < self.target_abs_error <= 1e-6:
            raise DomainError("target_abs_error must lie in (0, 1e-6]")


DEFAULT_POLICY = MLEvalPolicy()


def _check_beta(beta, *, allow_one):
    beta = float(beta)
    hi_ok = beta <= 1.0 if allow_one else beta < 1.0
    if not (beta > 0.0 and hi_ok):
        interval = "(0, 1]" if allow_one else "(0, 1)"
        raise DomainError(f"beta must lie in {interval}, got {beta}")
    return beta


# ---------------------------------------------------------------------------
# Mittag-Leffler E_beta(-x)
# ---------------------------------------------------------------------------


def _taylor_neg(beta, x):
    """Power series sum_k (-x)^k / Gamma(1 + beta k); returns (value, err)."""
    xmax = float(np.max(x)) if x.size else 0.0
    # smallest K with xmax^K / Gamma(1 + beta K) < 1e-18
    K = 8
    while K < 5000:
        if K * math.log(max(xmax, 1e-300)) - math.lgamma(1 + beta * K) < -41.5:
            break
        K += 8
    k = np.arange(K + 1)
    coef = special.rgamma(1.0 + beta * k) * (-1.0) ** k
    val = np.zeros_like(x)
    for c in coef[::-1]:
        val = val * x + c
    # rounding in an alternating sum is bounded by eps times the sum of |terms|
    absum = np.zeros_like(x)
    for c in np.abs(coef)[::-1]:
        absum = absum * x + c
    return val, 4 * K * _EPS * absum


def _asymptotic_neg(beta, x):
    """sum_{n>=1} (-1)^(n+1) x^-n / Gamma(1 - n beta), optimally truncated.

    Returns (value, err) where err is the magnitude of the first omitted
    nonzero term, or +inf where the terms start growing first.
    """
    val = np.zeros_like(x)
    err = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    prev = np.full_like(x, np.inf)
    inv_x = 1.0 / x
    power = np.ones_like(x)
    for n in range(1, 400):
        power = power * inv_x
        c = special.rgamma(1.0 - n * beta)
        term = (-1.0) ** (n + 1) * c * power
        mag = np.abs(term)
        if c == 0.0:
            continue
        growing = active & (mag > prev)
        active &= ~growing
        small = active & (mag < 1e-18 * np.abs(val))
        err = np.where(small, mag, err)
        active &= ~small
        if not active.any():
            break
        val = np.where(active, val + term, val)
        prev = np.where(active, mag, prev)
    return val, err


def _ml_integral(beta, x, h_scale=1.0):
    """Spectral integral representation of E_beta(-x), 0 < beta < 1.

    E_beta(-x) = sin(beta pi)/(beta pi) * int_R exp(-(x e^y)^(1/beta))
                 / (2 cosh y + 2 cos(beta pi)) dy,

    evaluated by the trapezoidal rule, which converges geometrically because
    the integrand is analytic in a strip of half-width
    min(pi (1 - beta), beta pi / 2).  Returns (value, err); err compares the
    rule with step h against step 2h, which is a conservative bound.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    strip = 0.8 * min(math.pi * (1.0 - beta), 0.5 * math.pi * beta)
    h = h_scale * 2 * math.pi * strip / 80.0
    y_lo = -40.0
    y_hi = beta * math.log(45.0) - math.log(float(np.min(x))) + 1.0
    n = int(math.ceil((y_hi - y_lo) / h))
    n += n % 2
    y = y_lo + h * np.arange(n + 1)
    cb = math.cos(beta * math.pi)
    denom = 2.0 * np.cosh(y) + 2.0 * cb
    pref = math.sin(beta * math.pi) / (beta * math.pi)
    scaled = np.exp(y / beta)[None, :] * (x[:, None] ** (1.0 / beta))
    f = np.exp(-scaled) / denom[None, :]
    fine = h * f.sum(axis=1)
    coarse = 2 * h * f[:, ::2].sum(axis=1)
    value = pref * fine
    err = pref * np.abs(fine - coarse) + pref * math.exp(y_lo)
    return value, err


@lru_cache(maxsize=64)
def _ml_chebyshev(beta, policy):
    """Chebyshev interpolant of E_beta(-e^s) on [log a, log b]."""
    a = math.log(policy.taylor_cutoff)
    b = math.log(policy.asymptotic_cutoff)
    deg = 96
    nodes = np.cos(math.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
    s = 0.5 * (b - a) * nodes + 0.5 * (b + a)
    vals, ierr = _ml_integral(beta, np.exp(s))
    coef = chebyshev.chebfit(nodes, vals, deg)
    tail = float(np.sum(np.abs(coef[-8:])))
    err = tail + float(np.max(ierr)) + 64 * _EPS
    return coef, a, b, err


def mittag_leffler_neg(beta, x, policy: MLEvalPolicy = DEFAULT_POLICY):
    """Evaluate the Mittag-Leffler function ``E_beta(-x)`` for ``x >= 0``.

    Parameters
    ----------
    beta : float
        Order in (0, 1].  ``beta = 1`` returns ``exp(-x)``.
    x : float or array_like
        Nonnegative arguments.
    policy : MLEvalPolicy
        Branch cutoffs and absolute accuracy target.

    Returns
    -------
    float or ndarray
        Values in (0, 1], same shape as ``x``.

    Raises
    ------
    DomainError
        If ``x < 0`` or ``beta`` is outside (0, 1].
    AccuracyError
        If the error estimate of the selected branch exceeds the target.
    """
    beta = _check_beta(beta, allow_one=True)
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    if not np.all(np.isfinite(xa)) and not np.all(np.isposinf(xa[~np.isfinite(xa)])):
        raise DomainError("x must not be NaN")
    if np.any(xa < 0):
        raise DomainError("mittag_leffler_neg requires x >= 0")
    if beta == 1.0:
        out = np.exp(-xa)
        return float(out[0]) if scalar else out

    out = np.empty_like(xa)
    err = np.zeros_like(xa)
    small = xa <= policy.taylor_cutoff
    large = xa >= policy.asymptotic_cutoff
    mid = ~(small | large)
    if small.any():
        vs, es = _taylor_neg(beta, xa[small])
        bad = es > policy.target_abs_error
        if bad.any():
            vs[bad], es[bad] = _ml_integral(beta, xa[small][bad])
        out[small], err[small] = vs, es
    if large.any():
        xl = xa[large]
        inf = np.isinf(xl)
        vl, el = np.zeros_like(xl), np.zeros_like(xl)
        if (~inf).any():
            vl[~inf], el[~inf] = _asymptotic_neg(beta, xl[~inf])
        bad = el > policy.target_abs_error
        if bad.any():
            vl[bad], el[bad] = _ml_integral(beta, xl[bad])
        out[large], err[large] = vl, el
    if mid.any():
        coef, a, b, cerr = _ml_chebyshev(beta, policy)
        s = (2.0 * np.log(xa[mid]) - (a + b)) / (b - a)
        out[mid] = chebyshev.chebval(s, coef)
        err[mid] = cerr
    if np.max(err) > policy.target_abs_error:
        raise AccuracyError(
            f"E_{beta}(-x) error estimate {np.max(err):.3g} exceeds "
            f"target {policy.target_abs_error:.3g}"
        )
    return float(out[0]) if scalar else out


def mittag_leffler_pos(beta, x):
    """``E_beta(x)`` for ``x >= 0`` by direct summation of the power series.

    Terms are positive, so the sum is accurate to rounding; overflow is
    reported as :class:`AccuracyError`.
    """
    beta = _check_beta(beta, allow_one=True)
    x = float(x)
    if x < 0:
        raise DomainError("mittag_leffler_pos requires x >= 0")
    if x == 0:
        return 1.0
    total, k = 0.0, 0
    logx = math.log(x)
    while True:
        lt = k * logx - math.lgamma(1 + beta * k)
        if lt > 700:
            raise AccuracyError(f"series for E_{beta}({x}) overflows")
        term = math.exp(lt)
        total += term
        # past the peak the terms decay at least geometrically
        if k * beta > x ** (1 / beta) + 2 and term < 1e-17 * total:
            return total
        k += 1


# ---------------------------------------------------------------------------
# gamma / beta helpers
# ---------------------------------------------------------------------------


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("log_gamma requires positive arguments")
    out = special.gammaln(xa)
    return float(out) if out.ndim == 0 else out


def beta_fn(a, b):
    """Euler beta function ``B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b)``."""
    aa, bb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any(~(aa > 0)) or np.any(~(bb > 0)):
        raise DomainError("beta_fn requires positive arguments")
    out = np.exp(special.betaln(aa, bb))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# one-sided stable law and the inverse subordinator
# ---------------------------------------------------------------------------

_SERIES_W_MAX = 1.5  # series in w = u^-beta is used for w <= this
_G_ABS_TOL = 1e-8


def _zolotarev_a(phi, beta):
    """Zolotarev function A(phi) on (0, pi); ``inf`` where it overflows."""
    try:
        return (
            (math.sin(beta * phi) ** beta * math.sin((1 - beta) * phi) ** (1 - beta))
            / math.sin(phi)
        ) ** (1.0 / (1.0 - beta))
    except (OverflowError, ZeroDivisionError):
        return math.inf


def _g_series(beta, u):
    """Convergent series in u^(-beta k - 1); accurate for u^-beta small."""
    w = u ** (-beta)
    total = 0.0
    abs_total = 0.0
    k = 1
    while True:
        lt = math.lgamma(beta * k + 1) - math.lgamma(k + 1) + k * math.log(w)
        mag = math.exp(lt)
        term = (-1) ** (k + 1) * mag * math.sin(math.pi * beta * k)
        total += term
        abs_total += mag
        if mag < 1e-17 * max(abs(total), 1e-300) and k > 4:
            break
        k += 1
        if k > 2000:
            raise AccuracyError("stable density series did not converge")
    value = total / (math.pi * u)
    err = 8 * k * _EPS * abs_total / (math.pi * u)
    return value, err


def _g_zolotarev(beta, u):
    """Kanter-Zolotarev integral over (0, pi); accurate for small and moderate u."""
    log_c = -beta / (1 - beta) * math.log(u)
    if log_c > 700.0:
        # exp(-A0 c) underflows long before the power prefactor matters
        return 0.0, 0.0
    c = math.exp(log_c)
    a0 = (1 - beta) * beta ** (beta / (1 - beta))  # A(0+), the minimum of A
    log_pref = (
        math.log(beta / ((1 - beta) * math.pi)) - math.log(u) / (1 - beta) - a0 * c
    )
    if log_pref < -745:
        return 0.0, 0.0

    def excess(phi):
        return (_zolotarev_a(phi, beta) - a0) * c

    def integrand(phi):
        a = _zolotarev_a(phi, beta)
        arg = (a - a0) * c
        if arg > 745:
            return 0.0
        return a * math.exp(-arg)

    # A increases on (0, pi), so the integrand is concentrated where the
    # exponent c (A - A0) is small; for beta near 1 or small u that region is
    # a thin layer at phi = 0.  Break the range at fixed exponent levels and
    # drop the part where the exponential underflows.
    lo, hi = 1e-300, math.pi * (1 - 1e-15)
    points = []
    upper = math.pi
    levels = (0.1, 1.0, 5.0, 20.0, 100.0, 745.0) if excess(0.5 * math.pi) > 20.0 else ()
    for level in levels:
        if excess(lo) < level < excess(hi):
            p = optimize.brentq(lambda ph: excess(ph) - level, lo, hi, xtol=1e-15, rtol=1e-13)
            if level == 745.0:
                upper = p
            else:
                points.append(p)
    points = [p for p in points if p < upper]
    val, abserr = integrate.quad(
        integrand, 0.0, upper, epsabs=0.0, epsrel=1e-11, limit=400, points=points or None
    )
    pref = math.exp(log_pref)
    return pref * val, pref * abserr


def _stable_density_scalar(beta, u):
    if u <= 0.0:
        return 0.0, 0.0
    if u ** (-beta) <= _SERIES_W_MAX:
        g, err = _g_series(beta, u)
        # for beta near 1 the alternating series cancels badly at moderate u
        if err <= 1e-3 * _G_ABS_TOL:
            return g, err
    return _g_zolotarev(beta, u)


def stable_density(beta, u):
    """Density ``g_beta(u)`` of ``D_1``, the stable law with LT ``exp(-s^beta)``.

    Uses the convergent series in ``u^(-beta k - 1)`` for large ``u`` and the
    Kanter-Zolotarev integral representation for small ``u``.  Returns 0
    for ``u <= 0``.  Accepts scalars or arrays.

    Raises
    ------
    AccuracyError
        If the error estimate of an evaluation exceeds 1e-8.
    """
    beta = _check_beta(beta, allow_one=False)
    ua = np.asarray(u, dtype=float)
    out = np.empty(ua.shape)
    for idx, val in np.ndenumerate(ua):
        g, err = _stable_density_scalar(beta, float(val))
        if err > _G_ABS_TOL:
            raise AccuracyError(f"g_{beta}({val}) error estimate {err:.3g} > {_G_ABS_TOL}")
        out[idx] = g
    return float(out) if out.ndim == 0 else out


def _mwright_series(beta, w):
    """Power series of f_{E_1}(w); returns an infinite error if it stalls."""
    total, abs_total = 0.0, 0.0
    logw = math.log(w)
    for k in range(2000):
        # 1/Gamma(1 - z) = Gamma(z) sin(pi z) / pi, kept in log form so that
        # neither factor overflows for beta near 1
        z = beta * (k + 1)
        log_mag = k * logw - math.lgamma(k + 1) + math.lgamma(z)
        if log_mag > 600.0:
            break
        term = (-1) ** k * math.exp(log_mag) * math.sin(math.pi * z) / math.pi
        total += term
        abs_total += abs(term)
        if k > 4 and log_mag < math.log(1e-17 * max(abs(total), 1e-300)):
            return total, 8 * (k + 1) * _EPS * abs_total
    return total, math.inf


def _mwright_scalar(beta, w):
    """f_{E_1}(w) = beta^-1 w^(-1-1/beta) g_beta(w^(-1/beta)) for w > 0."""
    if w <= 0.0:
        return 0.0, 0.0
    if w <= _SERIES_W_MAX:
        f, err = _mwright_series(beta, w)
        # for beta near 1 the series cancels badly at moderate w
        if err <= 1e-3 * _G_ABS_TOL:
            return f, err
    u = w ** (-1.0 / beta)
    g, err = _g_zolotarev(beta, u)
    scale = w ** (-1.0 - 1.0 / beta) / beta
    return scale * g, scale * err


def inv_subordinator_density(beta, t, x):
    """Density of the inverse stable subordinator ``E_t`` at ``x > 0``.

    ``f_{E_t}(x) = t / beta * x^(-1 - 1/beta) * g_beta(t x^(-1/beta))``,
    evaluated through the self-similar form ``t^-beta f_{E_1}(x t^-beta)``
    so that neither tail overflows.  Accepts arrays in ``x``.
    """
    beta = _check_beta(beta, allow_one=False)
    t = float(t)
    if not t > 0:
        raise DomainError("t must be positive")
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("inv_subordinator_density requires x > 0")
    scale = t ** (-beta)
    out = np.empty(xa.shape)
    for idx, val in np.ndenumerate(xa):
        f, err = _mwright_scalar(beta, float(val) * scale)
        if err > _G_ABS_TOL:
            raise AccuracyError(f"f_E error estimate {err:.3g} > {_G_ABS_TOL}")
        out[idx] = scale * f
    return float(out) if out.ndim == 0 else out


def inv_subordinator_moment(beta, t, k):
    """``E[E_t^k] = Gamma(1 + k) t^(beta k) / Gamma(1 + beta k)`` for ``k > -1``."""
    beta = _check_beta(beta, allow_one=False)
    if not t > 0:
        raise DomainError("t must be positive")
    if not k > -1:
        raise DomainError("moment order k must exceed -1")
    return math.exp(
        math.lgamma(1 + k) - math.lgamma(1 + beta * k) + beta * k * math.log(t)
    )
