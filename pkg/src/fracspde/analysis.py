"""Ensemble statistics, Hoelder fits and the moment blow-up machinery.

Standard errors come from the jackknife over replicates.  The blow-up part
is deterministic: the threshold ``theta_0`` and a product-integration
solver for the Volterra inequality satisfied by the infimum of the second
moment under superlinear noise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientReplicatesError
from .kernel import FractionalParams, kernel_constants
from .solver import Ensemble

__all__ = [
    "BlowupParams",
    "MomentEstimate",
    "HolderFit",
    "VolterraResult",
    "FiniteEnergyEstimate",
    "jackknife",
    "estimate_moment",
    "ensemble_variance",
    "excess_kurtosis",
    "holder_exponent",
    "log_spaced_lags",
    "blowup_params",
    "blowup_threshold",
    "graded_grid",
    "product_integration_weights",
    "iterate_moment_inequality",
    "laplace_transform",
    "finite_energy",
]

MIN_REPLICATES = 100
OVERFLOW_CAP = 1e300


@dataclass(frozen=True)
class BlowupParams:
    """Inputs of the blow-up argument.

    Attributes
    ----------
    c : float
        Lower growth constant, ``inf |sigma(y)| / |y|^(1+epsilon)``.
    l : float
        Lower bound of the initial condition.
    epsilon : float
        Superlinearity exponent.
    rho : float
        Energy discount rate.
    c_one : float
        ``C1 = C* Gamma(1 - beta d / alpha)``.
    """

    c: float
    l: float
    epsilon: float
    rho: float
    c_one: float

    def __post_init__(self):
        for name in ("c", "l", "rho", "c_one"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be nonnegative")


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of ``E|u_t(x)|^k``."""

    value: float
    std_error: float
    k: float
    t: float
    x: float
    n_replicates: int


@dataclass(frozen=True)
class HolderFit:
    """Log-log regression of increment moments on the lag."""

    slope: float
    std_error: float
    ci_low: float
    ci_high: float
    lags: np.ndarray = field(repr=False)
    moments: np.ndarray = field(repr=False)


@dataclass
class VolterraResult:
    """Iterates ``I_n`` on ``t_grid`` with the divergence flag."""

    t_grid: np.ndarray
    iterates: list
    diverged: bool
    kernel_scale: float


@dataclass(frozen=True)
class FiniteEnergyEstimate:
    """Discounted second-moment integral with its standard error."""

    value: float
    std_error: float
    horizon: float
    horizon_ok: bool
    overflow: bool = False


# ---------------------------------------------------------------------------
# jackknife
# ---------------------------------------------------------------------------


def jackknife(samples, statistic, n_groups: int = 200):
    """Grouped delete-one jackknife over the first axis.

    Parameters
    ----------
    samples : ndarray
        Replicates along axis 0.
    statistic : callable
        Maps an array of replicates to a float or an array.
    n_groups : int
        Number of contiguous groups; each jackknife sample leaves one out.
        With ``n_groups >= len(samples)`` this is the classical jackknife.

    Returns
    -------
    (estimate, std_error)
        The full-sample statistic and its jackknife standard error.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    g = min(n_groups, n)
    full = np.asarray(statistic(samples), dtype=float)
    edges = np.linspace(0, n, g + 1).round().astype(int)
    reps = []
    for a, b in zip(edges[:-1], edges[1:]):
        keep = np.concatenate([samples[:a], samples[b:]])
        reps.append(np.asarray(statistic(keep), dtype=float))
    reps = np.array(reps)
    se = np.sqrt((g - 1) / g * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    if full.ndim == 0:
        return float(full), float(se)
    return full, se


def _check_replicates(ensemble):
    if ensemble.n_replicates < MIN_REPLICATES:
        raise InsufficientReplicatesError(
            f"{ensemble.n_replicates} replicates; at least {MIN_REPLICATES} are required"
        )


def _x_index(ensemble, x):
    k = int(round(x / ensemble.grid.dx)) % ensemble.grid.n_x
    if abs(k * ensemble.grid.dx - x % ensemble.grid.L) > 1e-9 * max(1.0, abs(x)):
        raise DomainError(f"x={x} is not a grid point")
    return k


def _point_samples(ensemble, t, x):
    i = ensemble.step_index(t)
    k = _x_index(ensemble, x)
    return ensemble.values[:, i, k]


def estimate_moment(ensemble: Ensemble, t: float, x: float, k: float) -> MomentEstimate:
    """Mean of ``|u_t(x)|^k`` over replicates with its jackknife error (d = 1)."""
    if not k >= 1:
        raise DomainError("k must be at least 1")
    _check_replicates(ensemble)
    v = np.abs(_point_samples(ensemble, t, x)) ** k
    n = v.size
    # delete-one jackknife of the mean in closed form
    loo = (v.sum() - v) / (n - 1)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return MomentEstimate(float(v.mean()), se, float(k), float(t), float(x), n)


def ensemble_variance(ensemble: Ensemble, t: float, x: float):
    """Sample variance of ``u_t(x)`` and its jackknife standard error."""
    _check_replicates(ensemble)
    return jackknife(_point_samples(ensemble, t, x), lambda s: np.var(s, ddof=1))


def _kurt(s):
    c = s - s.mean()
    m2 = np.mean(c**2)
    return np.mean(c**4) / m2**2 - 3.0


def excess_kurtosis(ensemble: Ensemble, t: float, x: float):
    """Sample excess kurtosis of ``u_t(x)`` and its jackknife standard error."""
    _check_replicates(ensemble)
    return jackknife(_point_samples(ensemble, t, x), _kurt)


# ---------------------------------------------------------------------------
# Hoelder exponents
# ---------------------------------------------------------------------------


def log_spaced_lags(lo, hi, n_lags):
    """Distinct integers spread geometrically over [lo, hi]."""
    lo_i, hi_i = int(math.ceil(lo - 1e-9)), int(math.floor(hi + 1e-9))
    if hi_i < lo_i:
        return np.array([], dtype=int)
    cand = np.unique(np.round(np.geomspace(max(lo_i, 1), hi_i, n_lags)).astype(int))
    return cand[(cand >= lo_i) & (cand <= hi_i)]


def _slope(lags, moments):
    x = np.log(lags)
    return float(np.polyfit(x, np.log(moments), 1)[0])


def holder_exponent(
    ensemble: Ensemble,
    axis: str,
    k: int,
    lag_range,
    base_time: float | None = None,
    n_lags: int = 8,
) -> HolderFit:
    """Fit ``log E|increment|^k`` against ``log lag``.

    Moments are averaged over replicates and over all spatial positions,
    which is legitimate because the additive solution is stationary in
    space.  The 95% interval uses the jackknife over replicate groups.

    Parameters
    ----------
    axis : {"time", "space"}
        Direction of the increments.
    k : int
        Even moment order.
    lag_range : (float, float)
        Physical lag interval; lags are grid multiples inside it.
    base_time : float, optional
        Time of the increments' left end (``axis="time"``) or the
        observation time (``axis="space"``).  Defaults to the first output
        time for ``"time"`` and the last for ``"space"``.
    n_lags : int
        Target number of log-spaced lags.

    Raises
    ------
    DomainError
        If fewer than four lags fall inside ``lag_range``.
    """
    if k < 2 or k % 2:
        raise DomainError("k must be an even integer >= 2")
    _check_replicates(ensemble)
    grid = ensemble.grid
    lo, hi = map(float, lag_range)
    if axis == "time":
        t0 = ensemble.times[0] if base_time is None else base_time
        i0 = ensemble.step_index(t0)
        n0 = int(ensemble.steps[i0])
        available = set(int(s) - n0 for s in ensemble.steps if s > n0)
        cand = log_spaced_lags(lo / grid.dt, hi / grid.dt, n_lags)
        lags = np.array([c for c in cand if c in available], dtype=int)
        if lags.size < 4:
            raise DomainError(f"only {lags.size} time lags resolved in {lag_range}")
        rows = [ensemble.step_index((n0 + lag) * grid.dt) for lag in lags]
        base = ensemble.values[:, i0]
        incr = np.stack([ensemble.values[:, r] - base for r in rows], axis=1)
        lag_phys = lags * grid.dt
    elif axis == "space":
        t1 = ensemble.times[-1] if base_time is None else base_time
        field_t = ensemble.values[:, ensemble.step_index(t1)]
        lags = log_spaced_lags(lo / grid.dx, hi / grid.dx, n_lags)
        if lags.size < 4:
            raise DomainError(f"only {lags.size} space lags resolved in {lag_range}")
        incr = np.stack([np.roll(field_t, -s, axis=-1) - field_t for s in lags], axis=1)
        lag_phys = lags * grid.dx
    else:
        raise DomainError("axis must be 'time' or 'space'")

    per_rep = np.mean(np.abs(incr) ** k, axis=tuple(range(2, incr.ndim)))

    def stat(block):
        return _slope(lag_phys, block.mean(axis=0))

    slope, se = jackknife(per_rep, stat, n_groups=100)
    return HolderFit(
        slope, se, slope - 1.96 * se, slope + 1.96 * se, lag_phys, per_rep.mean(axis=0)
    )


# ---------------------------------------------------------------------------
# blow-up threshold and the Volterra inequality
# ---------------------------------------------------------------------------


def blowup_params(params: FractionalParams, c: float, l: float, epsilon: float, rho: float = 1.0) -> BlowupParams:
    """Build :class:`BlowupParams` with ``c_one`` taken from :func:`kernel_constants`."""
    return BlowupParams(c, l, epsilon, rho, kernel_constants(params).c_one)


def blowup_threshold(params: FractionalParams, bp: BlowupParams) -> float:
    """``theta_0 = (c^2 C1 l^(2 epsilon))^(alpha / (alpha - beta d))``."""
    gap = params.alpha - params.beta * params.d
    if not gap > 0:
        raise DomainError("blow-up threshold needs alpha > beta d")
    return (bp.c**2 * bp.c_one * bp.l ** (2 * bp.epsilon)) ** (params.alpha / gap)


def graded_grid(T: float, n: int, grading: float = 2.0) -> np.ndarray:
    """``t_i = T (i/n)^grading``, clustered at 0 to follow the kernel singularity."""
    if n < 2 or not T > 0 or grading < 1:
        raise DomainError("need n >= 2, T > 0 and grading >= 1")
    return T * (np.arange(n + 1) / n) ** grading


def product_integration_weights(t_grid, gamma: float) -> np.ndarray:
    """Weights ``W`` with ``(W f)_i = int_0^{t_i} (t_i - s)^-gamma f(s) ds``.

    ``f`` is taken piecewise linear between grid nodes; the singular factor
    is integrated exactly.
    """
    t = np.asarray(t_grid, dtype=float)
    if not 0 <= gamma < 1:
        raise DomainError("gamma must lie in [0, 1)")
    n = t.size
    W = np.zeros((n, n))
    e0, e1 = 1.0 - gamma, 2.0 - gamma
    for i in range(1, n):
        a, b = t[:i], t[1 : i + 1]
        U, V = t[i] - a, t[i] - b
        h = b - a
        m0 = (U**e0 - V**e0) / e0
        m1 = (U**e1 - V**e1) / e1
        p = U * m0 - m1  # int K(s) (s - a) ds
        W[i, :i] += m0 - p / h
        W[i, 1 : i + 1] += p / h
    return W


def iterate_moment_inequality(
    params: FractionalParams,
    bp: BlowupParams,
    t_grid,
    n_iter: int,
    weights=None,
) -> VolterraResult:
    """Iterate ``I_{n+1}(t) = l^2 + c^2 C* int_0^t (t-s)^(-beta d/alpha) I_n(s)^(1+eps) ds``.

    ``C*`` is the L2 prefactor of the kernel, so ``C* (t-s)^(-beta d/alpha)``
    is ``||G_{t-s}||^2``; with it the threshold from
    :func:`blowup_threshold` is the one that matches this recursion.
    Values are capped at ``OVERFLOW_CAP`` and the divergence flag is set
    once the cap is reached.
    """
    t = np.asarray(t_grid, dtype=float)
    if t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must start at 0 and increase")
    gamma = params.decay_exponent
    c_star = bp.c_one / math.gamma(1.0 - gamma)
    W = product_integration_weights(t, gamma) if weights is None else weights
    scale = bp.c**2 * c_star
    current = np.full(t.shape, bp.l**2)
    iterates = [current.copy()]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_iter):
            powered = np.minimum(current, OVERFLOW_CAP) ** (1.0 + bp.epsilon)
            nxt = bp.l**2 + scale * (W @ np.minimum(powered, OVERFLOW_CAP))
            nxt = np.where(np.isfinite(nxt), nxt, OVERFLOW_CAP)
            nxt = np.minimum(np.maximum(nxt, current), OVERFLOW_CAP)
            if np.any(nxt >= OVERFLOW_CAP):
                diverged = True
            current = nxt
            iterates.append(current.copy())
    return VolterraResult(t, iterates, diverged, scale)


def laplace_transform(t_grid, values, theta: float) -> float:
    """Trapezoidal ``int e^(-theta t) I(t) dt`` over the grid (capped values stay finite)."""
    t = np.asarray(t_grid, dtype=float)
    f = np.exp(-theta * t) * np.asarray(values, dtype=float)
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t)))


# ---------------------------------------------------------------------------
# finite energy
# ---------------------------------------------------------------------------


def finite_energy(ensemble: Ensemble, rho: float, horizon: float | None = None) -> FiniteEnergyEstimate:
    """``int_0^T e^(-rho t) E|u_t(x)|^2 dt`` averaged over ``x``.

    The time integral is the trapezoidal rule over the output times up to
    ``horizon`` (default: the last output time).  Replicates that overflowed
    make the estimate infinite and set ``overflow``.  A ``RuntimeWarning``
    is issued when the integrand at the horizon exceeds 1% of the integral.
    """
    if not rho > 0:
        raise DomainError("rho must be positive")
    times = ensemble.times
    T = times[-1] if horizon is None else horizon
    keep = times <= T + 1e-12
    t = times[keep]
    overflow = bool(ensemble.overflow is not None and np.any(ensemble.overflow))
    vals = ensemble.values[:, keep]
    if overflow or not np.all(np.isfinite(vals)):
        return FiniteEnergyEstimate(math.inf, math.inf, float(T), False, True)
    second = np.mean(vals**2, axis=tuple(range(2, vals.ndim)))  # (R, n_t)
    disc = np.exp(-rho * t)

    def stat(block):
        f = disc * block.mean(axis=0)
        return np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t))

    if ensemble.n_replicates > 1:
        value, se = jackknife(second, stat, n_groups=100)
    else:
        value, se = float(stat(second)), 0.0
    end = disc[-1] * second[:, -1].mean()
    ok = bool(end <= 0.01 * value)
    if not ok:
        warnings.warn(
            f"integrand at T={T} is {end:.3g}, above 1% of the integral {value:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return FiniteEnergyEstimate(float(value), float(se), float(T), ok)
