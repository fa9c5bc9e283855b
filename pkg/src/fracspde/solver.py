"""Mild-solution schemes on the periodic grid.

The kernel ``G_{t_n - t_m}`` is applied spectrally: a field ``f`` on the
grid is convolved as ``irfft(symbol * rfft(f)) / dx^d``.  The noise term is
the full-history sum over past time cells with ``sigma`` evaluated at the
left endpoint of each cell.

When the noise coefficient does not depend on the solution, the
history sum is a causal convolution in time for every Fourier mode and is
evaluated by FFT.  The general scheme loops over time steps.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .kernel import FractionalParams, _time_sq_integral, symbol
from .noise import GridSpec, NoiseRealization, sample_noise

__all__ = [
    "SigmaSpec",
    "Trajectory",
    "PicardState",
    "Ensemble",
    "default_torus_length",
    "wavenumbers",
    "symbol_table",
    "initial_convolution",
    "solve_mild_direct",
    "solve_picard",
    "stochastic_convolution",
    "run_ensemble",
    "block_size",
    "weighted_norm",
    "mode_sum_variance",
    "mode_sum_time_increment",
    "mode_sum_space_increment",
    "write_trajectory_csv",
    "write_trajectory_binary",
]

OVERFLOW_LEVEL = 1e12
BLOCK_SIZE = 16
_BLOCK_VALUES = 2**22


def block_size(grid: GridSpec) -> int:
    """Replicates per work unit; depends on the grid only, never on workers."""
    return max(1, min(BLOCK_SIZE, _BLOCK_VALUES // (grid.n_t * grid.n_cells)))


@dataclass(frozen=True)
class SigmaSpec:
    """Noise coefficient ``sigma(u)``.

    ``family`` is ``"constant"`` (``sigma = c``), ``"affine"``
    (``sigma = a + b u``) or ``"power"`` (``sigma = c |u|^(1+epsilon)``).
    """

    family: str
    c: float = 1.0
    a: float = 0.0
    b: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "affine", "power"):
            raise ConfigError(f"unknown sigma family {self.family!r}")
        if self.family == "power" and not self.epsilon > 0:
            raise ConfigError("power family needs epsilon > 0")

    @classmethod
    def constant(cls, c):
        return cls("constant", c=float(c))

    @classmethod
    def affine(cls, a, b):
        return cls("affine", a=float(a), b=float(b))

    @classmethod
    def power(cls, c, epsilon):
        return cls("power", c=float(c), epsilon=float(epsilon))

    @property
    def lip(self) -> Optional[float]:
        """Lipschitz constant, or ``None`` for the superlinear family."""
        if self.family == "constant":
            return 0.0
        if self.family == "affine":
            return abs(self.b)
        return None

    @property
    def is_lipschitz(self) -> bool:
        return self.lip is not None

    @property
    def is_state_independent(self) -> bool:
        return self.family == "constant" or (self.family == "affine" and self.b == 0.0)

    def __call__(self, u):
        if self.family == "constant":
            return np.full_like(np.asarray(u, dtype=float), self.c)
        if self.family == "affine":
            return self.a + self.b * u
        return self.c * np.abs(u) ** (1.0 + self.epsilon)

    def to_dict(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "c": self.c}
        if self.family == "affine":
            return {"family": "affine", "a": self.a, "b": self.b}
        return {"family": "power", "c": self.c, "epsilon": self.epsilon}


@dataclass
class Trajectory:
    """Solution values at selected output steps of one replicate.

    ``values[i]`` is the field at time ``steps[i] * grid.dt``.
    """

    grid: GridSpec
    values: np.ndarray
    steps: np.ndarray
    provenance: dict = field(default_factory=dict)
    overflow: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.grid.dt


@dataclass
class PicardState:
    """Picard iterates on one noise realization and their sup-norm gaps."""

    iterates: list
    diffs: list

    @property
    def ratios(self) -> list:
        return [b / a if a > 0 else 0.0 for a, b in zip(self.diffs[:-1], self.diffs[1:])]


@dataclass
class Ensemble:
    """Replicates stacked along the first axis: ``values[r, i, x...]``."""

    grid: GridSpec
    values: np.ndarray
    steps: np.ndarray
    provenance: dict = field(default_factory=dict)
    overflow: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.grid.dt

    @property
    def n_replicates(self) -> int:
        return self.values.shape[0]

    def step_index(self, t: float) -> int:
        """Row of ``values`` holding output time ``t``."""
        n = int(round(t / self.grid.dt))
        hit = np.nonzero(self.steps == n)[0]
        if hit.size == 0 or abs(n * self.grid.dt - t) > 1e-9 * max(1.0, t):
            raise DomainError(f"time {t} is not an output time of this ensemble")
        return int(hit[0])


# ---------------------------------------------------------------------------
# spectral helpers
# ---------------------------------------------------------------------------


def default_torus_length(params: FractionalParams, T: float) -> float:
    """Torus side of eight kernel standard deviations at time ``T``.

    For ``alpha = 2`` each coordinate of the kernel has variance
    ``2 nu T^beta / Gamma(1 + beta)``.  For ``alpha < 2`` the variance is
    infinite and the natural scale ``(nu T^beta)^(1/alpha)`` times
    ``sqrt(2 / Gamma(1 + beta))`` is used instead.
    """
    scale = (params.nu * T**params.beta) ** (1.0 / params.alpha)
    return 8.0 * scale * math.sqrt(2.0 / math.gamma(1.0 + params.beta))


def wavenumbers(grid: GridSpec) -> np.ndarray:
    """``|xi|`` on the real-FFT layout of the grid."""
    full = 2 * np.pi * np.fft.fftfreq(grid.n_x, d=grid.dx)
    half = 2 * np.pi * np.fft.rfftfreq(grid.n_x, d=grid.dx)
    axes = [full] * (grid.d - 1) + [half]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


def _space_axes(grid):
    return tuple(range(-grid.d, 0))


def _rfft(f, grid):
    return np.fft.rfftn(f, axes=_space_axes(grid))


def _irfft(fh, grid):
    return np.fft.irfftn(fh, s=grid.space_shape, axes=_space_axes(grid))


def symbol_table(params: FractionalParams, grid: GridSpec) -> np.ndarray:
    """``table[k] = symbol(k dt, |xi|)`` for ``k = 0..n_t`` (row 0 is all ones).

    Cached per process; the returned array is read-only.
    """
    return _symbol_table_cached(params, grid)


@lru_cache(maxsize=8)
def _symbol_table_cached(params, grid):
    xi = wavenumbers(grid)
    table = np.empty((grid.n_t + 1,) + xi.shape)
    table[0] = 1.0
    for k in range(1, grid.n_t + 1):
        table[k] = symbol(params, k * grid.dt, xi)
    table.setflags(write=False)
    return table


def initial_convolution(params: FractionalParams, u0, t: float, L: float) -> np.ndarray:
    """``G_t * u0`` on the torus of side ``L``, computed mode by mode."""
    if not t > 0:
        raise DomainError("t must be positive")
    u0 = np.asarray(u0, dtype=float)
    d = u0.ndim
    n_x = u0.shape[0]
    grid = GridSpec(L=L, n_x=n_x, n_t=8, T=1.0, d=d)
    return _irfft(symbol(params, t, wavenumbers(grid)) * _rfft(u0, grid), grid)


def _check_inputs(params, u0, grid, noise):
    if params.d != grid.d:
        raise ConfigError("params.d and grid.d differ")
    if noise is not None and noise.grid != grid:
        raise ConfigError("noise was sampled on a different grid")
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), grid.space_shape)
    return np.array(u0)


def _output_steps(grid, output_steps):
    if output_steps is None:
        return np.arange(grid.n_t + 1)
    steps = np.unique(np.asarray(output_steps, dtype=int))
    if steps.size == 0 or steps[0] < 0 or steps[-1] > grid.n_t:
        raise DomainError("output steps must lie in [0, n_t]")
    return steps


def _initial_rows(table, u0, grid, steps):
    u0h = _rfft(u0, grid)
    return _irfft(table[steps] * u0h, grid)


_DIRECT_SUM_MAX_STEPS = 16


def _causal_time_convolution(table, forcing_hat, steps):
    """``out[i] = sum_{m < n_i} table[n_i - m] * forcing_hat[m]`` for ``n_i`` in steps.

    ``forcing_hat`` has time along axis -1 - d; leading axes are batch.
    With few output steps the sums are formed directly; otherwise all
    steps are obtained at once by FFT along time.
    """
    n_t = forcing_hat.shape[-table.ndim]
    axis = forcing_hat.ndim - table.ndim
    if len(steps) <= _DIRECT_SUM_MAX_STEPS:
        moved = np.moveaxis(forcing_hat, axis, 0)
        rows = []
        for n in steps:
            if n == 0:
                rows.append(np.zeros(moved.shape[1:], dtype=complex))
            else:
                rows.append(np.sum(table[n:0:-1].reshape((n,) + (1,) * axis + table.shape[1:]) * moved[:n], axis=0))
        return np.stack(rows, axis=axis)
    kernel = table.copy()
    kernel[0] = 0.0
    size = 2 * (n_t + 1)
    k_hat = np.fft.fft(kernel, n=size, axis=0)
    f_hat = np.fft.fft(forcing_hat, n=size, axis=axis)
    conv = np.fft.ifft(k_hat * f_hat, axis=axis)
    return np.take(conv, steps, axis=axis)


def stochastic_convolution(params, forcing, grid: GridSpec, steps=None, table=None) -> np.ndarray:
    """Noise term ``sum_{m < n} G_{t_n - t_m} conv forcing[m]`` at output steps.

    ``forcing[..., m, x...]`` is ``sigma * dW`` on cell ``m``; leading axes
    are treated as independent batch entries.
    """
    if table is None:
        table = symbol_table(params, grid)
    steps = _output_steps(grid, steps)
    fh = _rfft(np.asarray(forcing, dtype=float), grid) / grid.dx**grid.d
    conv = _causal_time_convolution(table, fh, steps)
    return _irfft(conv, grid)


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------


def _provenance(params, sigma, noise, scheme):
    from . import __version__

    return {
        "params": asdict(params),
        "sigma": sigma.to_dict(),
        "grid": asdict(noise.grid),
        "master_seed": noise.master_seed,
        "replicate": noise.replicate_index,
        "scheme": scheme,
        "code_version": __version__,
    }


def solve_mild_direct(
    params: FractionalParams,
    sigma: SigmaSpec,
    u0,
    grid: GridSpec,
    noise: NoiseRealization,
    output_steps=None,
    allow_blowup: bool = False,
    table=None,
) -> Trajectory:
    """Full-history mild scheme on one noise realization.

    ``u(t_n) = G_{t_n} * u0 + sum_{m < n} G_{t_n - t_m} conv (sigma(u(t_m)) dW_m)``.

    Parameters
    ----------
    output_steps : sequence of int, optional
        Time steps to keep; all steps by default.
    allow_blowup : bool
        Required for non-Lipschitz ``sigma``.  Values exceeding
        ``OVERFLOW_LEVEL`` then set the overflow flag and stop the run,
        leaving later rows as NaN.

    Raises
    ------
    ConfigError
        If ``sigma`` is not Lipschitz and ``allow_blowup`` is false.
    DivergenceError
        If a Lipschitz run produces non-finite values.
    """
    if not sigma.is_lipschitz and not allow_blowup:
        raise ConfigError("non-Lipschitz sigma requires allow_blowup=True")
    u0 = _check_inputs(params, u0, grid, noise)
    steps = _output_steps(grid, output_steps)
    if table is None:
        table = symbol_table(params, grid)
    scale = grid.dx ** (-grid.d)
    prov = _provenance(params, sigma, noise, "direct")

    if sigma.is_state_independent:
        init = _initial_rows(table, u0, grid, steps)
        forcing = sigma(u0)[None] * noise.increments
        fh = _rfft(forcing, grid) * scale
        values = init + _irfft(_causal_time_convolution(table, fh, steps), grid)
        return Trajectory(grid, values, steps, prov)

    u0h = _rfft(u0, grid)
    n_modes = u0h.shape
    forcing_hat = np.empty((grid.n_t,) + n_modes, dtype=complex)
    out = np.full((steps.size,) + grid.space_shape, np.nan)
    want = {int(n): i for i, n in enumerate(steps)}
    u = u0.copy()
    overflow = False
    for n in range(grid.n_t + 1):
        if n > 0:
            hist = np.einsum("m...,m...->...", table[n:0:-1], forcing_hat[:n])
            u = _irfft(table[n] * u0h + hist, grid)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > OVERFLOW_LEVEL:
            if allow_blowup:
                overflow = True
                break
            raise DivergenceError(f"non-finite or overflowing values at step {n}")
        if n in want:
            out[want[n]] = u
        if n < grid.n_t:
            forcing_hat[n] = _rfft(sigma(u) * noise.increments[n], grid) * scale
    return Trajectory(grid, out, steps, prov, overflow=overflow)


def solve_picard(
    params: FractionalParams,
    sigma: SigmaSpec,
    u0,
    grid: GridSpec,
    noise: NoiseRealization,
    n_iter: int,
    table=None,
) -> PicardState:
    """Picard iteration ``u^(n+1) = G * u0 + G conv (sigma(u^(n)) dW)``.

    Starts from ``u^(0) = u0`` at every time and records the sup-norm
    difference of consecutive iterates over the whole space-time grid.

    Raises
    ------
    DivergenceError
        If the differences grow for three consecutive iterations.
    """
    if not sigma.is_lipschitz:
        raise ConfigError("Picard iteration requires a Lipschitz sigma")
    if n_iter < 2:
        raise DomainError("n_iter must be at least 2")
    u0 = _check_inputs(params, u0, grid, noise)
    if table is None:
        table = symbol_table(params, grid)
    steps = np.arange(grid.n_t + 1)
    init = _initial_rows(table, u0, grid, steps)
    scale = grid.dx ** (-grid.d)
    current = np.broadcast_to(u0, (grid.n_t + 1,) + grid.space_shape).copy()
    prov = _provenance(params, sigma, noise, "picard")
    iterates = [Trajectory(grid, current, steps, dict(prov, iteration=0))]
    diffs = []
    growth = 0
    for it in range(1, n_iter + 1):
        forcing = sigma(current[:-1]) * noise.increments
        fh = _rfft(forcing, grid) * scale
        nxt = init + _irfft(_causal_time_convolution(table, fh, steps), grid)
        diff = float(np.max(np.abs(nxt - current)))
        if diffs and diff > diffs[-1]:
            growth += 1
        else:
            growth = 0
        diffs.append(diff)
        current = nxt
        iterates.append(Trajectory(grid, current, steps, dict(prov, iteration=it)))
        if growth >= 3 or not np.isfinite(diff):
            raise DivergenceError(f"Picard differences grew for 3 iterations (last {diff:.3g})")
    return PicardState(iterates, diffs)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


def _run_block(args):
    params, sigma, u0, grid, seed, replicates, steps, allow_blowup = args
    table = symbol_table(params, grid)
    scale = grid.dx ** (-grid.d)
    if sigma.is_state_independent:
        noises = np.stack([sample_noise(grid, seed, r).increments for r in replicates])
        init = _initial_rows(table, u0, grid, steps)
        forcing = sigma(u0)[None, None] * noises
        fh = _rfft(forcing, grid) * scale
        vals = init[None] + _irfft(_causal_time_convolution(table, fh, steps), grid)
        return vals, np.zeros(len(replicates), dtype=bool)
    vals, flags = [], []
    for r in replicates:
        traj = solve_mild_direct(
            params, sigma, u0, grid, sample_noise(grid, seed, r), steps, allow_blowup, table
        )
        vals.append(traj.values)
        flags.append(traj.overflow)
    return np.stack(vals), np.array(flags)


def run_ensemble(
    params: FractionalParams,
    sigma: SigmaSpec,
    u0,
    grid: GridSpec,
    master_seed: int,
    n_replicates: int,
    output_steps=None,
    workers: int = 1,
    allow_blowup: bool = False,
) -> Ensemble:
    """Solve replicates ``0..n_replicates-1`` and stack them by index.

    Replicates are processed in fixed blocks (see :func:`block_size`) whatever
    the worker count, so the output is bit-identical for any ``workers``.
    """
    if n_replicates < 1:
        raise DomainError("n_replicates must be positive")
    if params.d != grid.d:
        raise ConfigError("params.d and grid.d differ")
    u0 = np.array(np.broadcast_to(np.asarray(u0, dtype=float), grid.space_shape))
    steps = _output_steps(grid, output_steps)
    bs = block_size(grid)
    blocks = [
        (params, sigma, u0, grid, master_seed, range(s, min(s + bs, n_replicates)), steps, allow_blowup)
        for s in range(0, n_replicates, bs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, blocks))
    else:
        results = [_run_block(b) for b in blocks]
    values = np.concatenate([r[0] for r in results])
    flags = np.concatenate([r[1] for r in results])
    from . import __version__

    prov = {
        "params": asdict(params),
        "sigma": sigma.to_dict(),
        "grid": asdict(grid),
        "master_seed": int(master_seed),
        "n_replicates": int(n_replicates),
        "scheme": "direct",
        "code_version": __version__,
    }
    return Ensemble(grid, values, steps, prov, flags)


def weighted_norm(ensemble: Ensemble, gamma: float, k: float) -> float:
    """``sup_{t,x} e^(-gamma t) (E|u_t(x)|^k)^(1/k)`` from the ensemble."""
    import warnings

    if not gamma >= 0:
        raise DomainError("gamma must be nonnegative")
    if k < 2:
        raise DomainError("k must be at least 2")
    if ensemble.n_replicates < 100:
        warnings.warn("weighted_norm from fewer than 100 replicates", RuntimeWarning, stacklevel=2)
    moment = np.mean(np.abs(ensemble.values) ** k, axis=0) ** (1.0 / k)
    space_axes = tuple(range(1, moment.ndim))
    sup_x = np.max(moment, axis=space_axes) if space_axes else moment
    return float(np.max(np.exp(-gamma * ensemble.times) * sup_x))


# ---------------------------------------------------------------------------
# deterministic oracles for the additive case
# ---------------------------------------------------------------------------


def _mode_weights(grid):
    """Multiplicity of each real-FFT mode so that sums run over all modes."""
    xi = wavenumbers(grid)
    w = np.full(xi.shape, 2.0)
    w[..., 0] = 1.0
    if grid.n_x % 2 == 0:
        w[..., -1] = 1.0
    return xi, w


def mode_sum_variance(params: FractionalParams, grid: GridSpec, t: float, discrete: bool = False) -> float:
    """Variance of the additive (``sigma = 1``, ``u0 = 0``) solution at time ``t``.

    The continuous version is ``L^-d sum_j int_0^t symbol(s, xi_j)^2 ds``
    over the grid modes.  The discrete version replaces the integral by the
    left-endpoint sum the scheme realizes, ``sum_{k=1}^{n} dt symbol(k dt)^2``.
    """
    xi, w = _mode_weights(grid)
    if discrete:
        n = int(round(t / grid.dt))
        s = sum(grid.dt * symbol(params, k * grid.dt, xi) ** 2 for k in range(1, n + 1))
    else:
        flat = xi.ravel()
        s = np.full(flat.shape, float(t))
        pos = flat > 0
        s[pos] = _time_sq_integral(params, t, flat[pos])
        s = s.reshape(xi.shape)
    return float(np.sum(w * s)) / grid.L**grid.d


def mode_sum_time_increment(params: FractionalParams, grid: GridSpec, n: int, lag: int) -> float:
    """Exact scheme value of ``E|u(t_{n+lag}) - u(t_n)|^2`` for the additive case."""
    xi, w = _mode_weights(grid)
    total = np.zeros(xi.shape)
    for m in range(n + lag):
        a = symbol(params, (n + lag - m) * grid.dt, xi)
        b = symbol(params, (n - m) * grid.dt, xi) if m < n else 0.0
        total += grid.dt * (a - b) ** 2
    return float(np.sum(w * total)) / grid.L**grid.d


def mode_sum_space_increment(params: FractionalParams, grid: GridSpec, n: int, shift: int) -> float:
    """Exact scheme value of ``E|u(t_n, x + shift dx) - u(t_n, x)|^2`` (d = 1)."""
    if grid.d != 1:
        raise DomainError("mode_sum_space_increment is one-dimensional")
    xi, w = _mode_weights(grid)
    s = sum(grid.dt * symbol(params, k * grid.dt, xi) ** 2 for k in range(1, n + 1))
    factor = 2.0 * (1.0 - np.cos(xi * shift * grid.dx))
    return float(np.sum(w * factor * s)) / grid.L


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path, digest: str = "") -> None:
    """Write ``t, x, value`` rows (d = 1) and a provenance JSON sidecar."""
    import csv

    if traj.grid.d != 1:
        raise DomainError("CSV export is one-dimensional")
    x = traj.grid.x_coords()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if digest:
            fh.write(f"# config_digest={digest}\n")
        writer.writerow(["t", "x", "value"])
        for t, row in zip(traj.times, traj.values):
            for xk, v in zip(x, row):
                writer.writerow([repr(float(t)), repr(float(xk)), repr(float(v))])
    side = dict(traj.provenance, overflow=traj.overflow)
    if digest:
        side["config_digest"] = digest
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


_TRAJ_MAGIC = b"FSPDETR1"
_TRAJ_HEADER = struct.Struct("<8s I d d I I I Q Q I")


def write_trajectory_binary(traj: Trajectory, path) -> None:
    """Binary layout mirroring the noise dump, plus the output-step list."""
    g = traj.grid
    prov = traj.provenance
    header = _TRAJ_HEADER.pack(
        _TRAJ_MAGIC, 1, g.L, g.T, g.n_x, g.n_t, g.d,
        int(prov.get("master_seed", 0)), int(prov.get("replicate", 0)), traj.steps.size,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(traj.steps, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())
