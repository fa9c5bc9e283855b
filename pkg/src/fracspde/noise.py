"""Discretized space-time white noise on a periodic grid.

Every increment is a deterministic function of ``(master_seed,
replicate_index, m, k)``: the replicate selects a Philox key and the
increment ``(m, k)`` sits at position ``m * n_cells + k`` of that key's
counter stream.  Any row can therefore be regenerated on its own, and
results never depend on how replicates are spread over workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError

__all__ = [
    "GridSpec",
    "NoiseRealization",
    "sample_noise",
    "sample_noise_row",
    "walsh_integral",
    "dump_noise",
    "load_noise",
]

_MAGIC = b"FSPDENZ1"
_HEADER = struct.Struct("<8s I d d I I I Q Q")


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid on the torus ``[0, L)^d`` times ``[0, T]``.

    Attributes
    ----------
    L : float
        Side length of the torus.
    n_x : int
        Cells per spatial dimension; a power of two, at least 8.
    n_t : int
        Number of time steps, at least 8.
    T : float
        Time horizon.
    d : int
        Spatial dimension.
    """

    L: float
    n_x: int
    n_t: int
    T: float
    d: int = 1

    def __post_init__(self):
        if not self.L > 0 or not self.T > 0:
            raise ConfigError("grid L and T must be positive")
        if self.n_x < 8 or self.n_x & (self.n_x - 1):
            raise ConfigError(f"n_x must be a power of two >= 8, got {self.n_x}")
        if self.n_t < 8:
            raise ConfigError(f"n_t must be at least 8, got {self.n_t}")
        if self.d < 1:
            raise ConfigError("d must be at least 1")

    @property
    def dx(self) -> float:
        return self.L / self.n_x

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def n_cells(self) -> int:
        """Spatial cells per time row."""
        return self.n_x**self.d

    @property
    def cell_volume(self) -> float:
        """``dt * dx^d``, the variance of one noise increment."""
        return self.dt * self.dx**self.d

    @property
    def space_shape(self) -> tuple:
        return (self.n_x,) * self.d

    def x_coords(self) -> np.ndarray:
        return self.dx * np.arange(self.n_x)

    def t_coords(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t + 1)


@dataclass(frozen=True)
class NoiseRealization:
    """White-noise increments over the cells of ``grid``.

    ``increments[m, k...]`` is the noise mass of the cell
    ``[t_m, t_{m+1}) x [x_k, x_k + dx)``.
    """

    grid: GridSpec
    master_seed: int
    replicate_index: int
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.increments.setflags(write=False)


def _key(master_seed, replicate_index):
    if master_seed < 0 or master_seed >= 2**64:
        raise DomainError("master_seed must be an unsigned 64-bit integer")
    if replicate_index < 0:
        raise DomainError("replicate_index must be nonnegative")
    seq = np.random.SeedSequence([int(master_seed), int(replicate_index)])
    return seq.generate_state(2, np.uint64)


def _raw_to_normal(raw):
    """Map 64-bit words to standard normals by the inverse CDF."""
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return special.ndtri(u)


def _stream(master_seed, replicate_index, start, count):
    """``count`` standard normals from stream position ``start``."""
    # Philox4x64 emits four words per counter value; start is a multiple of 4
    bitgen = np.random.Philox(
        key=_key(master_seed, replicate_index), counter=[start // 4, 0, 0, 0]
    )
    return _raw_to_normal(bitgen.random_raw(count))


def sample_noise(grid: GridSpec, master_seed: int, replicate_index: int) -> NoiseRealization:
    """Draw the noise increments of one replicate.

    Each increment is ``N(0, dt * dx^d)``; increments are independent.
    Identical arguments give bit-identical arrays.
    """
    n = grid.n_t * grid.n_cells
    z = _stream(master_seed, replicate_index, 0, n)
    z *= np.sqrt(grid.cell_volume)
    incr = z.reshape((grid.n_t,) + grid.space_shape)
    return NoiseRealization(grid, int(master_seed), int(replicate_index), incr)


def sample_noise_row(grid: GridSpec, master_seed: int, replicate_index: int, m: int) -> np.ndarray:
    """Regenerate time row ``m`` of :func:`sample_noise` without the others."""
    if not 0 <= m < grid.n_t:
        raise DomainError(f"row {m} outside [0, {grid.n_t})")
    z = _stream(master_seed, replicate_index, m * grid.n_cells, grid.n_cells)
    return (z * np.sqrt(grid.cell_volume)).reshape(grid.space_shape)


def walsh_integral(h, noise: NoiseRealization) -> float:
    """Discrete Walsh integral ``sum_{m,k} h[m, k] dW[m, k]``."""
    h = np.asarray(h, dtype=float)
    if h.shape != noise.increments.shape:
        raise DomainError(
            f"integrand shape {h.shape} does not match noise shape {noise.increments.shape}"
        )
    return float(np.sum(h * noise.increments))


def dump_noise(noise: NoiseRealization, path) -> None:
    """Write a realization as a fixed header plus little-endian float64 payload."""
    g = noise.grid
    header = _HEADER.pack(
        _MAGIC, 1, g.L, g.T, g.n_x, g.n_t, g.d, noise.master_seed, noise.replicate_index
    )
    payload = np.ascontiguousarray(noise.increments, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_noise(path) -> NoiseRealization:
    """Read a realization written by :func:`dump_noise`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, L, T, n_x, n_t, d, seed, rep = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != 1:
        raise ConfigError(f"{path} is not a noise dump")
    grid = GridSpec(L=L, n_x=n_x, n_t=n_t, T=T, d=d)
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    expected = n_t * grid.n_cells
    if data.size != expected:
        raise ConfigError(f"payload has {data.size} values, expected {expected}")
    incr = data.astype(np.float64).reshape((n_t,) + grid.space_shape)
    return NoiseRealization(grid, seed, rep, incr)
