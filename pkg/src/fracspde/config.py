"""Experiment configuration: YAML schema, validation and digest.

A config is a single YAML mapping with the sections below.  Unknown keys at
any level are errors, so a misspelt tolerance cannot silently fall back to
its default.

.. code-block:: yaml

    experiment: moments          # see EXPERIMENTS
    params: {beta: 0.5, alpha: 2.0, nu: 1.0, d: 1}
    grid: {L: null, n_x: 256, n_t: 512, T: 1.0}   # L null -> default torus
    sigma: {family: constant, c: 1.0}
    u0: 0.0
    seeds: {master_seed: 20240601, n_replicates: 1000}
    options: {...}               # per-experiment, see OPTION_DEFAULTS
    output_dir: out
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .errors import ConfigError

__all__ = [
    "EXPERIMENTS",
    "OPTION_DEFAULTS",
    "ExperimentConfig",
    "Violation",
    "load_config",
    "validate",
]

EXPERIMENTS = (
    "kernel-table",
    "l2-scaling",
    "increments",
    "simulate",
    "moments",
    "holder",
    "picard",
    "blowup",
    "finite-energy",
)

SIMULATION_EXPERIMENTS = ("simulate", "moments", "holder", "picard", "finite-energy")

OPTION_DEFAULTS: dict = {
    "kernel-table": {"ts": [1.0], "xs": [0.0, 0.5, 1.0, 2.0], "method": "fourier"},
    "l2-scaling": {"ts": [0.25, 0.5, 1.0, 2.0, 4.0], "rel_tol": 1e-8},
    "increments": {
        "t": 1.0,
        "time_pairs": [[1.0, 1.1], [1.0, 1.5], [0.5, 2.0]],
        "space_lags": [1e-3, 2e-3, 5e-3, 1e-2],
        "slope_tol": 0.05,
    },
    "simulate": {"replicate": 0, "output_times": None},
    "moments": {"t": 1.0, "x": 0.0, "ks": [2, 4], "n_se": 3.0},
    "holder": {
        "axis": "time",
        "k": 2,
        "lag_range": [0.0078125, 0.125],
        "base_time": None,
        "expected_slope": None,
        "slope_tol": 0.1,
    },
    "picard": {"n_iter": 20, "max_ratio": 0.5, "floor": 1e-12, "replicate": 0},
    "blowup": {
        "c": 1.0,
        "l": 1.0,
        "epsilon": 0.5,
        "rho": 1.0,
        "T": 20.0,
        "n_grid": 800,
        "n_iter": 24,
        "theta_factor": 0.9,
        "bound": 1e6,
    },
    "finite-energy": {"rho": 1.0, "horizons": [4.0, 8.0], "stable_tol": 0.05},
}

_TOP_KEYS = {"experiment", "params", "grid", "sigma", "u0", "seeds", "options", "output_dir"}
_PARAM_KEYS = {"beta", "alpha", "nu", "d"}
_GRID_KEYS = {"L", "n_x", "n_t", "T"}
_SIGMA_KEYS = {
    "constant": {"family", "c"},
    "affine": {"family", "a", "b"},
    "power": {"family", "c", "epsilon"},
}
_SEED_KEYS = {"master_seed", "n_replicates"}


def _num(value, name):
    """Coerce YAML scalars such as '1e-3' (a string under YAML 1.1) to float."""
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a number")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _int(value, name):
    if isinstance(value, bool) or int(_num(value, name)) != _num(value, name):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(_num(value, name))


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _coerce_option(default, value, name):
    """Coerce an option value to the type of its default.

    YAML 1.1 reads ``1e-3`` as a string, so numeric options are converted
    explicitly.  Options whose default is ``None`` accept a number, a list
    of numbers or null.
    """
    if value is None:
        return None
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{name} has an unsupported boolean value")
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if isinstance(default, int):
        return _int(value, name)
    if isinstance(default, float):
        return _num(value, name)
    if isinstance(default, list) or (default is None and isinstance(value, (list, tuple))):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list, got {value!r}")
        inner = default[0] if isinstance(default, list) and default else 0.0
        return [_coerce_option(inner, v, f"{name}[{i}]") for i, v in enumerate(value)]
    return _num(value, name)


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration (plain values; objects built on demand)."""

    experiment: str
    params: dict
    grid: Optional[dict] = None
    sigma: dict = field(default_factory=lambda: {"family": "constant", "c": 1.0})
    u0: float = 0.0
    seeds: dict = field(default_factory=lambda: {"master_seed": 0, "n_replicates": 1})
    options: dict = field(default_factory=dict)
    output_dir: str = "out"

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _check_keys(raw, _TOP_KEYS, "config")
        exp = raw.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        if "params" not in raw:
            raise ConfigError("config needs a params section")
        p = raw["params"]
        _check_keys(p, _PARAM_KEYS, "params")
        missing = {"beta", "alpha"} - set(p)
        if missing:
            raise ConfigError(f"params missing {sorted(missing)}")
        params = {
            "beta": _num(p["beta"], "params.beta"),
            "alpha": _num(p["alpha"], "params.alpha"),
            "nu": _num(p.get("nu", 1.0), "params.nu"),
            "d": _int(p.get("d", 1), "params.d"),
        }
        grid = None
        if raw.get("grid") is not None:
            g = raw["grid"]
            _check_keys(g, _GRID_KEYS, "grid")
            for key in ("n_x", "n_t", "T"):
                if key not in g:
                    raise ConfigError(f"grid missing {key}")
            grid = {
                "L": None if g.get("L") is None else _num(g["L"], "grid.L"),
                "n_x": _int(g["n_x"], "grid.n_x"),
                "n_t": _int(g["n_t"], "grid.n_t"),
                "T": _num(g["T"], "grid.T"),
            }
        s = raw.get("sigma", {"family": "constant", "c": 1.0})
        fam = s.get("family") if isinstance(s, dict) else None
        if fam not in _SIGMA_KEYS:
            raise ConfigError(f"sigma.family must be one of {sorted(_SIGMA_KEYS)}")
        _check_keys(s, _SIGMA_KEYS[fam], "sigma")
        sigma = {"family": fam}
        for key in sorted(_SIGMA_KEYS[fam] - {"family"}):
            if key not in s:
                raise ConfigError(f"sigma missing {key}")
            sigma[key] = _num(s[key], f"sigma.{key}")
        seeds_raw = raw.get("seeds", {"master_seed": 0, "n_replicates": 1})
        _check_keys(seeds_raw, _SEED_KEYS, "seeds")
        seeds = {
            "master_seed": _int(seeds_raw.get("master_seed", 0), "seeds.master_seed"),
            "n_replicates": _int(seeds_raw.get("n_replicates", 1), "seeds.n_replicates"),
        }
        if not 0 <= seeds["master_seed"] < 2**64:
            raise ConfigError("seeds.master_seed must be an unsigned 64-bit integer")
        opts_raw = raw.get("options") or {}
        defaults = OPTION_DEFAULTS[exp]
        _check_keys(opts_raw, defaults, "options")
        options = copy.deepcopy(defaults)
        for key, val in opts_raw.items():
            options[key] = _coerce_option(defaults[key], val, f"options.{key}")
        return cls(
            experiment=exp,
            params=params,
            grid=grid,
            sigma=sigma,
            u0=_num(raw.get("u0", 0.0), "u0"),
            seeds=seeds,
            options=options,
            output_dir=str(raw.get("output_dir", "out")),
        )

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": dict(self.params),
            "grid": None if self.grid is None else dict(self.grid),
            "sigma": dict(self.sigma),
            "u0": self.u0,
            "seeds": dict(self.seeds),
            "options": copy.deepcopy(self.options),
            "output_dir": self.output_dir,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    # -- identity ----------------------------------------------------------

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of everything that affects the data.

        ``output_dir`` is excluded: it does not change any result.
        """
        body = self.to_dict()
        body.pop("output_dir")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read and parse a YAML config file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return ExperimentConfig.from_dict(raw)


@dataclass(frozen=True)
class Violation:
    """A violated predicate and the condition it encodes."""

    field: str
    message: str
    condition: str

    def to_dict(self) -> dict:
        return {"field": self.field, "message": self.message, "condition": self.condition}


def validate(config: ExperimentConfig) -> list:
    """Return every violated predicate; an empty list means the config is runnable."""
    out = []
    p = config.params
    beta, alpha, nu, d = p["beta"], p["alpha"], p["nu"], p["d"]
    if not 0 < beta <= 1:
        out.append(Violation("params.beta", f"beta={beta} outside (0, 1]", "0 < beta <= 1"))
    if not 0 < alpha <= 2:
        out.append(Violation("params.alpha", f"alpha={alpha} outside (0, 2]", "0 < alpha <= 2"))
    if not nu > 0:
        out.append(Violation("params.nu", f"nu={nu} not positive", "nu > 0"))
    if d < 1:
        out.append(Violation("params.d", f"d={d} below 1", "d >= 1"))
    if out:
        return out
    bound = min(2.0, 1.0 / beta) * alpha
    if not d < bound:
        out.append(
            Violation(
                "params.d",
                f"d={d} >= min(2, 1/beta)*alpha = {bound:.6g}",
                "random-field existence: d < min(2, 1/beta) * alpha",
            )
        )
    if not d < 2 * alpha:
        out.append(Violation("params.d", f"d={d} >= 2*alpha", "finite kernel L2 norm: d < 2 alpha"))
    exp = config.experiment
    opts = config.options
    if exp == "kernel-table":
        if d > 1 and alpha != 2.0:
            out.append(Violation("params.alpha", "d > 1 kernels need alpha = 2", "subordination route"))
        if opts["method"] not in ("fourier", "subordination", "both"):
            out.append(Violation("options.method", f"unknown method {opts['method']!r}", "method choice"))
        if d > 1 and opts["method"] != "subordination":
            out.append(Violation("options.method", "d > 1 needs method subordination", "Fourier route is 1-d"))
        if opts["method"] in ("subordination", "both") and alpha not in (1.0, 2.0):
            out.append(Violation("params.alpha", "subordination needs alpha in {1, 2}", "closed-form spatial law"))
    if exp == "increments" and d not in (1, 3):
        out.append(Violation("params.d", "space increments need d in {1, 3}", "angular average available"))
    if exp == "blowup" and not alpha > beta * d:
        out.append(Violation("params", "alpha <= beta d", "blow-up threshold needs alpha > beta d"))
    if exp in SIMULATION_EXPERIMENTS:
        if config.grid is None:
            out.append(Violation("grid", "simulation experiments need a grid", "grid required"))
        else:
            g = config.grid
            if g["n_x"] < 8 or g["n_x"] & (g["n_x"] - 1):
                out.append(Violation("grid.n_x", "n_x must be a power of two >= 8", "FFT grid"))
            if g["n_t"] < 8:
                out.append(Violation("grid.n_t", "n_t must be at least 8", "time grid"))
            if not g["T"] > 0 or (g["L"] is not None and not g["L"] > 0):
                out.append(Violation("grid", "L and T must be positive", "grid extent"))
        if d != 1:
            out.append(Violation("params.d", "noise simulation is one-dimensional", "d = 1"))
        fam = config.sigma["family"]
        if exp == "picard" and fam == "power":
            out.append(Violation("sigma.family", "Picard iteration needs Lipschitz sigma", "Lipschitz sigma"))
        if exp in ("moments", "holder") and fam == "power":
            out.append(Violation("sigma.family", "power sigma is only simulated in finite-energy", "Lipschitz sigma"))
        n_rep = config.seeds["n_replicates"]
        if exp in ("moments", "holder") and n_rep < 100:
            out.append(Violation("seeds.n_replicates", "at least 100 replicates needed", "statistics"))
        if exp == "finite-energy" and config.grid is not None:
            if max(opts["horizons"]) > config.grid["T"] + 1e-12:
                out.append(Violation("options.horizons", "horizon beyond grid.T", "horizons <= T"))
        if exp == "holder" and opts["axis"] not in ("time", "space"):
            out.append(Violation("options.axis", "axis must be time or space", "axis choice"))
    if config.seeds["n_replicates"] < 1:
        out.append(Violation("seeds.n_replicates", "need at least one replicate", "n_replicates >= 1"))
    for key, val in opts.items():
        if isinstance(val, float) and not math.isfinite(val):
            out.append(Violation(f"options.{key}", "non-finite value", "finite options"))
    return out
