"""Command-line batch runner.

Usage::

    fracspde <experiment> --config PATH [--output DIR] [--workers N] [--seed-override U64]
    fracspde validate --config PATH

Exit codes: 0 success, 2 configuration error, 3 accuracy failure,
4 statistical acceptance failure.  Data artifacts embed the config digest
and are byte-identical across reruns; only ``manifest.json`` carries a
timestamp.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    blowup_params,
    blowup_threshold,
    ensemble_variance,
    estimate_moment,
    excess_kurtosis,
    finite_energy,
    graded_grid,
    holder_exponent,
    iterate_moment_inequality,
    laplace_transform,
    log_spaced_lags,
)
from .config import EXPERIMENTS, ExperimentConfig, load_config, validate
from .errors import AccuracyError, ConfigError, FracSPDEError
from .kernel import (
    FractionalParams,
    increment_l2_space,
    increment_l2_time,
    kernel_constants,
    kernel_l2_norm,
    kernel_table,
    space_increment_upper,
    time_increment_bound,
    z_integral_bounds,
)
from .noise import GridSpec, sample_noise
from .solver import (
    SigmaSpec,
    default_torus_length,
    mode_sum_variance,
    run_ensemble,
    solve_mild_direct,
    solve_picard,
)

log = logging.getLogger("fracspde")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ACCURACY = 3
EXIT_STATISTICAL = 4


class StatisticalFailure(FracSPDEError):
    """An experiment's acceptance check failed."""


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------


class ArtifactWriter:
    """Writes data files into one directory and records their checksums."""

    def __init__(self, out_dir: Path, digest: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.digest = digest
        self.files = []

    def _write(self, name, text):
        path = self.out_dir / name
        data = text.encode()
        path.write_bytes(data)
        self.files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})

    def json(self, name, payload):
        body = {"config_digest": self.digest, **payload}
        self._write(name, json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_digest={self.digest}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        self._write(name, buf.getvalue())

    def manifest(self, config, status, workers):
        body = {
            "config_digest": self.digest,
            "experiment": config.experiment,
            "status": status,
            "code_version": __version__,
            "workers": workers,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "files": self.files,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# ---------------------------------------------------------------------------
# object construction
# ---------------------------------------------------------------------------


def _params(cfg):
    return FractionalParams(**cfg.params)


def _grid(cfg, params):
    g = cfg.grid
    L = g["L"] if g["L"] is not None else default_torus_length(params, g["T"])
    return GridSpec(L=L, n_x=g["n_x"], n_t=g["n_t"], T=g["T"], d=params.d)


def _sigma(cfg):
    s = dict(cfg.sigma)
    return SigmaSpec(**s)


def _steps_for_times(grid, times):
    steps = sorted({int(round(t / grid.dt)) for t in times})
    for t in times:
        if abs(round(t / grid.dt) * grid.dt - t) > 1e-9 * max(1.0, t):
            raise ConfigError(f"time {t} is not a multiple of dt={grid.dt}")
    return steps


def _check(condition, message):
    if not condition:
        raise StatisticalFailure(message)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _exp_kernel_table(cfg, out, workers):
    params = _params(cfg)
    o = cfg.options
    methods = ["fourier", "subordination"] if o["method"] == "both" else [o["method"]]
    rows = []
    for m in methods:
        rows.extend(kernel_table(params, o["ts"], o["xs"], m))
    out.csv("kernel_table.csv", ["t", "x", "G", "method", "abs_err"], rows)
    return {"rows": len(rows)}


def _exp_l2_scaling(cfg, out, workers):
    params = _params(cfg)
    k = kernel_constants(params)
    rows = []
    for t in cfg.options["ts"]:
        n = kernel_l2_norm(params, t)
        rows.append((t, n, n * t**params.decay_exponent))
    out.csv("l2_scaling.csv", ["t", "l2_norm", "scaled"], rows)
    lo, hi = z_integral_bounds(params)
    scaled = [r[2] for r in rows]
    spread = (max(scaled) - min(scaled)) / k.c_star
    out.json(
        "constants.json",
        {
            "c_star": k.c_star,
            "c_one": k.c_one,
            "z_integral": k.z_integral,
            "z_abs_err": k.abs_err,
            "z_bounds": [lo, hi],
            "scaled_relative_spread": spread,
        },
    )
    _check(lo <= k.z_integral <= hi, "z integral outside the Beta-function sandwich")
    _check(spread <= cfg.options["rel_tol"], f"scaled L2 norm varies by {spread:.3g}")
    return {"c_star": k.c_star}


def _exp_increments(cfg, out, workers):
    params = _params(cfg)
    o = cfg.options
    t = o["t"]
    time_rows = []
    for a, b in o["time_pairs"]:
        v = increment_l2_time(params, a, b)
        time_rows.append({"t": a, "t_prime": b, "value": v, "bound": time_increment_bound(params, a, b)})
    lags = np.asarray(o["space_lags"], dtype=float)
    vals = np.array([increment_l2_space(params, t, lag) for lag in lags])
    slope = float(np.polyfit(np.log(lags), np.log(vals), 1)[0])
    c_up, expo = space_increment_upper(params, t)
    expected = min((params.alpha - params.beta * params.d) / params.beta, 2.0)
    out.json(
        "increments.json",
        {
            "time": time_rows,
            "space": {"lags": lags, "values": vals, "slope": slope, "expected_slope": expected,
                      "upper_constant": c_up, "upper_exponent": expo,
                      "lower_constant": float(np.min(vals / lags**2))},
        },
    )
    for row in time_rows:
        _check(row["value"] <= row["bound"], f"time increment above bound at {row}")
    _check(abs(slope - expected) <= o["slope_tol"], f"space slope {slope:.4f} vs {expected:.4f}")
    return {"slope": slope}


def _exp_simulate(cfg, out, workers):
    params, sigma = _params(cfg), _sigma(cfg)
    grid = _grid(cfg, params)
    o = cfg.options
    steps = None if o["output_times"] is None else _steps_for_times(grid, o["output_times"])
    noise = sample_noise(grid, cfg.seeds["master_seed"], o["replicate"])
    traj = solve_mild_direct(params, sigma, cfg.u0, grid, noise, steps, allow_blowup=not sigma.is_lipschitz)
    x = grid.x_coords()
    rows = [(t, xk, v) for t, row in zip(traj.times, traj.values) for xk, v in zip(x, row)]
    out.csv("trajectory.csv", ["t", "x", "value"], rows)
    out.json("trajectory_provenance.json", {**traj.provenance, "overflow": traj.overflow})
    return {"overflow": traj.overflow}


def _exp_moments(cfg, out, workers):
    params, sigma = _params(cfg), _sigma(cfg)
    grid = _grid(cfg, params)
    o = cfg.options
    steps = _steps_for_times(grid, [o["t"]])
    ens = run_ensemble(params, sigma, cfg.u0, grid, cfg.seeds["master_seed"], cfg.seeds["n_replicates"], steps, workers)
    moments = [dataclasses.asdict(estimate_moment(ens, o["t"], o["x"], k)) for k in o["ks"]]
    var, var_se = ensemble_variance(ens, o["t"], o["x"])
    kurt, kurt_se = excess_kurtosis(ens, o["t"], o["x"])
    payload = {"moments": moments, "variance": var, "variance_se": var_se,
               "excess_kurtosis": kurt, "excess_kurtosis_se": kurt_se, "grid_L": grid.L}
    additive = sigma.family == "constant" and cfg.u0 == 0.0
    if additive:
        oracle = sigma.c**2 * mode_sum_variance(params, grid, o["t"])
        oracle_disc = sigma.c**2 * mode_sum_variance(params, grid, o["t"], discrete=True)
        payload.update({"oracle_mode_sum": oracle, "oracle_scheme": oracle_disc})
    out.json("moments.json", payload)
    if additive:
        _check(abs(var - oracle) <= o["n_se"] * var_se,
               f"variance {var:.6g} vs oracle {oracle:.6g} (SE {var_se:.3g})")
    return {"variance": var}


def _exp_holder(cfg, out, workers):
    params, sigma = _params(cfg), _sigma(cfg)
    grid = _grid(cfg, params)
    o = cfg.options
    lo, hi = o["lag_range"]
    if o["axis"] == "time":
        base = o["base_time"] if o["base_time"] is not None else grid.T / 2
        n0 = _steps_for_times(grid, [base])[0]
        lags = log_spaced_lags(lo / grid.dt, hi / grid.dt, 8)
        steps = [n0] + [n0 + int(s) for s in lags if n0 + s <= grid.n_t]
    else:
        base = o["base_time"] if o["base_time"] is not None else grid.T
        steps = _steps_for_times(grid, [base])
    ens = run_ensemble(params, sigma, cfg.u0, grid, cfg.seeds["master_seed"], cfg.seeds["n_replicates"], steps, workers)
    fit = holder_exponent(ens, o["axis"], o["k"], (lo, hi), base_time=base)
    out.json("holder.json", {"slope": fit.slope, "std_error": fit.std_error, "ci95": [fit.ci_low, fit.ci_high],
                             "lags": fit.lags, "moments": fit.moments, "expected_slope": o["expected_slope"]})
    out.csv("holder_fit.csv", ["lag", "moment"], list(zip(fit.lags, fit.moments)))
    if o["expected_slope"] is not None:
        _check(abs(fit.slope - o["expected_slope"]) <= o["slope_tol"],
               f"slope {fit.slope:.4f} vs expected {o['expected_slope']}")
    return {"slope": fit.slope}


def _exp_picard(cfg, out, workers):
    params, sigma = _params(cfg), _sigma(cfg)
    grid = _grid(cfg, params)
    o = cfg.options
    noise = sample_noise(grid, cfg.seeds["master_seed"], o["replicate"])
    state = solve_picard(params, sigma, cfg.u0, grid, noise, o["n_iter"])
    direct = solve_mild_direct(params, sigma, cfg.u0, grid, noise)
    gap = float(np.max(np.abs(state.iterates[-1].values - direct.values)))
    ratios = [r for a, r in zip(state.diffs[:-1], state.ratios) if a > o["floor"]]
    out.json("picard.json", {"diffs": state.diffs, "ratios": state.ratios, "max_gap_to_direct": gap})
    _check(all(r <= o["max_ratio"] for r in ratios[1:]), f"contraction ratios {ratios}")
    _check(gap <= 1e-8, f"converged Picard iterate differs from direct scheme by {gap:.3g}")
    return {"gap": gap}


def _exp_blowup(cfg, out, workers):
    params = _params(cfg)
    o = cfg.options
    bp = blowup_params(params, o["c"], o["l"], o["epsilon"], o["rho"])
    theta0 = blowup_threshold(params, bp)
    tg = graded_grid(o["T"], o["n_grid"])
    res = iterate_moment_inequality(params, bp, tg, o["n_iter"])
    theta = o["theta_factor"] * theta0
    transforms = [laplace_transform(tg, it, theta) for it in res.iterates]
    first = next((n for n, v in enumerate(transforms) if v > o["bound"]), None)
    out.json("blowup.json", {"theta0": theta0, "theta": theta, "c_one": bp.c_one, "diverged": res.diverged,
                             "laplace_transforms": transforms, "first_iteration_above_bound": first})
    out.csv("volterra_last.csv", ["t", "I"], list(zip(tg, res.iterates[-1])))
    return {"theta0": theta0}


def _exp_finite_energy(cfg, out, workers):
    params, sigma = _params(cfg), _sigma(cfg)
    grid = _grid(cfg, params)
    o = cfg.options
    ens = run_ensemble(params, sigma, cfg.u0, grid, cfg.seeds["master_seed"], cfg.seeds["n_replicates"],
                       None, workers, allow_blowup=not sigma.is_lipschitz)
    ests = [finite_energy(ens, o["rho"], h) for h in o["horizons"]]
    vals = [e.value for e in ests]
    overflow = any(e.overflow for e in ests)
    stable = (not overflow) and abs(vals[-1] - vals[-2]) <= o["stable_tol"] * abs(vals[-2]) if len(vals) > 1 else not overflow
    out.json("finite_energy.json", {"estimates": [dataclasses.asdict(e) for e in ests],
                                    "overflowed_replicates": int(np.sum(ens.overflow)),
                                    "stabilized": bool(stable)})
    return {"stabilized": bool(stable)}


_RUNNERS = {
    "kernel-table": _exp_kernel_table,
    "l2-scaling": _exp_l2_scaling,
    "increments": _exp_increments,
    "simulate": _exp_simulate,
    "moments": _exp_moments,
    "holder": _exp_holder,
    "picard": _exp_picard,
    "blowup": _exp_blowup,
    "finite-energy": _exp_finite_energy,
}


def run(config: ExperimentConfig, workers: int = 1, output_dir=None) -> int:
    """Run one experiment and write its artifacts; return the exit status."""
    out_dir = Path(output_dir if output_dir is not None else config.output_dir)
    violations = validate(config)
    if violations:
        _write_error(out_dir, "config", [v.to_dict() for v in violations])
        return EXIT_CONFIG
    writer = ArtifactWriter(out_dir, config.digest())
    status, code = "ok", EXIT_OK
    try:
        summary = _RUNNERS[config.experiment](config, writer, workers)
        log.info("%s finished: %s", config.experiment, summary)
    except StatisticalFailure as exc:
        status, code = f"statistical failure: {exc}", EXIT_STATISTICAL
    except AccuracyError as exc:
        status, code = f"accuracy failure: {exc}", EXIT_ACCURACY
    except ConfigError as exc:
        _write_error(out_dir, "config", [{"message": str(exc)}])
        return EXIT_CONFIG
    writer.manifest(config, status, workers)
    if code:
        log.error(status)
    return code


def _write_error(out_dir, kind, details):
    payload = json.dumps({"error": kind, "details": details}, indent=2, sort_keys=True)
    print(payload, file=sys.stderr)
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "error.json").write_text(payload + "\n")
    except OSError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracspde", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML experiment config")
        if name != "validate":
            sp.add_argument("--output", help="output directory (overrides output_dir)")
            sp.add_argument("--workers", type=int, default=1, help="worker processes")
            sp.add_argument("--seed-override", type=int, help="replace seeds.master_seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "details": [{"message": str(exc)}]}), file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        violations = [v.to_dict() for v in validate(cfg)]
        print(json.dumps({"violations": violations}, indent=2))
        return EXIT_CONFIG if violations else EXIT_OK
    if cfg.experiment != args.command:
        print(json.dumps({"error": "config", "details": [
            {"message": f"config experiment {cfg.experiment!r} does not match command {args.command!r}"}]}),
            file=sys.stderr)
        return EXIT_CONFIG
    if args.seed_override is not None:
        if not 0 <= args.seed_override < 2**64:
            print(json.dumps({"error": "config", "details": [{"message": "seed override out of range"}]}),
                  file=sys.stderr)
            return EXIT_CONFIG
        cfg.seeds["master_seed"] = args.seed_override
    if args.workers < 1:
        print(json.dumps({"error": "config", "details": [{"message": "--workers must be >= 1"}]}), file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, workers=args.workers, output_dir=args.output)


if __name__ == "__main__":
    sys.exit(main())
