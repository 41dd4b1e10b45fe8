"""Command-line experiment runner with provenance manifests.

Every subcommand is a pure function of its resolved config.  Outputs are
built in a private temporary directory and renamed into place only after
the run succeeds; ``manifest.json`` then records the config hash, the
package version, the tolerances used and a SHA-256 digest per file.

Exit status: 0 success, 2 invalid config, 3 numerical failure (a
``diagnostic.json`` and a ``FAILED`` marker are written).
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import hashlib
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, config as cfgmod
from ._backend import BACKEND
from .config import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"
FAILED_MARKER = "FAILED"
INCOMPLETE_MARKER = "INCOMPLETE"
REL_TOL = 1e-12

HELP = {
    "kernel": (
        "Tabulate the bi-harmonic self-similar profile "
        "F(y) = (1/pi) int_0^inf exp(-xi^4) cos(xi y) dxi, so that "
        "b(x,t) = t^(-1/4) F(x t^(-1/4)) solves u_t = -u_xxxx.  The sidecar "
        "records int F = 1, F(0) = Gamma(5/4)/pi and the envelope "
        "|F| ~ exp(-a |y|^(4/3)); F solves F''' = y F / 4."),
    "simulate": (
        "Integrate u_t = -(phi(u) u_xxx)_x with phi(u) = (eps^2 + u^2)^(n/2) "
        "(or |u|^n, eps^n + (1-eps)(eps^2+u^2)^(n/2), 1) by the conservative "
        "theta-scheme.  Also writes the energy ledger for "
        "E(t) + int_0^t int phi(u) u_xxx^2 = E(0), E = 1/2 int u_x^2."),
    "homotopy": (
        "Measure err0(n) = sup|u_{eps(n),n}(T) - u~(T)| where u~ solves "
        "u~_t = -u~_xxxx and eps(n) obeys n |ln eps(n)| -> 0, for example "
        "eps(n) = exp(-1/sqrt(n))."),
    "branching": (
        "Check the first-order expansion u_{eps(n),n} = u~ + n phi1 + o(n), "
        "where phi1_t = -phi1_xxxx - (ln|u~| u~_xxx)_x with phi1(0) = 0; "
        "reports err1 = sup|u - u~ - n phi1| and err1/n."),
    "orbit": (
        "Compute the periodic solution phi* of the interface equation "
        "phi''' + 3(mu-1) phi'' + (3mu^2 - 6mu + 2) phi' + mu(mu-1)(mu-2) phi "
        "+ |phi|^(-n) phi = 0 with mu = 3/n, so that u ~ x^mu phi*(ln x)."),
    "scan": (
        "Track the period of phi* (same interface equation as `orbit`) as n "
        "grows and estimate the heteroclinic value n_h ~ 1.7587 from "
        "T(n) = A - B ln(n_h - n).  Roots of 3mu^2 - 6mu + 2 = 0 give "
        "n_+ = 9/(3 + sqrt 3)."),
    "riemann": (
        "Rescaled flow v_t = -((1 + v^2)^(n/2) v_yyy)_y.  mode=blowup starts "
        "from v0 = chi_(+/-) |y|^(4/n) and looks for sup|v| ~ (T - t)^(-1/n); "
        "mode=interface starts from v0 = y^(3/n) phi*((n/3) ln eps + ln y)."),
    "sweep": (
        "Run another subcommand once per value of one config key "
        "(sweep.subcommand, sweep.key, sweep.values, base.<key> overrides) "
        "and write a single manifest for all runs."),
}


class NumericalFailure(RuntimeError):
    """A run that validated but could not be completed numerically."""


# ----------------------------------------------------------------- helpers

def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats -> None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _atomic_write_json(path: Path, obj: Any) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    os.close(fd)
    write_json(Path(tmp), obj)
    os.replace(tmp, path)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def default_out_dir() -> Path:
    return Path(os.environ.get("TFELAB_OUT", "tfelab_out"))


# --------------------------------------------------------------- builders
# Each subcommand is split into a cheap ``build`` (every constructor that can
# reject the config runs here, so bad values exit with status 2) and an
# ``execute`` that does the numerical work inside the temporary directory.

def _grid(cfg):
    from .core import make_grid
    return make_grid(cfg["grid.x_min"], cfg["grid.x_max"], cfg["grid.n_cells"])


def _bump(cfg, grid):
    from .core import SmoothBump, sample_initial_data
    return sample_initial_data(SmoothBump(cfg["data.center"], cfg["data.width"],
                                          cfg["data.height"]), grid)


def _solver_config(cfg, **over):
    from .solver import SolverConfig
    keys = ("dt_initial", "dt_min", "dt_max", "newton_tol", "newton_max_iter",
            "face_average", "boundary", "theta", "blowup_factor")
    kw = {k: cfg[f"solver.{k}"] for k in keys if f"solver.{k}" in cfg}
    kw.update(over)
    return SolverConfig(**kw)


def _build_kernel(cfg):
    from .core import make_grid
    window = cfg["envelope.window"]
    if len(window) != 2 or not all(isinstance(v, float) for v in window) or not window[0] < window[1]:
        raise ConfigError("envelope.window must be [lo, hi] with lo < hi")
    if not cfg["quadrature_tol"] > 0:
        raise ConfigError("quadrature_tol must be positive")
    if cfg["dimension"] == 1:
        grid = make_grid(-cfg["grid.y_max"], cfg["grid.y_max"], cfg["grid.n_cells"])
    else:
        grid = make_grid(0.0, cfg["grid.y_max"], cfg["grid.n_cells"])
    return {"grid": grid, "window": tuple(window)}


def _exec_kernel(cfg, ctx, out: Path, workers: int) -> dict:
    from .biharmonic import (fit_envelope, fit_envelope_exponent, kernel_1d, kernel_radial,
                             kernel_residual)
    if cfg["dimension"] == 1:
        table = kernel_1d(ctx["grid"], cfg["quadrature_tol"], ctx["window"])
    else:
        table = kernel_radial(cfg["dimension"], ctx["grid"], cfg["quadrature_tol"], ctx["window"])
    side = table.sidecar()
    narrow = fit_envelope(table.y_nodes, table.F_values, (2.0, 8.0), floor=100 * table.quadrature_tol)
    side["envelope_2_8"] = None if narrow is None else narrow.to_dict()
    side["envelope_exponent"] = None
    if cfg["dimension"] == 1:
        free = fit_envelope_exponent(table.y_nodes, table.F_values, ctx["window"],
                                     floor=100 * table.quadrature_tol)
        side["envelope_exponent"] = None if free is None else free.to_dict()
    side["sign_changes_abs_y_le_10"] = table.sign_changes(10.0)
    side["F0"] = float(table.F_values[np.argmin(np.abs(table.y_nodes))])
    if cfg["dimension"] == 1:
        side["residual_third_derivative"] = kernel_residual(table)
    table.to_csv(out / "kernel.csv")
    write_json(out / "kernel.json", side)
    return {k: side[k] for k in ("normalization", "F0", "sign_changes_abs_y_le_10")}


def _model_params(cfg):
    from .core import Mobility, ModelParams
    mob = Mobility(cfg["model.mobility"])
    eps = cfg["model.epsilon"]
    if mob in (Mobility.DEGENERATE, Mobility.UNIT):
        eps = 0.0 if mob is Mobility.DEGENERATE else eps
    return ModelParams(cfg["model.n"], eps, mob)


def _build_simulate(cfg):
    from .core import RiemannData, sample_initial_data
    grid = _grid(cfg)
    params = _model_params(cfg)
    if cfg["data.kind"] == "bump":
        u0 = _bump(cfg, grid)
    else:
        u0 = sample_initial_data(RiemannData(cfg["data.chi_plus"], cfg["data.chi_minus"]),
                                 grid, params)
    if not cfg["t_final"] > 0:
        raise ConfigError("t_final must be positive")
    snaps = cfg["snap_times"]
    if not all(isinstance(v, float) and 0 < v <= cfg["t_final"] for v in snaps):
        raise ConfigError("snap_times must be numbers in (0, t_final]")
    return {"u0": u0, "params": params, "solver": _solver_config(cfg)}


def _exec_simulate(cfg, ctx, out: Path, workers: int) -> dict:
    from .diagnostics import energy_history, write_energy_ledger
    from .solver import simulate
    traj = simulate(ctx["u0"], ctx["params"], cfg["t_final"], ctx["solver"],
                    snap_times=cfg["snap_times"], store_every_step=cfg["store_every_step"])
    traj.to_csv(out / "trajectory.csv")
    reports = energy_history(traj, ctx["params"], ctx["solver"])
    write_energy_ledger(reports, out / "energy.csv")
    write_json(out / "steps.json", {"steps": traj.step_log_dicts(),
                                    "metadata": traj.metadata})
    masses = [s.mass() for s in traj.snapshots]
    return {"n_steps": len(traj.step_log), "final_time": traj.final.time,
            "max_sup": traj.metadata["max_sup"], "blew_up": traj.metadata["blew_up"],
            "mass_drift": max(abs(m - masses[0]) for m in masses)}


def _build_ladder(cfg):
    from .homotopy import FixedEpsilon, HomotopySetup, _check_ladder
    from .regularization import Schedule
    grid = _grid(cfg)
    u0 = _bump(cfg, grid)
    if cfg["fixed_epsilon"] > 0:
        if not cfg["fixed_epsilon"] < 1:
            raise ConfigError("fixed_epsilon must lie in (0, 1)")
        schedule = FixedEpsilon(cfg["fixed_epsilon"])
    else:
        schedule = Schedule.from_key(cfg["schedule"])
    _check_ladder(cfg["n_ladder"], schedule)
    if not cfg["t_final"] > 0 or cfg["n_steps"] < 1:
        raise ConfigError("need t_final > 0 and n_steps >= 1")
    from .solver import SolverConfig
    setup = HomotopySetup(cfg["n_steps"], SolverConfig(theta=cfg["solver.theta"]), cfg["reference"])
    ctx = {"u0": u0, "schedule": schedule, "setup": setup}
    if "clamp_eta" in cfg:
        if cfg["clamp_eta"] < 0 or cfg["n_panels"] < 1:
            raise ConfigError("clamp_eta must be >= 0 and n_panels >= 1")
    return ctx


def _exec_homotopy(cfg, ctx, out: Path, workers: int) -> dict:
    from .homotopy import homotopy_error_sweep, strictly_decreasing, write_sweep_csv
    entries = homotopy_error_sweep(ctx["u0"], cfg["n_ladder"], ctx["schedule"], cfg["t_final"],
                                   ctx["setup"], workers=workers)
    if not all(e.ok for e in entries):
        raise NumericalFailure("; ".join(f"n={e.n}: {e.message}" for e in entries if not e.ok))
    write_sweep_csv(entries, out / "sweep.csv")
    err0 = [e.err0 for e in entries]
    summary = {"err0": err0, "epsilon": [e.epsilon for e in entries],
               "max_sup": [e.max_sup for e in entries],
               "err0_strictly_decreasing": strictly_decreasing(err0),
               "final_over_first": err0[-1] / err0[0]}
    write_json(out / "summary.json", summary)
    return summary


def _exec_branching(cfg, ctx, out: Path, workers: int) -> dict:
    from .core import write_columns_csv
    from .homotopy import (branching_correction_phi1, branching_order_check,
                           reference_solution, strictly_decreasing, write_branching_csv)
    u0, setup = ctx["u0"], ctx["setup"]
    eta = cfg["clamp_eta"] if cfg["clamp_eta"] > 0 else None
    phi1, meta = branching_correction_phi1(u0, [cfg["t_final"]], clamp_eta=eta,
                                           n_panels=cfg["n_panels"], return_meta=True)
    phi1 = phi1[-1]
    reports, finals = branching_order_check(u0, cfg["n_ladder"], ctx["schedule"], cfg["t_final"],
                                            setup=setup, phi1=phi1, workers=workers,
                                            return_fields=True)
    if not all(r.ok for r in reports):
        raise NumericalFailure("; ".join(f"n={r.n}: {r.message}" for r in reports if not r.ok))
    write_branching_csv(reports, out / "branching.csv")
    x = u0.grid.nodes
    write_columns_csv(out / "phi1.csv", ["x", "u"], [x, phi1.values])
    ref = reference_solution(u0, cfg["t_final"], setup)
    write_columns_csv(out / "reference.csv", ["x", "u"], [x, ref.values])
    for i, (n, fin) in enumerate(sorted(finals.items(), reverse=True)):
        write_columns_csv(out / f"field_{i:02d}_n{n:.6g}.csv", ["x", "u"], [x, fin.values])
    ratios = [r.ratio for r in reports]
    summary = {"ratio": ratios, "err0": [r.err0 for r in reports],
               "err1": [r.err1 for r in reports], "phi1_norm": reports[0].phi1_norm,
               "ratio_strictly_decreasing": strictly_decreasing(ratios),
               "clamped_fraction": list(meta["clamped_fraction"].values())}
    write_json(out / "summary.json", summary)
    return summary


def _build_orbit(cfg):
    from .interface_ode import _check_n
    _check_n(cfg["n"], 2.2)
    if cfg["samples_per_period"] < 8 or not cfg["tol"] > 0 or not cfg["s_budget"] > 0:
        raise ConfigError("need samples_per_period >= 8, tol > 0, s_budget > 0")
    return {}


def _exec_orbit(cfg, ctx, out: Path, workers: int) -> dict:
    from .interface_ode import find_periodic_orbit
    orb = find_periodic_orbit(cfg["n"], cfg["method"], tol=cfg["tol"], s_budget=cfg["s_budget"],
                              samples_per_period=cfg["samples_per_period"],
                              zero_reg_rel=cfg["zero_reg_rel"])
    summary = orb.summary()
    if not orb.converged:
        raise NumericalFailure(f"no periodic orbit at n={cfg['n']}: "
                               f"status {orb.method_meta.get('status')}", summary)
    orb.to_csv(out / "orbit.csv")
    write_json(out / "orbit.json", summary)
    return {k: summary[k] for k in ("n", "period", "amplitude", "closure_error")}


def _build_scan(cfg):
    if not (1.5 < cfg["n_min"] < cfg["n_max"] < 2.0):
        raise ConfigError("scan range must satisfy 1.5 < n_min < n_max < 2.0")
    if cfg["steps"] < 8 or cfg["refine"] < 0:
        raise ConfigError("need steps >= 8 and refine >= 0")
    return {}


def _exec_scan(cfg, ctx, out: Path, workers: int) -> dict:
    from .interface_ode import heteroclinic_scan
    res = heteroclinic_scan((cfg["n_min"], cfg["n_max"]), cfg["steps"], cfg["method"],
                            workers=workers, refine=cfg["refine"])
    d = res.to_dict()
    write_json(out / "scan.json", d)
    if not math.isfinite(res.n_h_estimate):
        raise NumericalFailure("scan did not bracket the loss of the periodic orbit", d)
    return {"n_h_estimate": res.n_h_estimate, "bracket": list(res.bracket)}


def _build_riemann(cfg):
    from .core import Mobility
    from .interface_ode import _check_n
    grid = _grid(cfg)
    if cfg["mode"] == "interface":
        _check_n(cfg["n"], 2.2)
        eps = cfg["eps_ladder"]
        if not eps or any(not (isinstance(e, float) and 0 < e < 1) for e in eps) \
                or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_ladder must be strictly decreasing values in (0, 1)")
        if not cfg["t_final"] > 0:
            raise ConfigError("t_final must be positive")
    else:
        if not cfg["n"] > 0 or not cfg["t_max"] > 0 or not cfg["ceiling_factor"] > 1:
            raise ConfigError("need n > 0, t_max > 0 and ceiling_factor > 1")
    return {"grid": grid, "mobility": Mobility(cfg["mobility"])}


def _exec_riemann(cfg, ctx, out: Path, workers: int) -> dict:
    from .interface_ode import find_periodic_orbit
    from .riemann import (blowup_experiment, riemann_initial_data, stable_interface_experiment,
                          write_interface_csv)
    grid = ctx["grid"]
    if cfg["mode"] == "blowup":
        sup0 = riemann_initial_data(grid, cfg["n"], (cfg["chi_plus"], cfg["chi_minus"])).sup()
        rep = blowup_experiment(cfg["n"], (cfg["chi_plus"], cfg["chi_minus"]), grid,
                                ceiling=cfg["ceiling_factor"] * sup0, t_max=cfg["t_max"],
                                mobility=ctx["mobility"])
        d = rep.to_dict()
        write_json(out / "blowup.json", d)
        return {k: d[k] for k in ("blew_up", "T_estimate", "exponent_fit", "unreliable")}
    orbit = find_periodic_orbit(cfg["n"])
    if not orbit.converged:
        raise NumericalFailure(f"no periodic orbit at n={cfg['n']}", orbit.summary())
    entries = stable_interface_experiment(cfg["n"], orbit, cfg["eps_ladder"], grid, cfg["t_final"])
    write_interface_csv(entries, out / "interface.csv")
    sups = [e.window_sup for e in entries]
    finite = [s for s in sups if math.isfinite(s)]
    summary = {"window_sup": sups, "blow_up_flags": sum(e.blew_up for e in entries),
               "sup_ratio": (max(finite) / min(finite)) if finite and min(finite) > 0 else None,
               "data_bound_ratio": [e.data_bound_ratio for e in entries],
               "orbit_period": orbit.period, "o1_correction": 0.0}
    write_json(out / "summary.json", summary)
    return summary


def _build_sweep(cfg):
    inner, runs = cfgmod.sweep_configs(cfg)
    return {"inner": inner, "runs": runs, "ctxs": [COMMANDS[inner][0](c) for c in runs]}


def _sweep_one(inner: str, cfg: dict, out: str) -> dict:
    """Worker entry point: run one inner config into ``out``."""
    ctx = COMMANDS[inner][0](cfg)
    try:
        return {"ok": True, "result": COMMANDS[inner][1](cfg, ctx, Path(out), 1)}
    except Exception as exc:  # noqa: BLE001 - reported by the coordinator
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _exec_sweep(cfg, ctx, out: Path, workers: int) -> dict:
    inner, runs = ctx["inner"], ctx["runs"]
    dirs = []
    for i in range(len(runs)):
        d = out / f"run_{i:03d}"
        d.mkdir()
        dirs.append(str(d))
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, [inner] * len(runs), runs, dirs))
    else:
        results = [_sweep_one(inner, c, d) for c, d in zip(runs, dirs)]
    rows = [{"run": f"run_{i:03d}", "value": v, "config_hash": cfgmod.config_hash(c), **r}
            for i, (v, c, r) in enumerate(zip(cfg["sweep.values"], runs, results))]
    summary = {"subcommand": inner, "key": cfg["sweep.key"], "runs": rows}
    write_json(out / "sweep.json", summary)
    failed = [r for r in rows if not r["ok"]]
    if failed:
        raise NumericalFailure(f"{len(failed)} of {len(rows)} sweep runs failed", summary)
    return {"runs": len(rows)}


COMMANDS: dict[str, tuple[Callable, Callable]] = {
    "kernel": (_build_kernel, _exec_kernel),
    "simulate": (_build_simulate, _exec_simulate),
    "homotopy": (_build_ladder, _exec_homotopy),
    "branching": (_build_ladder, _exec_branching),
    "orbit": (_build_orbit, _exec_orbit),
    "scan": (_build_scan, _exec_scan),
    "riemann": (_build_riemann, _exec_riemann),
    "sweep": (_build_sweep, _exec_sweep),
}


# ------------------------------------------------------------------ running

@dataclass
class RunManifest:
    subcommand: str
    config: dict
    config_hash: str
    version: str
    wall_time: float
    tolerances: dict
    files: list = field(default_factory=list)  # [{"path", "sha256", "bytes"}]
    results: dict = field(default_factory=dict)
    status: str = "ok"
    backend: str = BACKEND
    platform: str = field(default_factory=platform.platform)

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, "config": self.config,
                "config_hash": self.config_hash, "version": self.version,
                "wall_time": self.wall_time, "tolerances": self.tolerances,
                "files": self.files, "results": self.results, "status": self.status,
                "backend": self.backend, "platform": self.platform}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        keys = ("subcommand", "config", "config_hash", "version", "wall_time", "tolerances",
                "files", "results", "status", "backend", "platform")
        missing = [k for k in keys[:5] if k not in d]
        if missing:
            raise ConfigError(f"manifest lacks {', '.join(missing)}")
        return cls(**{k: d[k] for k in keys if k in d})

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


@dataclass
class RunOutcome:
    exit_code: int
    manifest: RunManifest | None = None
    message: str = ""


def _tolerances(subcommand: str, cfg: dict) -> dict:
    tol = {}
    for key in cfgmod.TOLERANCE_KEYS:
        for prefix in ("", "base."):
            if prefix + key in cfg:
                tol[prefix + key] = cfg[prefix + key]
    if subcommand in ("homotopy", "branching"):
        tol["edge_fraction"] = 0.05
    return tol


def _list_files(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file())


def _fail(out: Path, info: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_json(out / "diagnostic.json", info)
    (out / FAILED_MARKER).write_text(info.get("error", "failed") + "\n")


def execute(subcommand: str, cfg: dict, out: Path, workers: int = 1) -> RunOutcome:
    """Run a resolved config into ``out``.  ``cfg`` must come from ``resolve``."""
    t0 = time.perf_counter()
    try:
        ctx = COMMANDS[subcommand][0](cfg)
    except (ValueError, TypeError, OSError) as exc:
        return RunOutcome(EXIT_CONFIG, None, f"invalid config: {exc}")
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=".tmp-run-"))
    chash = cfgmod.config_hash(cfg)
    try:
        with np.errstate(over="ignore", under="ignore"):
            results = COMMANDS[subcommand][1](cfg, ctx, tmp, max(1, int(workers)))
        status = "ok"
    except Exception as exc:  # noqa: BLE001 - every escape is a numerical failure here
        details = exc.args[1] if isinstance(exc, NumericalFailure) and len(exc.args) > 1 else None
        shutil.rmtree(tmp, ignore_errors=True)
        _fail(out, {"subcommand": subcommand, "config_hash": chash,
                    "error": f"{type(exc).__name__}: {exc.args[0] if exc.args else exc}",
                    "details": details,
                    "traceback": traceback.format_exc().splitlines()[-6:]})
        msg = exc.args[0] if exc.args else exc
        return RunOutcome(EXIT_NUMERIC, None, f"numerical failure: {msg}")
    (out / INCOMPLETE_MARKER).write_text("outputs are being moved into place\n")
    files = []
    for p in _list_files(tmp):
        rel = p.relative_to(tmp)
        dest = out / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        os.replace(p, dest)
        files.append({"path": rel.as_posix(), "sha256": sha256_file(dest),
                      "bytes": dest.stat().st_size})
    shutil.rmtree(tmp, ignore_errors=True)
    manifest = RunManifest(subcommand, cfg, chash, __version__, time.perf_counter() - t0,
                           _tolerances(subcommand, cfg), files, _clean(results), status)
    _atomic_write_json(out / MANIFEST, manifest.to_dict())
    for marker in (FAILED_MARKER, "diagnostic.json", INCOMPLETE_MARKER):
        (out / marker).unlink(missing_ok=True)
    return RunOutcome(EXIT_OK, manifest)


def run(subcommand: str, raw_config: dict | None = None, out: str | Path | None = None,
        workers: int = 1) -> RunOutcome:
    """Validate ``raw_config`` (flat dotted keys) and execute it."""
    try:
        cfg = cfgmod.resolve(subcommand, raw_config)
    except ConfigError as exc:
        return RunOutcome(EXIT_CONFIG, None, f"invalid config: {exc}")
    return execute(subcommand, cfg, Path(out) if out is not None else default_out_dir(), workers)


# -------------------------------------------------------------- reproduce

def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, -1)


def _numbers_close(a, b, rtol: float) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_numbers_close(a[k], b[k], rtol) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_numbers_close(x, y, rtol) for x, y in zip(a, b))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)) \
            and not isinstance(a, bool) and not isinstance(b, bool):
        return math.isclose(a, b, rel_tol=rtol, abs_tol=0.0) or a == b
    return a == b


def compare_files(old: Path, new: Path, rtol: float = REL_TOL) -> tuple[bool, bool]:
    """(byte_identical, numerically_equal) for two output files."""
    if sha256_file(old) == sha256_file(new):
        return True, True
    if old.suffix == ".csv":
        try:
            h1, a = _read_csv(old)
            h2, b = _read_csv(new)
        except ValueError:
            return False, False
        ok = h1 == h2 and a.shape == b.shape and bool(
            np.all((a == b) | (np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)))))
        return False, ok
    if old.suffix == ".json":
        return False, _numbers_close(json.loads(old.read_text()), json.loads(new.read_text()), rtol)
    return False, False


def reproduce(manifest_path: str | Path, workers: int = 1) -> dict:
    """Re-run a manifest and compare every listed output.

    ``status`` is one of ``all_match``, ``hash_mismatch`` (the stored config
    no longer hashes to the recorded value), ``missing_files`` (listed
    outputs are gone) or ``mismatch`` (``first_diverging`` names the first
    file that differs beyond 1e-12 relative).
    """
    manifest_path = Path(manifest_path)
    m = RunManifest.load(manifest_path)
    report: dict = {"manifest": str(manifest_path), "config_hash": m.config_hash}
    actual = cfgmod.config_hash(m.config)
    if actual != m.config_hash:
        return dict(report, status="hash_mismatch", recomputed_hash=actual)
    try:
        cfg = cfgmod.resolve(m.subcommand, m.config)
    except ConfigError as exc:
        return dict(report, status="hash_mismatch", error=str(exc))
    if cfgmod.config_hash(cfg) != m.config_hash:
        return dict(report, status="hash_mismatch", recomputed_hash=cfgmod.config_hash(cfg))
    root = manifest_path.parent
    missing = [f["path"] for f in m.files if not (root / f["path"]).is_file()]
    if missing:
        return dict(report, status="missing_files", missing=missing)
    corrupted = [f["path"] for f in m.files if sha256_file(root / f["path"]) != f["sha256"]]
    with tempfile.TemporaryDirectory(prefix="tfelab-reproduce-") as td:
        outcome = execute(m.subcommand, cfg, Path(td), workers)
        if outcome.exit_code != EXIT_OK:
            return dict(report, status="rerun_failed", exit_code=outcome.exit_code,
                        message=outcome.message)
        new_paths = {f["path"] for f in outcome.manifest.files}
        rows = []
        first = None
        for f in m.files:
            p = f["path"]
            if p not in new_paths:
                rows.append({"path": p, "byte_identical": False, "match": False})
                first = first or p
                continue
            byte, ok = compare_files(root / p, Path(td) / p)
            rows.append({"path": p, "byte_identical": byte, "match": ok})
            if not ok and first is None:
                first = p
        extra = sorted(new_paths - {f["path"] for f in m.files})
    status = "all_match" if first is None and not extra else "mismatch"
    return dict(report, status=status, first_diverging=first, files=rows,
                unlisted_new_files=extra, stored_digest_mismatch=corrupted,
                csv_byte_identical=all(r["byte_identical"] for r in rows
                                       if r["path"].endswith(".csv")))


# --------------------------------------------------------------------- argv

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfelab",
        description="Experiments for the regularized thin-film equation "
                    "u_t = -(phi(u) u_xxx)_x and its bi-harmonic limit u_t = -u_xxxx.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in cfgmod.SUBCOMMANDS:
        schema = cfgmod.SCHEMAS[name]
        keys = "\n".join(f"  {k} ({s.kind}, default {s.default!r})"
                         + (f": {s.help}" if s.help else "") for k, s in schema.items())
        p = sub.add_parser(name, help=HELP[name].split(".")[0],
                           description=HELP[name],
                           epilog="config keys:\n" + keys,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON file of flat dotted keys")
        p.add_argument("--out", help="output directory (default: $TFELAB_OUT or ./tfelab_out)")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
    p = sub.add_parser("reproduce", help="re-run a manifest and compare outputs",
                       description="Re-run the config stored in a manifest.json and compare "
                                   "every listed output (bytes, then 1e-12 relative).")
    p.add_argument("manifest")
    p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reproduce":
        try:
            rep = reproduce(args.manifest, args.workers)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(_clean(rep), indent=2, sort_keys=True))
        if rep["status"] == "all_match":
            return EXIT_OK
        return EXIT_CONFIG if rep["status"] == "hash_mismatch" else EXIT_NUMERIC
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw = cfgmod.load(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else default_out_dir()
    outcome = run(args.command, raw, out, args.workers)
    if outcome.exit_code == EXIT_OK:
        print(json.dumps({"manifest": str(out / MANIFEST),
                          "results": outcome.manifest.results}, indent=2, sort_keys=True))
    else:
        print(f"error: {outcome.message}", file=sys.stderr)
    return outcome.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
