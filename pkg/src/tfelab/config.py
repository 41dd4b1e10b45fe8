"""Strict flat-key experiment configs with a content hash.

A config file is a JSON object whose keys are dotted paths
(``"grid.n_cells": 400``).  Every subcommand has a schema; unknown keys,
wrong types and bad choices raise :class:`ConfigError`.  The hash is the
SHA-256 of the canonical JSON of the fully resolved config.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

SUBCOMMANDS = ("kernel", "simulate", "homotopy", "branching", "orbit", "scan", "riemann", "sweep")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    kind: str  # "float", "int", "str", "bool", "list"
    default: Any
    choices: tuple | None = None
    help: str = ""


_GRID = {
    "grid.x_min": Key("float", -20.0),
    "grid.x_max": Key("float", 20.0),
    "grid.n_cells": Key("int", 400),
}
_BUMP = {
    "data.center": Key("float", 0.0),
    "data.width": Key("float", 2.0),
    "data.height": Key("float", 1.0),
}
_SOLVER = {
    "solver.dt_initial": Key("float", 1e-4),
    "solver.dt_min": Key("float", 1e-12),
    "solver.dt_max": Key("float", 1e-2),
    "solver.newton_tol": Key("float", 1e-10),
    "solver.newton_max_iter": Key("int", 12),
    "solver.face_average": Key("str", "arithmetic", ("arithmetic", "geometric")),
    "solver.boundary": Key("str", "decay_clamped", ("decay_clamped", "periodic")),
    "solver.theta": Key("float", 1.0),
    "solver.blowup_factor": Key("float", 1e6),
}
_LADDER = {
    **_GRID,
    "grid.n_cells": Key("int", 800),
    **_BUMP,
    "n_ladder": Key("list", [0.2, 0.1, 0.05, 0.025]),
    "schedule": Key("str", "exp_inv_sqrt", help="exp_inv_sqrt, power:<p> or table:<csv>"),
    "fixed_epsilon": Key("float", 0.0, help="> 0 replaces the schedule (control run)"),
    "t_final": Key("float", 0.5),
    "n_steps": Key("int", 500),
    "solver.theta": Key("float", 0.5),
    "reference": Key("str", "convolution", ("convolution", "solver")),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "kernel": {
        "dimension": Key("int", 1, (1, 2, 3)),
        "grid.y_max": Key("float", 40.0),
        "grid.n_cells": Key("int", 8000),
        "quadrature_tol": Key("float", 1e-12),
        "envelope.window": Key("list", [2.0, 20.0]),
    },
    "simulate": {
        **_GRID, **_BUMP, **_SOLVER,
        "model.n": Key("float", 1.0),
        "model.epsilon": Key("float", 0.1),
        "model.mobility": Key("str", "simple", ("degenerate", "simple", "homotopy", "unit")),
        "data.kind": Key("str", "bump", ("bump", "riemann")),
        "data.chi_plus": Key("float", 1.0),
        "data.chi_minus": Key("float", 1.0),
        "t_final": Key("float", 0.1),
        "snap_times": Key("list", []),
        "store_every_step": Key("bool", False),
    },
    "homotopy": dict(_LADDER),
    "branching": {
        **_LADDER,
        "clamp_eta": Key("float", 0.0, help="absolute ln-clamp level; 0 means 1e-8 sup|u~|"),
        "n_panels": Key("int", 200),
    },
    "orbit": {
        "n": Key("float", 1.0),
        "method": Key("str", "forward_attractor", ("forward_attractor", "shooting")),
        "samples_per_period": Key("int", 512),
        "tol": Key("float", 1e-6),
        "zero_reg_rel": Key("float", 1e-8),
        "s_budget": Key("float", 2e4),
    },
    "scan": {
        "n_min": Key("float", 1.6),
        "n_max": Key("float", 1.9),
        "steps": Key("int", 12),
        "refine": Key("int", 0),
        "method": Key("str", "forward_attractor", ("forward_attractor", "shooting")),
    },
    "riemann": {
        "mode": Key("str", "blowup", ("blowup", "interface")),
        "n": Key("float", 1.0),
        "chi_plus": Key("float", 1.0),
        "chi_minus": Key("float", 1.0),
        "grid.x_min": Key("float", -2.0),
        "grid.x_max": Key("float", 2.0),
        "grid.n_cells": Key("int", 200),
        "t_max": Key("float", 1.0),
        "ceiling_factor": Key("float", 1e6),
        "mobility": Key("str", "simple", ("simple", "unit")),
        "eps_ladder": Key("list", [1e-1, 1e-2, 1e-3]),
        "t_final": Key("float", 0.1),
    },
    "sweep": {
        "sweep.subcommand": Key("str", "orbit", tuple(s for s in SUBCOMMANDS if s != "sweep")),
        "sweep.key": Key("str", "n"),
        "sweep.values": Key("list", [0.5, 1.0, 1.5]),
    },
}

# keys recorded in manifests as the tolerances a run used
TOLERANCE_KEYS = ("quadrature_tol", "solver.newton_tol", "tol", "zero_reg_rel", "clamp_eta")


def _check_type(key: str, spec: Key, value: Any) -> Any:
    k = spec.kind
    if k == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif k == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif k == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    elif k == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif k == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        value = [float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value]
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"{key}: {value!r} is not one of {list(spec.choices)}")
    return value


def resolve(subcommand: str, raw: dict | None) -> dict:
    """Merge ``raw`` over the schema defaults, rejecting anything unknown."""
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    raw = dict(raw or {})
    if not all(isinstance(k, str) for k in raw):
        raise ConfigError("config keys must be strings")
    schema = SCHEMAS[subcommand]
    out: dict[str, Any] = {}
    base_raw = {k: v for k, v in raw.items() if subcommand == "sweep" and k.startswith("base.")}
    unknown = sorted(set(raw) - set(schema) - set(base_raw))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {subcommand}: {', '.join(unknown)}")
    for key, spec in schema.items():
        out[key] = _check_type(key, spec, raw[key]) if key in raw else spec.default
    if subcommand == "sweep":
        inner = out["sweep.subcommand"]
        if out["sweep.key"] not in SCHEMAS[inner]:
            raise ConfigError(f"sweep.key {out['sweep.key']!r} is not a {inner} key")
        if not out["sweep.values"]:
            raise ConfigError("sweep.values must not be empty")
        base = resolve(inner, {k[len("base."):]: v for k, v in base_raw.items()})
        # validate against the swept key's own type (the generic list check floats ints)
        spec = SCHEMAS[inner][out["sweep.key"]]
        out["sweep.values"] = [_check_type(out["sweep.key"], spec, v)
                               for v in raw.get("sweep.values", out["sweep.values"])]
        out.update({f"base.{k}": v for k, v in base.items()})
    return out


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load(path: str | Path | None) -> dict:
    """Read a config file; None gives an empty override set."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def sweep_configs(cfg: dict) -> tuple[str, list[dict]]:
    inner = cfg["sweep.subcommand"]
    base = {k[len("base."):]: v for k, v in cfg.items() if k.startswith("base.")}
    runs = []
    for v in cfg["sweep.values"]:
        c = dict(base)
        c[cfg["sweep.key"]] = v
        runs.append(resolve(inner, c))
    return inner, runs
