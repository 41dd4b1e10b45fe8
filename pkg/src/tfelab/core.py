"""Grids, fields, model parameters and initial-data constructors.

Everything here is immutable after construction.  Field values are stored
in read-only numpy arrays so that a field can be shared between a solver
run and the diagnostics evaluated on it without defensive copies.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np

MIN_CELLS = 8


class Mobility(str, enum.Enum):
    """Mobility families for u_t = -(phi(u) u_xxx)_x."""

    DEGENERATE = "degenerate"  # |u|^n
    SIMPLE = "simple"  # (eps^2 + u^2)^(n/2)
    HOMOTOPY = "homotopy"  # eps^n + (1 - eps)(eps^2 + u^2)^(n/2)
    UNIT = "unit"  # 1, the bi-harmonic endpoint


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid with ``n_cells + 1`` nodes including both ends."""

    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ValueError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"empty interval [{self.x_min}, {self.x_max}]")
        if int(self.n_cells) != self.n_cells or self.n_cells < MIN_CELLS:
            raise ValueError(f"n_cells must be an integer >= {MIN_CELLS}")
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n_nodes)
        x.flags.writeable = False
        return x

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def is_symmetric(self, rtol: float = 1e-14) -> bool:
        return abs(self.x_min + self.x_max) <= rtol * max(abs(self.x_min), abs(self.x_max))

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D(self.x_min, self.x_max, self.n_cells * factor)


def make_grid(x_min: float, x_max: float, n_cells: int) -> Grid1D:
    return Grid1D(float(x_min), float(x_max), n_cells)


@dataclass(frozen=True)
class ModelParams:
    """Exponent ``n``, regularization ``epsilon`` and mobility family."""

    n: float
    epsilon: float = 0.0
    mobility: Mobility = Mobility.SIMPLE

    def __post_init__(self):
        object.__setattr__(self, "mobility", Mobility(self.mobility))
        if not (math.isfinite(self.n) and self.n > 0):
            raise ValueError(f"exponent n must be positive, got {self.n}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.mobility is Mobility.DEGENERATE and self.epsilon != 0.0:
            raise ValueError("degenerate mobility requires epsilon = 0")
        if self.mobility in (Mobility.SIMPLE, Mobility.HOMOTOPY) and self.epsilon == 0.0:
            raise ValueError(f"{self.mobility.value} mobility requires epsilon > 0")

    def to_dict(self) -> dict:
        return {"n": self.n, "epsilon": self.epsilon, "mobility": self.mobility.value}


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Field:
    """Nodal values of u on a grid at a given time."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"expected {self.grid.n_nodes} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValueError("field time must be finite and non-negative")
        object.__setattr__(self, "values", vals)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values, time: float | None = None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mass(self) -> float:
        return discrete_mass(self.values, self.grid.spacing)

    def to_csv(self, path: Union[str, Path]) -> None:
        write_columns_csv(path, ["x", "u"], [self.x, self.values])

    @classmethod
    def from_csv(cls, path: Union[str, Path], time: float = 0.0) -> "Field":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x = data[:, 0]
        grid = Grid1D(float(x[0]), float(x[-1]), len(x) - 1)
        return cls(grid, data[:, 1], time)


def discrete_mass(values: np.ndarray, h: float) -> float:
    """Trapezoid mass, the quantity the flux-form solver conserves.

    For periodic fields (last node duplicating the first) this reduces to
    ``h * sum(values[:-1])``.
    """
    v = np.asarray(values, dtype=float)
    return float(h * (np.sum(v[1:-1]) + 0.5 * (v[0] + v[-1])))


@dataclass
class StepRecord:
    t: float
    dt: float
    newton_iterations: int
    residual: float

    def to_dict(self) -> dict:
        return {"t": self.t, "dt": self.dt,
                "newton_iterations": self.newton_iterations,
                "residual": self.residual}


@dataclass
class Trajectory:
    """Ordered snapshots on one grid plus the per-step solver log."""

    snapshots: list[Field] = field(default_factory=list)
    step_log: list[StepRecord] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.snapshots, self.snapshots[1:]):
            self._check_pair(a, b)

    @staticmethod
    def _check_pair(a: Field, b: Field) -> None:
        if b.grid != a.grid:
            raise ValueError("all snapshots must share one grid")
        if not b.time > a.time:
            raise ValueError("snapshot times must be strictly increasing")

    def append(self, snap: Field) -> None:
        if self.snapshots:
            self._check_pair(self.snapshots[-1], snap)
        self.snapshots.append(snap)

    @property
    def grid(self) -> Grid1D:
        return self.snapshots[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, i) -> Field:
        return self.snapshots[i]

    def to_csv(self, path: Union[str, Path]) -> None:
        """Long format ``t,x,u``."""
        ts, xs, us = [], [], []
        for s in self.snapshots:
            ts.append(np.full(s.grid.n_nodes, s.time))
            xs.append(s.x)
            us.append(s.values)
        write_columns_csv(path, ["t", "x", "u"],
                          [np.concatenate(ts), np.concatenate(xs), np.concatenate(us)])

    def step_log_dicts(self) -> list[dict]:
        return [r.to_dict() for r in self.step_log]


def format_float(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else str(float(v))


def write_columns_csv(path: Union[str, Path], header: Sequence[str],
                      columns: Sequence[Sequence[float]]) -> None:
    """Write equal-length columns with round-trip (17 digit) precision."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow(["%.17g" % v for v in row])


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class SmoothBump:
    center: float = 0.0
    width: float = 1.0
    height: float = 1.0


@dataclass(frozen=True)
class RiemannData:
    chi_plus: float = 1.0
    chi_minus: float = 1.0


@dataclass(frozen=True)
class InterfaceData:
    orbit: Any = None  # interface_ode.OrbitResult
    phase_shift: float = 0.0  # added to s = ln x


def bump_profile(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) for |r| < 1 and exactly 0 outside, r = (x-c)/w."""
    r2 = ((np.asarray(x, dtype=float) - center) / width) ** 2
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def sample_initial_data(kind, grid: Grid1D, params: ModelParams | None = None) -> Field:
    """Evaluate one of the supported initial-data families on ``grid``."""
    x = grid.nodes
    if isinstance(kind, SmoothBump):
        if not kind.width > 0:
            raise ValueError("bump width must be positive")
        return Field(grid, kind.height * bump_profile(x, kind.center, kind.width))
    if isinstance(kind, RiemannData):
        q = 4.0 / _require_n(params)
        ax = np.abs(x) ** q
        vals = np.where(x > 0, kind.chi_plus * ax, np.where(x < 0, kind.chi_minus * ax, 0.0))
        return Field(grid, vals)
    if isinstance(kind, InterfaceData):
        if kind.orbit is None:
            raise ValueError("interface data requires a periodic orbit")
        n = _require_n(params)
        return Field(grid, interface_profile(x, n, kind.orbit, kind.phase_shift))
    raise TypeError(f"unknown initial-data kind {kind!r}")


def interface_profile(x: np.ndarray, n: float, orbit, phase_shift: float = 0.0) -> np.ndarray:
    """x^(3/n) phi*(ln x + phase_shift) for x > 0, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = xp ** (3.0 / n) * orbit.phi(np.log(xp) + phase_shift)
    return out


def _require_n(params: ModelParams | None) -> float:
    if params is None:
        raise ValueError("this initial-data kind needs model parameters (n)")
    return params.n
