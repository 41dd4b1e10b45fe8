"""Double-limit experiments: u_{eps(n), n} -> u~ and the first-order branching correction.

For small n with eps = eps(n) the regularized mobility expands as
(eps^2 + u^2)^(n/2) = 1 + (n/2) ln(eps^2 + u^2) + ..., so the solution
splits as u = u~ + n phi1 + o(n) with u~ the bi-harmonic flow of the data
and

    phi1(t) = - int_0^t grad b(t - s) * [ln|u~(s)| u~_xxx(s)] ds.

The correction is evaluated in Fourier space on a zero-padded grid, where
grad b(tau) is multiplication by i k exp(-k^4 tau); the exponential factor
is integrated exactly on every time panel (piecewise-linear source).
"""
from __future__ import annotations

import concurrent.futures as cf
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .biharmonic import KernelTable, biharmonic_solve
from .core import Field, Mobility, ModelParams, write_columns_csv
from .regularization import Schedule
from .solver import SolverConfig, fixed_step_simulate

log = logging.getLogger(__name__)

EDGE_FRACTION = 0.05  # L-infinity norms skip this fraction of nodes at each end


class ClampWarning(UserWarning):
    """ln|u~| was clamped on a large part of the domain."""


def interior_sup(values: np.ndarray, edge_fraction: float = EDGE_FRACTION) -> float:
    """max |v| over nodes, excluding ``edge_fraction`` of the nodes at each end."""
    v = np.asarray(values)
    k = int(edge_fraction * v.size)
    return float(np.max(np.abs(v[k: v.size - k])))


# ------------------------------------------------------------- phi1 (Fourier)

def _phi_funcs(z: np.ndarray):
    """phi1(z) = (1 - e^-z)/z and A(z) = (1 - (1+z) e^-z)/z^2, stable for small z."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    em = -np.expm1(-zs)
    p1 = np.where(small, 1.0 - z / 2 + z * z / 6, em / zs)
    A = np.where(small, 0.5 - z / 3 + z * z / 8, (em - zs * np.exp(-zs)) / (zs * zs))
    return p1, A


@dataclass
class _Spectral:
    n_nodes: int
    h: float
    pad: int

    def __post_init__(self):
        self.m = self.pad * self.n_nodes
        self.k = 2.0 * np.pi * np.fft.rfftfreq(self.m, d=self.h)

    def fwd(self, v):
        return np.fft.rfft(v, n=self.m)

    def inv(self, vh):
        return np.fft.irfft(vh, n=self.m)[: self.n_nodes]

    def d3(self, v):
        return self.inv((1j * self.k) ** 3 * self.fwd(v))


def branching_source(u: np.ndarray, h: float, clamp_eta: float | None,
                     spec: _Spectral | None = None) -> tuple[np.ndarray, float]:
    """g = ln(max(|u|, eta)) u_xxx with the convention ln(eta) * 0 = 0.

    Returns (g, clamped fraction of nodes).  ``clamp_eta`` defaults to
    1e-8 sup|u|.
    """
    u = np.asarray(u, dtype=float)
    sup = float(np.max(np.abs(u)))
    if sup == 0.0:
        return np.zeros_like(u), 0.0
    eta = 1e-8 * sup if clamp_eta is None else float(clamp_eta)
    spec = spec or _Spectral(u.size, h, 2)
    d3 = spec.d3(u)
    a = np.abs(u)
    clamped = a < eta
    lg = np.log(np.where(clamped, eta, a))
    g = np.where(d3 == 0.0, 0.0, lg * d3)
    return g, float(np.count_nonzero(clamped)) / u.size


def _s_mesh(t_grid: Sequence[float], n_panels: int, grading: float) -> np.ndarray:
    T = max(t_grid)
    base = T * (np.arange(n_panels + 1) / n_panels) ** grading
    return np.unique(np.concatenate([base, np.asarray(t_grid, float)]))


def branching_correction_phi1(u0: Field, t_grid: Sequence[float], table: KernelTable | None = None,
                              clamp_eta: float | None = None, n_panels: int = 200,
                              grading: float = 2.0, pad: int = 2,
                              return_meta: bool = False):
    """phi1 at each time in ``t_grid`` as Fields on the grid of ``u0``.

    u~(s) comes from :func:`biharmonic_solve` on an s-mesh graded toward
    s = 0 (where u~ changes fastest) and containing every output time.
    ``clamp_eta`` is absolute; None means 1e-8 sup|u~(s)| at each s.  A
    :class:`ClampWarning` is issued when the clamped set covers more than
    5% of the nodes at an output time.
    """
    ts = [float(t) for t in t_grid]
    if not ts or any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("t_grid must be positive and strictly increasing")
    if clamp_eta is not None and not clamp_eta > 0:
        raise ValueError("clamp_eta must be positive")
    grid = u0.grid
    h = grid.spacing
    spec = _Spectral(grid.n_nodes, h, pad)
    lam = spec.k ** 4
    ik = 1j * spec.k
    out: list[Field] = []
    fractions = {}
    if u0.sup() == 0.0:
        out = [Field(grid, np.zeros(grid.n_nodes), t) for t in ts]
        return (out, {"clamped_fraction": {t: 0.0 for t in ts}}) if return_meta else out
    s_mesh = _s_mesh(ts, n_panels, grading)
    want = set(ts)

    def source_hat(s, values):
        g, frac = branching_source(values, h, clamp_eta, spec)
        return -ik * spec.fwd(g), frac

    phi_hat = np.zeros_like(spec.k, dtype=complex)
    f_prev, _ = source_hat(0.0, u0.values)
    for a, b in zip(s_mesh[:-1], s_mesh[1:]):
        ub = biharmonic_solve(u0, b, table, check_domain=False).values
        f_b, frac = source_hat(b, ub)
        dt = b - a
        z = lam * dt
        p1, A = _phi_funcs(z)
        phi_hat = np.exp(-z) * phi_hat + dt * (A * f_prev + (p1 - A) * f_b)
        f_prev = f_b
        if b in want:
            fractions[b] = frac
            if frac > 0.05:
                warnings.warn(f"ln|u~| clamped on {100 * frac:.1f}% of the domain at t={b:g}",
                              ClampWarning, stacklevel=2)
            out.append(Field(grid, spec.inv(phi_hat), u0.time + b))
    if return_meta:
        return out, {"clamped_fraction": fractions, "s_nodes": int(s_mesh.size)}
    return out


# ------------------------------------------------------------------ sweeps

@dataclass(frozen=True)
class SweepEntry:
    n: float
    epsilon: float
    err0: float
    ok: bool = True
    message: str = ""
    max_sup: float = math.nan


@dataclass(frozen=True)
class BranchingReport:
    n: float
    epsilon: float
    err0: float
    err1: float
    ratio: float
    phi1_norm: float = math.nan
    ok: bool = True
    message: str = ""

    def __post_init__(self):
        if self.ok and (self.err0 < 0 or self.err1 < 0):
            raise ValueError("errors must be nonnegative")

    def to_row(self) -> list[float]:
        return [self.n, self.epsilon, self.err0, self.err1, self.ratio]


@dataclass(frozen=True)
class HomotopySetup:
    """Time discretization shared by every ladder entry."""

    n_steps: int = 500
    config: SolverConfig = field(default_factory=lambda: SolverConfig(theta=0.5))
    reference: str = "convolution"  # or "solver": u~ from the unit-mobility run

    def __post_init__(self):
        if self.reference not in ("convolution", "solver"):
            raise ValueError("reference must be 'convolution' or 'solver'")


def _check_ladder(n_ladder: Sequence[float], schedule) -> list[float]:
    ns = [float(v) for v in n_ladder]
    if not ns or any(not (0 < v <= 0.5) for v in ns):
        raise ValueError("n_ladder entries must lie in (0, 0.5]")
    if any(b >= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_ladder must be strictly decreasing")
    if not isinstance(schedule, (Schedule, FixedEpsilon)):
        raise TypeError("schedule must be a Schedule (or FixedEpsilon for a control run)")
    return ns


@dataclass(frozen=True)
class FixedEpsilon:
    """eps independent of n; violates n|ln eps| -> 0 only in the sense that
    the product no longer controls the expansion (negative control)."""

    value: float

    def __call__(self, n: float) -> float:
        return self.value

    @property
    def key(self) -> str:
        return f"fixed:{self.value!r}"


def _run_entry(u0: Field, n: float, eps: float, t_final: float, setup: HomotopySetup):
    params = ModelParams(n, eps, Mobility.SIMPLE)
    traj = fixed_step_simulate(u0, params, t_final, setup.n_steps, setup.config)
    return traj.final, float(traj.metadata.get("max_sup", max(s.sup() for s in traj.snapshots)))


def reference_solution(u0: Field, t_final: float, setup: HomotopySetup,
                       table: KernelTable | None = None) -> Field:
    if setup.reference == "solver":
        traj = fixed_step_simulate(u0, ModelParams(1.0, 1.0, Mobility.UNIT), t_final,
                                   setup.n_steps, setup.config)
        return traj.final
    return biharmonic_solve(u0, t_final, table)


def _entries(u0, ns, schedule, t_final, setup, workers):
    eps = [float(schedule(n)) for n in ns]
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_run_entry, u0, n, e, t_final, setup) for n, e in zip(ns, eps)]
            results = []
            for f in futs:
                try:
                    results.append(f.result())
                except Exception as exc:  # noqa: BLE001 - flag the entry, keep the sweep
                    results.append(exc)
    else:
        results = []
        for n, e in zip(ns, eps):
            try:
                results.append(_run_entry(u0, n, e, t_final, setup))
            except Exception as exc:  # noqa: BLE001
                results.append(exc)
    return eps, results


def homotopy_error_sweep(u0: Field, n_ladder: Sequence[float], schedule, t_final: float,
                         setup: HomotopySetup | None = None, table: KernelTable | None = None,
                         workers: int = 1) -> list[SweepEntry]:
    """err0(n) = ||u_{eps(n), n}(t_final) - u~(t_final)|| over the ladder.

    Each entry runs the simple-mobility solver at eps(n); a failing entry is
    flagged (ok=False) without aborting the sweep.
    """
    ns = _check_ladder(n_ladder, schedule)
    setup = setup or HomotopySetup()
    ref = reference_solution(u0, t_final, setup, table).values
    eps, results = _entries(u0, ns, schedule, t_final, setup, workers)
    out = []
    for n, e, r in zip(ns, eps, results):
        if isinstance(r, Exception):
            out.append(SweepEntry(n, e, math.nan, False, f"{type(r).__name__}: {r}"))
            continue
        fin, msup = r
        out.append(SweepEntry(n, e, interior_sup(fin.values - ref), True, "", msup))
    return out


def branching_order_check(u0: Field, n_ladder: Sequence[float], schedule, t_final: float,
                          table: KernelTable | None = None, setup: HomotopySetup | None = None,
                          clamp_eta: float | None = None, phi1: Field | None = None,
                          workers: int = 1, return_fields: bool = False):
    """err1(n) = ||u - u~ - n phi1(t_final)|| and ratio err1/n per ladder entry.

    With ``return_fields`` the result is ``(reports, finals)`` where
    ``finals`` maps each successful n to u_{eps(n), n}(t_final).
    """
    ns = _check_ladder(n_ladder, schedule)
    setup = setup or HomotopySetup()
    ref = reference_solution(u0, t_final, setup, table).values
    if phi1 is None:
        phi1 = branching_correction_phi1(u0, [t_final], table, clamp_eta)[-1]
    p1 = np.asarray(phi1.values)
    p1n = interior_sup(p1)
    eps, results = _entries(u0, ns, schedule, t_final, setup, workers)
    out = []
    finals = {}
    for n, e, r in zip(ns, eps, results):
        if isinstance(r, Exception):
            out.append(BranchingReport(n, e, math.nan, math.nan, math.nan, p1n, False,
                                       f"{type(r).__name__}: {r}"))
            continue
        fin, _ = r
        finals[n] = fin
        d = np.asarray(fin.values) - ref
        err0 = interior_sup(d)
        err1 = interior_sup(d - n * p1)
        out.append(BranchingReport(n, e, err0, err1, err1 / n, p1n))
    return (out, finals) if return_fields else out


def write_branching_csv(reports: Sequence[BranchingReport], path) -> None:
    cols = list(zip(*[r.to_row() for r in reports])) if reports else [[]] * 5
    write_columns_csv(path, ["n", "epsilon", "err0", "err1", "ratio"], cols)


def write_sweep_csv(entries: Sequence[SweepEntry], path) -> None:
    write_columns_csv(path, ["n", "epsilon", "err0", "ok"],
                      [[e.n for e in entries], [e.epsilon for e in entries],
                       [e.err0 for e in entries], [float(e.ok) for e in entries]])


def strictly_decreasing(values: Sequence[float]) -> bool:
    v = list(values)
    return all(math.isfinite(a) and math.isfinite(b) and b < a for a, b in zip(v, v[1:]))
