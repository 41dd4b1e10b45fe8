"""Conservative implicit finite-difference integrator for u_t = -(phi(u) u_xxx)_x.

The spatial operator is in flux form on the nodes of a uniform grid:

    A(u)_i = (q_{i+1/2} - q_{i-1/2}) / h,   q = M_face * D3 u,

with D3 the second-order third difference across each face.  Time stepping
is the theta scheme, solved by Newton's method on the pentadiagonal
Jacobian.  Two boundary modes are supported:

``periodic``
    the last node duplicates the first one.
``decay_clamped``
    even reflection about the end nodes, giving u_x = u_xxx = 0 and zero
    flux there; conserves the trapezoid mass.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from ._backend import FAM_CODES, get_kernels
from .core import Field, ModelParams, StepRecord, Trajectory

log = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    """A single implicit step failed; the caller should reduce dt."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SolverAbort(RuntimeError):
    """dt fell below dt_min; carries a blow-up / stiffness report."""

    def __init__(self, message: str, report: dict, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.report = report
        self.trajectory = trajectory


@dataclass(frozen=True)
class SolverConfig:
    dt_initial: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    newton_tol: float = 1e-10
    newton_max_iter: int = 12
    face_average: str = "arithmetic"
    boundary: str = "decay_clamped"
    theta: float = 1.0
    blowup_factor: float = 1e6
    adapt_dt: bool = True
    backend: str | None = None

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_initial <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_initial <= dt_max")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.face_average not in ("arithmetic", "geometric"):
            raise ValueError(f"unknown face_average {self.face_average!r}")
        if self.boundary not in ("periodic", "decay_clamped"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not (0.5 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [1/2, 1]")

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def geometric(self) -> bool:
        return self.face_average == "geometric"

    def to_dict(self) -> dict:
        return asdict(self)


def _unknowns(values: np.ndarray, periodic: bool) -> np.ndarray:
    return np.array(values[:-1] if periodic else values, dtype=float)


def _to_nodes(u: np.ndarray, periodic: bool) -> np.ndarray:
    return np.append(u, u[0]) if periodic else u


def _kernel_args(params: ModelParams, config: SolverConfig):
    return (FAM_CODES[params.mobility.value], float(params.n), float(params.epsilon),
            config.geometric, config.periodic)


def operator(values: np.ndarray, h: float, params: ModelParams, config: SolverConfig) -> np.ndarray:
    """A(u) on the unknowns (periodic fields drop their duplicate node)."""
    k = get_kernels(config.backend)
    return k.apply_operator(values, h, *_kernel_args(params, config))


def face_fluxes(values: np.ndarray, h: float, params: ModelParams, config: SolverConfig):
    """Face mobility and third difference on faces -1/2 .. N-1/2 of the unknowns."""
    k = get_kernels(config.backend)
    return k.face_quantities(values, h, *_kernel_args(params, config))


def _solve(bands: np.ndarray, rhs: np.ndarray, periodic: bool) -> np.ndarray:
    N = rhs.shape[0]
    if not periodic:
        ab = np.zeros((5, N))
        # LAPACK band layout: ab[2 + i - j, j] = J[i, j]; bands[k, i] = J[i, i+k-2]
        for k in range(5):
            off = k - 2
            if off >= 0:
                ab[2 - off, off:] = bands[k, :N - off]
            else:
                ab[2 - off, :N + off] = bands[k, -off:]
        return solve_banded((2, 2), ab, rhs, check_finite=False)
    rows = np.repeat(np.arange(N)[None, :], 5, axis=0)
    cols = (rows + np.arange(-2, 3)[:, None]) % N
    J = csc_matrix((bands.ravel(), (rows.ravel(), cols.ravel())), shape=(N, N))
    return splu(J).solve(rhs)


def _roundoff_floor(bands: np.ndarray, u: np.ndarray, scale: float) -> float:
    """Smallest residual distinguishable from rounding in R = u - c + dt A(u).

    Rounding of size eps |u| is amplified by the Jacobian's row sums, which
    for stiff steps (dt / h^4 large) can push it above ``newton_tol``.
    """
    rows = float(np.max(np.sum(np.abs(bands), axis=0)))
    return 16.0 * np.finfo(float).eps * rows * float(np.max(np.abs(u))) / scale


def _newton(u_old: np.ndarray, dt: float, h: float, params: ModelParams,
            config: SolverConfig) -> tuple[np.ndarray, int, float]:
    k = get_kernels(config.backend)
    args = _kernel_args(params, config)
    theta = config.theta
    c = u_old.copy()
    if theta < 1.0:
        c -= dt * (1.0 - theta) * k.apply_operator(u_old, h, *args)
    scale = max(1.0, float(np.max(np.abs(u_old))))
    u = u_old.copy()
    res = math.inf
    for it in range(1, config.newton_max_iter + 1):
        R, bands = k.assemble_system(u, c, h, dt * theta, *args)
        res = float(np.max(np.abs(R))) / scale
        if not math.isfinite(res):
            break
        if res <= max(config.newton_tol, _roundoff_floor(bands, u, scale)):
            return u, it - 1, res
        try:
            du = _solve(bands, -R, config.periodic)
        except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
            raise NewtonDivergence(f"linear solve failed: {exc}", res, it) from exc
        if not np.all(np.isfinite(du)):
            break
        u = u + du
        if float(np.max(np.abs(du))) <= 1e-3 * config.newton_tol * scale:
            R, bands = k.assemble_system(u, c, h, dt * theta, *args)
            res = float(np.max(np.abs(R))) / scale
            if res <= max(config.newton_tol, _roundoff_floor(bands, u, scale)):
                return u, it, res
    raise NewtonDivergence(f"Newton failed, residual {res:.3e}", res, config.newton_max_iter)


def step(state: Field, dt: float, params: ModelParams, config: SolverConfig) -> Field:
    """One theta-implicit step; raises :class:`NewtonDivergence` on failure."""
    u, _, _ = step_with_info(state, dt, params, config)
    return u


def step_with_info(state: Field, dt: float, params: ModelParams, config: SolverConfig):
    if not dt > 0:
        raise ValueError("dt must be positive")
    periodic = config.periodic
    u0 = _unknowns(state.values, periodic)
    u, iters, res = _newton(u0, dt, state.grid.spacing, params, config)
    return state.with_values(_to_nodes(u, periodic), state.time + dt), iters, res


def simulate(u0: Field, params: ModelParams, t_final: float, config: SolverConfig | None = None,
             snap_times: Sequence[float] | None = None, store_every_step: bool = False,
             sup_ceiling: float | None = None) -> Trajectory:
    """Integrate to ``t_final`` with Newton-count-controlled adaptive dt.

    Steps are shortened to land exactly on every requested snapshot time,
    so snapshots carry no time-interpolation error.  With
    ``store_every_step`` every accepted step is kept as a snapshot.

    Raises :class:`SolverAbort` when dt drops below ``dt_min``; the
    exception carries the partial trajectory and a report that flags
    blow-up when sup|u| exceeded the ceiling.
    """
    config = config or SolverConfig()
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    targets = sorted({float(t) for t in (snap_times or ()) if 0 < t <= t_final} | {float(t_final)})
    sup0 = u0.sup()
    ceiling = sup_ceiling if sup_ceiling is not None else config.blowup_factor * max(sup0, 1e-300)
    traj = Trajectory(metadata={"params": params.to_dict(), "config": config.to_dict(),
                                "t_final": t_final})
    traj.append(u0)
    state = u0
    dt = config.dt_initial
    blew_up = False
    for target in targets:
        while state.time < target * (1 - 1e-14) - 1e-300:
            remaining = target - state.time
            this_dt = min(dt, remaining)
            # avoid a sliver step right before the target
            if remaining - this_dt < 1e-3 * this_dt:
                this_dt = remaining
            try:
                new, iters, res = step_with_info(state, this_dt, params, config)
            except NewtonDivergence as exc:
                dt = 0.5 * this_dt
                log.debug("t=%.6g: step rejected (%s), dt -> %.3g", state.time, exc, dt)
                if dt < config.dt_min:
                    report = {"t": state.time, "dt": dt, "last_residual": exc.residual,
                              "sup": state.sup(), "ceiling": ceiling,
                              "blew_up": bool(blew_up or state.sup() > ceiling)}
                    traj.metadata["abort"] = report
                    raise SolverAbort("dt fell below dt_min", report, traj) from exc
                continue
            if abs(target - new.time) <= 1e-12 * max(1.0, target):
                new = new.with_values(new.values, target)
            state = new
            traj.step_log.append(StepRecord(state.time, this_dt, iters, res))
            if store_every_step and state.time < target:
                traj.append(state)
            if state.sup() > ceiling:
                blew_up = True
            if config.adapt_dt:
                if iters <= 2:
                    dt = min(config.dt_max, this_dt * 1.5)
                elif iters >= 6:
                    dt = max(config.dt_min, this_dt * 0.6)
                else:
                    dt = max(dt, this_dt)
        traj.append(state)
    traj.metadata["blew_up"] = blew_up
    traj.metadata["max_sup"] = max(s.sup() for s in traj.snapshots)
    return traj


def fixed_step_simulate(u0: Field, params: ModelParams, t_final: float, n_steps: int,
                        config: SolverConfig | None = None,
                        store_every_step: bool = False) -> Trajectory:
    """Uniform dt = t_final / n_steps; used for convergence studies."""
    config = config or SolverConfig()
    dt = t_final / n_steps
    traj = Trajectory(metadata={"params": params.to_dict(), "config": config.to_dict(),
                                "t_final": t_final, "n_steps": n_steps})
    traj.append(u0)
    state = u0
    for k in range(1, n_steps + 1):
        new, iters, res = step_with_info(state, dt, params, config)
        state = new.with_values(new.values, t_final * k / n_steps)
        traj.step_log.append(StepRecord(state.time, dt, iters, res))
        if store_every_step or k == n_steps:
            traj.append(state)
    return traj


def mass_history(traj: Trajectory) -> np.ndarray:
    return np.array([s.mass() for s in traj.snapshots])


def iter_snapshots(traj: Trajectory, times: Iterable[float]) -> list[Field]:
    """Snapshots at exactly the requested times (they must have been stored)."""
    by_time = {s.time: s for s in traj.snapshots}
    return [by_time[float(t)] for t in times]
