"""Scaling group, Riemann-type power data, separable blow-up oracle, interface stability.

The regularized equation u_t = -(phi_eps(u) u_xxx)_x is mapped by
u(x, t) = eps v(y, tau), y = x / eps^alpha, tau = t / eps^beta with
beta = 4 alpha - n.  With alpha = n/4 time is unscaled and the rescaled
mobility is (1 + v^2)^(n/2) times eps^n, which is why the rescaled
experiments use the simple family at eps = 1.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import Field, Grid1D, Mobility, ModelParams, RiemannData, interface_profile, \
    make_grid, sample_initial_data, write_columns_csv
from .solver import SolverAbort, SolverConfig, simulate

MAX_RESCALED_NODES = 10 ** 7


# ------------------------------------------------------------------ scaling

@dataclass(frozen=True)
class RescaleSpec:
    alpha: float
    n: float
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive and finite")
        if not self.n > 0:
            raise ValueError("n must be positive")

    @property
    def beta(self) -> float:
        return 4.0 * self.alpha - self.n

    def inverse(self) -> "RescaleSpec":
        return RescaleSpec(self.alpha, self.n, 1.0 / self.epsilon)

    def compose(self, other: "RescaleSpec") -> "RescaleSpec":
        if (self.alpha, self.n) != (other.alpha, other.n):
            raise ValueError("only specs with equal alpha and n compose")
        return RescaleSpec(self.alpha, self.n, self.epsilon * other.epsilon)


def rescale(u: Field, spec: RescaleSpec, target: Grid1D | None = None) -> Field:
    """v(y) = u(eps^alpha y) / eps with time t / eps^beta.

    Without ``target`` the result lives on the image grid y_j = x_j / eps^alpha
    and involves no interpolation.  With ``target`` the image is linearly
    interpolated onto it (second order; zero outside the image).
    """
    s = spec.epsilon ** spec.alpha
    g = u.grid
    lo, hi = g.x_min / s, g.x_max / s
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise OverflowError("rescaled domain is not representable")
    values = np.asarray(u.values) / spec.epsilon
    t = u.time / spec.epsilon ** spec.beta
    image = Grid1D(lo, hi, g.n_cells)
    if target is None:
        return Field(image, values, t)
    if target.n_nodes > MAX_RESCALED_NODES:
        raise MemoryError("target grid exceeds the rescaling node budget")
    out = np.interp(target.nodes, image.nodes, values, left=0.0, right=0.0)
    return Field(target, out, t)


def riemann_initial_data(grid: Grid1D, n: float, chi: tuple[float, float]) -> Field:
    return sample_initial_data(RiemannData(chi[0], chi[1]), grid, ModelParams(n, 1.0))


# -------------------------------------------------------- separable solutions

def monomial_chain(n: float, N: int) -> float:
    """P(n, N) with -div(|rho|^n grad Lap rho) = -|C|^n C P |y|^q for rho = C |y|^q, q = 4/n.

    Built one derivative at a time from the radial formulas
    Lap r^p = p (p + N - 2) r^(p-2) and div(f(r) e_r) = r^(1-N) (r^(N-1) f)'.
    """
    q = 4.0 / n
    lap = q * (q + N - 2.0)  # r^(q-2)
    grad_lap = lap * (q - 2.0)  # r^(q-3)
    # |rho|^n contributes r^(qn) = r^4, so the flux is r^(q+1)
    return grad_lap * (q + 1.0 + N - 1.0)


@dataclass(frozen=True)
class SeparableResult:
    n: float
    N: int
    q: float
    P: float
    degenerate: bool
    C_star: float | None
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def separable_analysis(n: float, N: int = 1) -> SeparableResult:
    """Existence of rho = C_* |y|^(4/n) with rho = -div(|rho|^n grad Lap rho), C_* > 0.

    The balance is C^n P = -1; a positive root exists iff P < 0.  P = 0
    (an exponent collision) is reported as degenerate with no root.
    """
    if not n > 0:
        raise ValueError("n must be positive")
    if N < 1:
        raise ValueError("N must be a positive integer")
    q = 4.0 / n
    P = monomial_chain(n, N)
    if P == 0.0:
        return SeparableResult(n, N, q, P, True, None, "exponent collision: P = 0")
    if P > 0:
        return SeparableResult(n, N, q, P, False, None,
                               f"no positive C_* for N={N} at n={n:g} (P = {P:.6g} > 0)")
    return SeparableResult(n, N, q, P, False, (-1.0 / P) ** (1.0 / n))


def separable_residual(n: float, N: int, C: float, y_probe: Sequence[float]) -> float:
    """max over probes of |rho + div(|rho|^n grad Lap rho)| / |rho| for rho = C|y|^(4/n).

    Evaluated by exact monomial differentiation; relative to |rho| so the
    value does not grow with the probe radius.
    """
    if C == 0:
        raise ValueError("C must be nonzero")
    r = np.abs(np.asarray(y_probe, dtype=float))
    if np.any(r == 0):
        raise ValueError("probes must avoid y = 0")
    q = 4.0 / n
    P = monomial_chain(n, N)
    rho = C * r ** q
    rhs = -abs(C) ** n * C * P * r ** q
    return float(np.max(np.abs(rho - rhs) / np.abs(rho)))


def psi(t, n: float, T: float):
    """[n (T - t)]^(-1/n), the blow-up time factor."""
    return (n * (T - np.asarray(t, dtype=float))) ** (-1.0 / n)


def psi_residual(n: float, T: float, t_probe: Sequence[float]) -> float:
    """max |psi' - psi^(n+1)| / psi^(n+1) with psi' differentiated in closed form."""
    t = np.asarray(t_probe, dtype=float)
    if np.any(t >= T):
        raise ValueError("probes must lie before T")
    dpsi = (n * (T - t)) ** (-1.0 / n - 1.0)
    target = psi(t, n, T) ** (n + 1.0)
    return float(np.max(np.abs(dpsi - target) / target))


# ---------------------------------------------------------------- blow-up

@dataclass(frozen=True)
class BlowupReport:
    blew_up: bool
    T_estimate: float | None
    exponent_fit: float | None
    fit_quality: float | None
    unreliable: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_exponent(times: np.ndarray, sups: np.ndarray, T: float, t0: float):
    """Fit sup ~ (T - t)^(-p) over the last decade of growth, dropping the final 10%."""
    span = T - t0
    keep = (times < T - 0.1 * span)
    if not np.any(keep):
        return None, None, 0
    top = sups[keep].max()
    win = keep & (sups >= 0.1 * top) & (times < T)
    if np.count_nonzero(win) < 6:
        return None, None, int(np.count_nonzero(win))
    X = np.log(T - times[win])
    Y = np.log(sups[win])
    slope, icpt = np.polyfit(X, Y, 1)
    pred = slope * X + icpt
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((Y - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return float(-slope), r2, int(np.count_nonzero(win))


def blowup_experiment(n: float, chi: tuple[float, float], domain: Grid1D,
                      ceiling: float | None = None, t_max: float = 1.0,
                      config: SolverConfig | None = None,
                      mobility: Mobility = Mobility.SIMPLE) -> BlowupReport:
    """Evolve v0 = chi_(+/-) |y|^(4/n) under v_t = -((1 + v^2)^(n/2) v_yyy)_y.

    Blow-up means the solver's dt collapsed (SolverAbort) after sup|v|
    passed ``ceiling`` (default 1e6 sup|v0|).  The report is tagged
    unreliable when the final maximum of |v| sits on the domain edge,
    where the truncated data rather than the interior dynamics drive
    the evolution.  ``mobility=Mobility.UNIT`` gives the linear control.
    """
    params = ModelParams(n, 1.0, mobility) if mobility is not Mobility.UNIT \
        else ModelParams(n, 1.0, Mobility.UNIT)
    v0 = riemann_initial_data(domain, n, chi)
    meta: dict = {"n": n, "chi": list(chi), "domain": [domain.x_min, domain.x_max, domain.n_cells],
                  "mobility": params.mobility.value, "t_max": t_max}
    sup0 = v0.sup()
    if sup0 == 0.0:
        return BlowupReport(False, None, None, None, False, dict(meta, note="zero data"))
    y = domain.nodes
    central = np.abs(v0.values[np.abs(y) <= 0.25 * max(abs(domain.x_min), abs(domain.x_max))])
    edge = max(abs(v0.values[0]), abs(v0.values[-1]))
    meta["growth_dominated"] = bool(edge >= 10.0 * float(central.max(initial=0.0)))
    ceiling = ceiling if ceiling is not None else 1e6 * sup0
    config = config or SolverConfig(dt_initial=1e-8, dt_min=1e-14, dt_max=1e-3)
    try:
        traj = simulate(v0, params, t_max, config, store_every_step=True, sup_ceiling=ceiling)
        aborted = False
        abort_report = None
    except SolverAbort as exc:
        traj = exc.trajectory
        aborted = True
        abort_report = exc.report
    times = traj.times
    sups = np.array([s.sup() for s in traj.snapshots])
    final = traj.snapshots[-1]
    argmax = int(np.argmax(np.abs(final.values)))
    unreliable = argmax in (0, domain.n_nodes - 1)
    meta.update(aborted=aborted, abort=abort_report, final_time=float(times[-1]),
                max_sup=float(sups.max()), sup0=sup0, ceiling=ceiling,
                argmax_final=float(y[argmax]), steps=len(traj.step_log))
    blew_up = bool(aborted and sups.max() > ceiling)
    if not blew_up:
        return BlowupReport(False, None, None, None, unreliable, meta)
    T = float(times[-1])
    p, r2, cnt = _fit_exponent(times, sups, T, float(times[0]))
    meta["fit_samples"] = cnt
    return BlowupReport(True, T, p, r2, unreliable, meta)


# ------------------------------------------------------- stable interface

@dataclass(frozen=True)
class InterfaceEntry:
    epsilon: float
    window_sup: float
    blew_up: bool
    data_bound_ratio: float
    message: str = ""

    def to_row(self) -> list[float]:
        return [self.epsilon, self.window_sup, float(self.blew_up)]


def interface_phase(n: float, epsilon: float) -> float:
    """Phase shift (n/3) ln eps of the rescaled interface data."""
    return n / 3.0 * math.log(epsilon)


def interface_initial_data(grid: Grid1D, n: float, orbit, epsilon: float) -> Field:
    """v0(y) = y^(3/n) phi*((n/3) ln eps + ln y) for y > 0, zero elsewhere."""
    return Field(grid, interface_profile(grid.nodes, n, orbit, interface_phase(n, epsilon)))


def stable_interface_experiment(n: float, orbit, eps_ladder: Sequence[float], domain: Grid1D,
                                t_final: float, window: tuple[float, float] | None = None,
                                config: SolverConfig | None = None) -> list[InterfaceEntry]:
    """Run the (1 + v^2)^(n/2) flow from phase-shifted interface data per eps.

    The window sup over ``window`` (default: the middle half of the
    domain) at t_final is recorded; the o(1) correction of the data is
    taken to be zero.
    """
    if not getattr(orbit, "converged", False):
        raise ValueError("a converged periodic orbit is required")
    eps = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_ladder must be strictly decreasing")
    if window is None:
        q = 0.25 * domain.length
        window = (domain.x_min + q, domain.x_max - q)
    y = domain.nodes
    win = (y >= window[0]) & (y <= window[1])
    params = ModelParams(n, 1.0, Mobility.SIMPLE)
    config = config or SolverConfig(dt_initial=1e-6, dt_max=1e-2)
    out = []
    pos = y > 0
    for e in eps:
        v0 = interface_initial_data(domain, n, orbit, e)
        ratio = float(np.max(np.abs(v0.values[pos]) / y[pos] ** (3.0 / n))) / orbit.amplitude
        try:
            traj = simulate(v0, params, t_final, config)
            fin = traj.final
            out.append(InterfaceEntry(e, float(np.max(np.abs(fin.values[win]))),
                                      bool(traj.metadata.get("blew_up")), ratio))
        except SolverAbort as exc:
            out.append(InterfaceEntry(e, math.nan, bool(exc.report.get("blew_up", True)), ratio,
                                      str(exc)))
    return out


def write_interface_csv(entries: Sequence[InterfaceEntry], path) -> None:
    cols = list(zip(*[e.to_row() for e in entries])) if entries else [[]] * 3
    write_columns_csv(path, ["eps", "window_sup", "blew_up"], cols)
