"""Integral diagnostics: mass, energy, dissipation, weak-form residuals, oscillations.

All quantities use the same discrete operators as :mod:`tfelab.solver`, so
that discrete identities (mass conservation, the energy balance) can be
checked to rounding error rather than to truncation error.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from .core import Field, ModelParams, Trajectory, write_columns_csv
from .solver import SolverConfig, face_fluxes, _unknowns


# ------------------------------------------------------------------ energy

@dataclass(frozen=True)
class EnergyReport:
    """Integral quantities of one snapshot.

    ``cumulative_dissipation`` and ``cumulative_flux_sq`` are time integrals
    accumulated with the right-endpoint rule, which is the rule under which
    the backward Euler scheme satisfies a discrete energy balance.
    """

    time: float
    mass: float
    gradient_energy: float
    cumulative_dissipation: float
    flux_norm_sq: float
    dissipation_rate: float = 0.0
    cumulative_flux_sq: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v):
                raise ValueError(f"non-finite {k} in energy report")

    def to_row(self) -> list[float]:
        return [self.time, self.mass, self.gradient_energy,
                self.cumulative_dissipation, self.flux_norm_sq]


def _config_of(config: SolverConfig | dict | None) -> SolverConfig:
    if config is None:
        return SolverConfig()
    if isinstance(config, dict):
        return SolverConfig(**config)
    return config


def gradient_energy(state: Field, periodic: bool = False) -> float:
    """1/2 sum over cells of (D+ u)^2 h."""
    h = state.grid.spacing
    du = np.diff(np.asarray(state.values)) / h
    return 0.5 * float(np.dot(du, du)) * h


def _face_terms(state: Field, params: ModelParams, config: SolverConfig):
    """Mobility M, third difference g and the face weights for this boundary mode.

    Reflecting boundaries produce two mirror faces (outside the domain)
    whose flux is the negative of the first interior one; they carry zero
    weight.  Periodic faces all carry full weight.
    """
    u = _unknowns(state.values, config.periodic)
    M, g = face_fluxes(u, state.grid.spacing, params, config)
    w = np.ones_like(M)
    if config.periodic:
        w[0] = 0.0  # face -1/2 duplicates face N-1/2
    else:
        w[0] = w[-1] = 0.0
    return M, g, w


def energy_report(state: Field, params: ModelParams, accumulated: EnergyReport | None = None,
                  config: SolverConfig | dict | None = None) -> EnergyReport:
    """Mass, gradient energy, flux norm and accumulated dissipation at ``state``."""
    cfg = _config_of(config)
    h = state.grid.spacing
    M, g, w = _face_terms(state, params, cfg)
    rate = float(np.sum(w * M * g * g)) * h
    flux = float(np.sum(w * (M * g) ** 2)) * h
    if accumulated is None:
        cum, cumf = 0.0, 0.0
    else:
        dt = state.time - accumulated.time
        if dt < 0:
            raise ValueError("reports must be accumulated forward in time")
        cum = accumulated.cumulative_dissipation + dt * rate
        cumf = accumulated.cumulative_flux_sq + dt * flux
    return EnergyReport(state.time, state.mass(), gradient_energy(state), cum, flux,
                        rate, cumf)


def _check_params(traj: Trajectory, params: ModelParams) -> None:
    meta = traj.metadata.get("params")
    if meta is not None and meta != params.to_dict():
        raise ValueError(f"params {params.to_dict()} do not match trajectory metadata {meta}")


def energy_history(traj: Trajectory, params: ModelParams,
                   config: SolverConfig | dict | None = None) -> list[EnergyReport]:
    _check_params(traj, params)
    cfg = _config_of(config if config is not None else traj.metadata.get("config"))
    out: list[EnergyReport] = []
    prev = None
    for snap in traj.snapshots:
        prev = energy_report(snap, params, prev, cfg)
        out.append(prev)
    return out


def energy_identity_residual(traj: Trajectory, params: ModelParams,
                             config: SolverConfig | dict | None = None) -> float:
    """max_t |E(t) + D(t) - E(0)|, E the gradient energy, D the dissipation.

    For the backward Euler scheme the per-step defect equals
    1/2 sum (D+ (u^{k+1} - u^k))^2 h, which is O(dt^2), so the residual over
    a fixed interval is O(dt) when every step is stored.
    """
    hist = energy_history(traj, params, config)
    E0 = hist[0].gradient_energy
    return max(abs(r.gradient_energy + r.cumulative_dissipation - E0) for r in hist)


def write_energy_ledger(reports: Sequence[EnergyReport], path) -> None:
    cols = list(zip(*[r.to_row() for r in reports])) if reports else [[]] * 5
    write_columns_csv(path, ["t", "mass", "grad_energy", "dissipation", "flux_norm"], cols)


# ------------------------------------------------------------ test functions

def _beta(s):
    """exp(1 - 1/(1 - s^2)) on |s| < 1 and its first derivative."""
    s = np.asarray(s, dtype=float)
    v = np.zeros_like(s)
    d = np.zeros_like(s)
    m = np.abs(s) < 1.0
    q = 1.0 - s[m] ** 2
    v[m] = np.exp(1.0 - 1.0 / q)
    d[m] = v[m] * (-2.0 * s[m] / (q * q))
    return v, d


@dataclass(frozen=True)
class TestFunction:
    """Smooth test function with compact support in a space-time box.

    ``bump_product``: beta((x - xc)/wx) * beta((t - tc)/wt).
    ``sine_packet``: sin(k (x - xc)) times the same envelope.
    Both derivatives are analytic.
    """

    __test__ = False  # not a pytest class

    kind: str = "bump_product"
    x_center: float = 0.0
    x_width: float = 1.0
    t_center: float = 0.5
    t_width: float = 0.5
    wavenumber: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sine_packet", "bump_product"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not (self.x_width > 0 and self.t_width > 0):
            raise ValueError("test function widths must be positive")

    @property
    def support(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((self.x_center - self.x_width, self.x_center + self.x_width),
                (self.t_center - self.t_width, self.t_center + self.t_width))

    def _parts(self, x, t):
        bx, dbx = _beta((np.asarray(x, dtype=float) - self.x_center) / self.x_width)
        bt, dbt = _beta((t - self.t_center) / self.t_width)
        dbx = dbx / self.x_width
        dbt = dbt / self.t_width
        if self.kind == "sine_packet":
            k = self.wavenumber
            arg = k * (np.asarray(x, dtype=float) - self.x_center)
            sx, cx = np.sin(arg), np.cos(arg)
            fx, dfx = sx * bx, k * cx * bx + sx * dbx
        else:
            fx, dfx = bx, dbx
        return fx, dfx, float(bt), float(dbt)

    def __call__(self, x, t):
        fx, _, bt, _ = self._parts(x, t)
        return fx * bt

    def dt(self, x, t):
        fx, _, _, dbt = self._parts(x, t)
        return fx * dbt

    def dx(self, x, t):
        _, dfx, bt, _ = self._parts(x, t)
        return dfx * bt


@dataclass(frozen=True)
class WeakFormResidual:
    total: float
    eps_term: float
    bad_set_term: float
    delta: float
    epsilon: float

    def to_row(self) -> list[float]:
        return [self.epsilon, self.delta, self.total, self.eps_term, self.bad_set_term]


def weak_form_residual(traj: Trajectory, params: ModelParams, test: TestFunction,
                       delta: float | None = None,
                       config: SolverConfig | dict | None = None) -> WeakFormResidual:
    """Discrete space-time weak form int int (psi_t u + psi_x phi(u) u_xxx).

    ``eps_term`` is |eps^n int int psi_x u_xxx| and ``bad_set_term`` is the
    magnitude of the flux contribution restricted to faces where the
    interpolated |u| <= delta.  ``delta`` defaults to epsilon.  Space
    integrals use the solver's face fluxes; the time integral is the
    trapezoid rule over the stored snapshots.
    """
    _check_params(traj, params)
    if delta is None:
        delta = params.epsilon
    if not delta > 0:
        raise ValueError("delta must be positive")
    cfg = _config_of(config if config is not None else traj.metadata.get("config"))
    (xl, xr), (tl, tr) = test.support
    grid = traj.grid
    if xl < grid.x_min or xr > grid.x_max or tl < 0 or tr > traj.times[-1] * (1 + 1e-12):
        raise ValueError("test function support leaves the trajectory's space-time box")
    h = grid.spacing
    x = grid.nodes
    xf_full = np.concatenate([[x[0] - 0.5 * h], x + 0.5 * h])  # faces -1/2 .. N+1/2
    n_unknown = grid.n_nodes - 1 if cfg.periodic else grid.n_nodes
    xf = xf_full[: n_unknown + 1]
    eps_n = params.epsilon ** params.n if params.epsilon > 0 else 0.0
    wnode = np.full(x.size, h)
    wnode[0] = wnode[-1] = 0.5 * h
    times = traj.times
    A = np.empty(times.size)
    E = np.empty(times.size)
    Bd = np.empty(times.size)
    for k, snap in enumerate(traj.snapshots):
        t = snap.time
        u = np.asarray(snap.values)
        A_t = float(np.dot(wnode, test.dt(x, t) * u))
        M, g, wf = _face_terms(snap, params, cfg)
        psx = test.dx(xf, t) * wf
        A[k] = A_t + float(np.sum(psx * M * g)) * h
        E[k] = eps_n * float(np.sum(psx * g)) * h
        ue = u[:n_unknown]
        ue_ext = np.concatenate([[ue[-1] if cfg.periodic else ue[1]], ue,
                                 [ue[0] if cfg.periodic else ue[-2]]])
        uface = 0.5 * (ue_ext[:-1] + ue_ext[1:])[: n_unknown + 1]
        bad = np.abs(uface) <= delta
        Bd[k] = float(np.sum((psx * M * g)[bad])) * h
    return WeakFormResidual(abs(float(trapezoid(A, times))), abs(float(trapezoid(E, times))),
                            abs(float(trapezoid(Bd, times))), float(delta), params.epsilon)


def write_weak_form_ledger(rows: Sequence[WeakFormResidual], path) -> None:
    cols = list(zip(*[r.to_row() for r in rows])) if rows else [[]] * 5
    write_columns_csv(path, ["eps", "delta", "total", "eps_term", "bad_set_term"], cols)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ln y against ln x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# --------------------------------------------------------------- oscillations

@dataclass(frozen=True)
class OscillationProfile:
    time: float
    sign_changes: int
    interface_left: float
    interface_right: float
    envelope_exponent_left: float | None = None
    envelope_exponent_right: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.sign_changes < 0:
            raise ValueError("sign_changes must be nonnegative")
        if self.interface_left > self.interface_right:
            raise ValueError("interface_left must not exceed interface_right")

    @property
    def envelope_exponent(self) -> float | None:
        """Mean over the sides where a fit exists, else None."""
        vals = [v for v in (self.envelope_exponent_left, self.envelope_exponent_right)
                if v is not None]
        return float(np.mean(vals)) if vals else None


def count_sign_changes(values: np.ndarray, tol: float) -> int:
    """Sign flips of u after discarding nodes with |u| <= tol.

    Nodes sitting (numerically) on a zero are skipped rather than breaking
    the pair they belong to, so a zero that falls exactly on a node is
    still counted once.
    """
    v = np.asarray(values)
    kept = v[np.abs(v) > tol]
    return int(np.count_nonzero(np.sign(kept[1:]) != np.sign(kept[:-1])))


def _envelope_fit(dist: np.ndarray, mag: np.ndarray, count: int = 5) -> float | None:
    """Exponent mu of |u| ~ C (d + s)^mu over the ``count`` nearest extrema.

    ``d`` is the distance to the tolerance crossing, which lies inside the
    true interface by an unknown offset ``s``; s is fitted jointly (it
    minimizes the residual of the log-log line) so that the exponent is
    not biased by the detection threshold.
    """
    a = mag
    i = np.where((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]))[0] + 1
    i = i[dist[i] > 0]
    if i.size < 3:
        return None
    order = np.argsort(dist[i])[:count]
    sel = i[order]
    d, la = dist[sel], np.log(a[sel])

    def sse(shift):
        X = np.log(d + shift)
        coef = np.polyfit(X, la, 1)
        return float(np.sum((np.polyval(coef, X) - la) ** 2)), float(coef[0])

    if sel.size >= 4:
        res = minimize_scalar(lambda v: sse(v)[0], bounds=(0.0, float(d.max())), method="bounded",
                              options={"xatol": 1e-6 * float(d.min())})
        best = min((0.0, float(res.x)), key=lambda v: sse(v)[0])
    else:
        best = 0.0
    return sse(best)[1]


def oscillation_profile(state: Field, tol: float | None = None,
                        n_extrema: int = 5) -> OscillationProfile:
    """Sign changes, outermost |u| = tol crossings and near-interface envelope exponents.

    A side whose outermost crossing is the domain end (|u| > tol there)
    has no interface; its exponent is reported as None, as is a side with
    fewer than three extrema.
    """
    u = np.asarray(state.values)
    x = state.x
    sup = state.sup()
    if tol is None:
        tol = 1e-9 * sup
    if not tol > 0:
        if sup == 0.0:
            return OscillationProfile(state.time, 0, float(x[0]), float(x[-1]))
        raise ValueError("tol must be positive")
    sc = count_sign_changes(u, tol)
    above = np.where(np.abs(u) > tol)[0]
    if above.size == 0:
        mid = float(x[x.size // 2])
        return OscillationProfile(state.time, sc, mid, mid, meta={"tol": tol})
    i0, i1 = int(above[0]), int(above[-1])
    absu = np.abs(u)

    def crossing(j_in, j_out):
        a, b = absu[j_out], absu[j_in]
        th = (tol - a) / (b - a)
        return float(x[j_out] + th * (x[j_in] - x[j_out]))

    left_open = i0 > 0
    right_open = i1 < x.size - 1
    xl = crossing(i0, i0 - 1) if left_open else float(x[0])
    xr = crossing(i1, i1 + 1) if right_open else float(x[-1])
    exp_l = exp_r = None
    if left_open:
        exp_l = _envelope_fit(x - xl, np.where(x > xl, absu, 0.0), n_extrema)
    if right_open:
        exp_r = _envelope_fit(xr - x, np.where(x < xr, absu, 0.0), n_extrema)
    return OscillationProfile(state.time, sc, xl, xr, exp_l, exp_r,
                              meta={"tol": tol, "left_open": left_open, "right_open": right_open})
