"""Fundamental kernel of u_t = -Delta^2 u and the convolution solution.

The self-similar profile F of b(x, t) = t^(-N/4) F(x t^(-1/4)) is computed
from its Fourier representation exp(-|xi|^4) by composite Gauss-Legendre
quadrature, panel-refined per evaluation point until two successive
refinements agree to the requested tolerance.
"""
from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import gamma, jv

from .core import Field, Grid1D, write_columns_csv

# exp(-xi^4) < 1e-18 beyond this cut-off
XI_MAX = (18.0 * math.log(10.0)) ** 0.25
_GL_ORDER = 16
# |F(y)| < 1e-30 beyond this (envelope exp(-0.236 |y|^(4/3))); offsets past it are zero
Y_CUT = 80.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


class KernelDomainError(ValueError):
    """Kernel mass escapes the computational domain."""


class TruncationWarning(UserWarning):
    pass


def sphere_area(N: int) -> float:
    """|S^{N-1}|: 2, 2 pi, 4 pi for N = 1, 2, 3."""
    return 2.0 * math.pi ** (N / 2) / gamma(N / 2)


def kernel_at_origin(N: int) -> float:
    """Closed form F_N(0) = |S^{N-1}| Gamma(N/4) / (4 (2 pi)^N)."""
    return sphere_area(N) * gamma(N / 4) / (4.0 * (2.0 * math.pi) ** N)


def _radial_weight(rho: np.ndarray, r: np.ndarray, N: int) -> np.ndarray:
    """Integrand factor so that F_N(r) = int_0^inf exp(-rho^4) w(rho, r) drho."""
    z = rho * r
    if N == 1:
        return np.cos(z) / math.pi
    if N == 3:
        with np.errstate(invalid="ignore", divide="ignore"):
            sinc = np.where(z == 0.0, 1.0, np.sin(z) / np.where(z == 0.0, 1.0, z))
        return rho * rho * sinc / (2.0 * math.pi ** 2)
    if N == 2:
        return rho * jv(0, z) / (2.0 * math.pi)
    nu = N / 2 - 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (2 * math.pi) ** (-N / 2) * rho ** (N / 2) * r ** (-nu) * jv(nu, z)
    return out


def _panel_quadrature(r: np.ndarray, N: int, panels: int) -> np.ndarray:
    edges = np.linspace(0.0, XI_MAX, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    rho = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel() * np.exp(-rho ** 4)
    vals = _radial_weight(rho[None, :], r[:, None], N)
    return vals @ w


def fourier_kernel(y, N: int = 1, tol: float = 1e-13, max_panels: int = 4096) -> np.ndarray:
    """F_N(|y|) by adaptive composite Gauss-Legendre quadrature.

    Raises :class:`QuadratureError` with the achieved error when the panel
    budget is exhausted before two refinements agree to ``tol``.
    """
    r = np.abs(np.atleast_1d(np.asarray(y, dtype=float)))
    out = np.empty_like(r)
    # at least two panels per oscillation of cos(xi r) on [0, XI_MAX]
    base = 4 + 2 * np.ceil(XI_MAX * r / (2.0 * math.pi)).astype(int)
    panels = 2 ** np.ceil(np.log2(base)).astype(int)
    worst = 0.0
    for p in np.unique(panels):
        idx = np.where(panels == p)[0]
        rr = r[idx]
        cur = _panel_quadrature(rr, N, int(p))
        pp = int(p)
        pending = np.arange(idx.size)
        while True:
            nxt = _panel_quadrature(rr[pending], N, 2 * pp)
            err = np.abs(nxt - cur[pending])
            cur[pending] = nxt
            done = err <= tol
            if pending.size and not np.all(done) and 2 * pp >= max_panels:
                worst = max(worst, float(err.max()))
                raise QuadratureError("kernel quadrature did not converge", worst)
            pending = pending[~done]
            if pending.size == 0:
                break
            pp *= 2
        out[idx] = cur
    if np.ndim(y) == 0:
        return out[0]
    return out


@dataclass(frozen=True)
class Envelope:
    """|F(y)| ~ prefactor * exp(-a |y|^(4/3)), fitted through local extrema."""

    a: float
    prefactor: float
    r2: float
    n_points: int
    window: tuple

    @property
    def slope(self) -> float:
        return -self.a

    def to_dict(self) -> dict:
        return {"a": self.a, "prefactor": self.prefactor, "r2": self.r2,
                "n_points": self.n_points, "window": list(self.window)}


@dataclass(frozen=True)
class KernelTable:
    dimension: int
    y_nodes: np.ndarray
    F_values: np.ndarray
    normalization: float
    envelope: Envelope | None
    quadrature_tol: float
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    def to_csv(self, path) -> None:
        write_columns_csv(path, ["y", "F"], [self.y_nodes, self.F_values])

    def sidecar(self) -> dict:
        return {"dimension": self.dimension, "normalization": self.normalization,
                "quadrature_tol": self.quadrature_tol,
                "envelope": None if self.envelope is None else self.envelope.to_dict(),
                "xi_max": XI_MAX, "gauss_legendre_order": _GL_ORDER, **self.meta}

    def write(self, csv_path, json_path) -> None:
        self.to_csv(csv_path)
        Path(json_path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    def sign_changes(self, y_abs_max: float = 10.0) -> int:
        mask = np.abs(self.y_nodes) <= y_abs_max
        return count_sign_changes(self.F_values[mask])


def count_sign_changes(values: np.ndarray, tol: float = 0.0) -> int:
    """Sign changes between successive entries with |value| > tol."""
    v = np.asarray(values)
    v = v[np.abs(v) > tol]
    s = np.sign(v)
    return int(np.count_nonzero(s[1:] != s[:-1]))


def local_extrema(y: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interior local extrema of |F| refined by a parabola through 3 nodes."""
    a = np.abs(F)
    i = np.where((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]))[0] + 1
    h = y[1] - y[0]
    fm, f0, fp = F[i - 1], F[i], F[i + 1]
    denom = fm - 2 * f0 + fp
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(denom != 0, 0.5 * (fm - fp) / denom, 0.0)
    yext = y[i] + shift * h
    fext = f0 - 0.25 * (fm - fp) * shift
    return yext, fext


def fit_envelope(y: np.ndarray, F: np.ndarray, window=(2.0, 8.0),
                 floor: float = 0.0) -> Envelope | None:
    """Least-squares line through (|y|^(4/3), ln|F|) at extrema with y in window.

    Only y >= 0 is used (F is even).  ``floor`` drops extrema whose
    magnitude is below the quadrature noise.  Returns None with fewer
    than two extrema.
    """
    pos = y >= 0
    ye, fe = local_extrema(y[pos], F[pos])
    keep = (ye >= window[0]) & (ye <= window[1]) & (np.abs(fe) > floor)
    ye, fe = ye[keep], fe[keep]
    if ye.size < 2:
        return None
    X = ye ** (4.0 / 3.0)
    Y = np.log(np.abs(fe))
    slope, icpt = np.polyfit(X, Y, 1)
    pred = slope * X + icpt
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return Envelope(a=float(-slope), prefactor=float(math.exp(icpt)), r2=r2,
                    n_points=int(ye.size), window=tuple(window))


@dataclass(frozen=True)
class ExponentFit:
    """ln|F| = c - (1/3) ln y - a y^p fitted at the extrema with p free."""

    p: float
    a: float
    r2: float
    n_points: int

    def to_dict(self) -> dict:
        return {"p": self.p, "a": self.a, "r2": self.r2, "n_points": self.n_points}


def fit_envelope_exponent(y: np.ndarray, F: np.ndarray, window=(2.0, 20.0),
                          floor: float = 0.0) -> ExponentFit | None:
    """Estimate the envelope exponent p in |F| ~ y^(-1/3) exp(-a y^p).

    The algebraic factor y^(-1/3) is the saddle-point prefactor of the
    one-dimensional kernel; without it the fitted p is biased low on
    short windows.  Needs at least four extrema.
    """
    pos = y >= 0
    ye, fe = local_extrema(y[pos], F[pos])
    keep = (ye >= window[0]) & (ye <= window[1]) & (np.abs(fe) > floor)
    ye, fe = ye[keep], fe[keep]
    if ye.size < 4:
        return None
    L = np.log(np.abs(fe))

    def model(yy, c, a, p):
        return c - np.log(yy) / 3.0 - a * yy ** p

    popt, _ = curve_fit(model, ye, L, p0=(0.0, 0.25, 4.0 / 3.0))
    res = L - model(ye, *popt)
    ss_tot = float(np.sum((L - L.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(float(popt[2]), float(popt[1]), r2, int(ye.size))


def kernel_1d(y_grid: Grid1D, quadrature_tol: float = 1e-12,
              envelope_window=(2.0, 20.0), normalization_tol: float = 1e-8) -> KernelTable:
    """Tabulate F on a symmetric grid; the trapezoid integral must be 1."""
    if not y_grid.is_symmetric():
        raise ValueError("kernel grid must be symmetric about 0")
    y = y_grid.nodes
    half = y >= 0
    Fh = fourier_kernel(y[half], 1, quadrature_tol)
    F = np.empty_like(y)
    F[half] = Fh
    # exact mirror so that F(-y) - F(y) == 0
    F[~half] = Fh[1:][::-1] if y[half][0] == 0.0 else Fh[::-1][:np.count_nonzero(~half)]
    return _finish_table(1, y, F, quadrature_tol, envelope_window, normalization_tol)


def _finish_table(N, y, F, tol, window, normalization_tol, weights=None):
    h = float(y[1] - y[0])
    if weights is None:
        norm = float(h * (np.sum(F[1:-1]) + 0.5 * (F[0] + F[-1])))
    else:
        norm = float(np.sum(weights * F))
    if abs(norm - 1.0) > normalization_tol:
        raise KernelDomainError(
            f"discrete kernel integral {norm!r} differs from 1 by more than "
            f"{normalization_tol:g}; enlarge the y grid")
    F = np.array(F)
    F.flags.writeable = False
    y = np.array(y)
    y.flags.writeable = False
    env = fit_envelope(y, F, window, floor=100 * tol)
    return KernelTable(N, y, F, norm, env, tol,
                       meta={"y_min": float(y[0]), "y_max": float(y[-1]), "n_nodes": int(y.size)})


def kernel_radial(N: int, r_grid: Grid1D, quadrature_tol: float = 1e-12,
                  envelope_window=(2.0, 20.0), normalization_tol: float = 1e-6) -> KernelTable:
    """Radial profile F_N(r), N in {1, 2, 3}, normalized over R^N."""
    if N not in (1, 2, 3):
        raise ValueError("N must be 1, 2 or 3")
    if r_grid.x_min != 0.0:
        raise ValueError("radial grid must start at r = 0")
    r = r_grid.nodes
    F = fourier_kernel(r, N, quadrature_tol)
    F[0] = kernel_at_origin(N) if r[0] == 0.0 else F[0]
    h = r_grid.spacing
    w = np.full(r.size, h)
    w[0] = w[-1] = 0.5 * h
    w = w * sphere_area(N) * r ** (N - 1)
    # r^(N-1) F extends evenly for N = 1, 3 (trapezoid is spectrally accurate);
    # for N = 2 the extension is odd and the Euler-Maclaurin end term
    # h^2/12 * d/dr[2 pi r F](0) = h^2/12 * 2 pi F(0) restores high order.
    if N == 2:
        w[0] += h * h / 12.0 * sphere_area(2)
    return _finish_table(N, r, F, quadrature_tol, envelope_window, normalization_tol, weights=w)


def kernel_residual(table: KernelTable) -> float:
    """max |F''' - y F / 4| over interior nodes, central 5-point third difference."""
    if table.dimension != 1:
        raise ValueError("kernel_residual needs a 1D table")
    F = np.asarray(table.F_values)
    y = np.asarray(table.y_nodes)
    if F.size < 4 * 5:
        raise ValueError("grid too coarse for a third-difference residual")
    h = table.spacing
    d3 = (F[4:] - 2 * F[3:-1] + 2 * F[1:-3] - F[:-4]) / (2 * h ** 3)
    return float(np.max(np.abs(d3 - 0.25 * y[2:-2] * F[2:-2])))


# ------------------------------------------------------------- convolution

def _kernel_offsets(h: float, t: float, n_nodes: int, tol: float) -> np.ndarray:
    tau = t ** 0.25
    y = np.arange(0, n_nodes) * h / tau
    Fk = np.zeros_like(y)
    near = y <= Y_CUT
    Fk[near] = fourier_kernel(y[near], 1, tol)
    return np.concatenate([Fk[:0:-1], Fk]) / tau  # offsets -(n-1) .. n-1


@functools.lru_cache(maxsize=1)
def _abs_kernel_cumulative():
    ymax = 80.0
    yy = np.linspace(0.0, ymax, 16001)
    absF = np.abs(fourier_kernel(yy, 1, 1e-14))
    dy = yy[1] - yy[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dy * (absF[1:] + absF[:-1]))])
    return yy, cum, ymax


def kernel_mass_outside(u0: Field, t: float) -> float:
    """|u0|-weighted fraction of |kernel| mass that lands outside the grid.

    For each data node z the mass of |F| beyond both domain ends,
    seen from z at time t, is averaged with weights |u0(z)|.
    """
    vals = np.abs(np.asarray(u0.values))
    total = float(vals.sum())
    if total == 0.0:
        return 0.0
    x = u0.x
    tau = t ** 0.25
    yy, cum, ymax = _abs_kernel_cumulative()
    whole = cum[-1]

    def tail(y):
        return whole - np.interp(np.clip(y, 0.0, ymax), yy, cum)

    out = tail((x - x[0]) / tau) + tail((x[-1] - x) / tau)
    return float(np.dot(vals, out) / (total * 2.0 * whole))


def biharmonic_solve(u0: Field, t: float, table: KernelTable | None = None,
                     mass_outside_tol: float = 1e-6, check_domain: bool = True) -> Field:
    """u(x, t) = t^(-1/4) int F((x - z) t^(-1/4)) u0(z) dz by a direct discrete sum.

    The kernel is evaluated at the exact grid offsets (no interpolation)
    with the table's quadrature tolerance.  Data outside the grid are taken
    as zero.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    tol = table.quadrature_tol if table is not None else 1e-13
    vals = np.asarray(u0.values)
    sup = u0.sup()
    if sup > 0 and max(abs(vals[0]), abs(vals[-1])) > 1e-12 * sup:
        warnings.warn("initial data do not decay at the domain ends; "
                      "convolution truncates them", TruncationWarning, stacklevel=2)
    if check_domain:
        out = kernel_mass_outside(u0, t)
        if out > mass_outside_tol:
            raise KernelDomainError(
                f"kernel mass {out:.3g} leaves the domain at t={t:g}; enlarge the grid")
    h = u0.grid.spacing
    K = _kernel_offsets(h, t, u0.grid.n_nodes, tol)
    full = np.convolve(vals, K, mode="full")
    n = u0.grid.n_nodes
    res = h * full[n - 1:2 * n - 1]
    return Field(u0.grid, res, u0.time + t)


def kernel_derivative_offsets(h: float, t: float, n_nodes: int, tol: float = 1e-13) -> np.ndarray:
    """d/dx b(x, t) at grid offsets: t^(-1/2) F'(x t^(-1/4)).

    F'(y) = -(1/pi) int xi exp(-xi^4) sin(xi y) dxi, computed by the same
    panel quadrature.
    """
    tau = t ** 0.25
    y = np.arange(0, n_nodes) * h / tau
    d = np.zeros_like(y)
    near = y <= Y_CUT
    d[near] = _derivative_quadrature(y[near], tol)
    return np.concatenate([-d[:0:-1], d]) / (tau * tau)


def _derivative_quadrature(y: np.ndarray, tol: float) -> np.ndarray:
    r = np.asarray(y, dtype=float)
    out = np.empty_like(r)
    base = 4 + 2 * np.ceil(XI_MAX * np.abs(r) / (2.0 * math.pi)).astype(int)
    panels = 2 ** np.ceil(np.log2(base)).astype(int)

    def quad(rr, p):
        edges = np.linspace(0.0, XI_MAX, p + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        xi = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
        w = (half[:, None] * _GL_W[None, :]).ravel() * xi * np.exp(-xi ** 4)
        return -(np.sin(rr[:, None] * xi[None, :]) @ w) / math.pi

    for p in np.unique(panels):
        idx = np.where(panels == p)[0]
        cur = quad(r[idx], int(p))
        nxt = quad(r[idx], 2 * int(p))
        if np.max(np.abs(nxt - cur)) > tol:
            nxt2 = quad(r[idx], 4 * int(p))
            if np.max(np.abs(nxt2 - nxt)) > tol:
                raise QuadratureError("derivative quadrature did not converge",
                                      float(np.max(np.abs(nxt2 - nxt))))
            nxt = nxt2
        out[idx] = nxt
    return out
