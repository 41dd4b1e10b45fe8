"""The oscillatory-interface ODE and its periodic orbits.

Near a generic interface, u(x) ~ x^mu phi(s) with s = ln x and mu = 3/n,
where phi solves the third-order autonomous equation

    phi''' + 3(mu-1) phi'' + (3mu^2 - 6mu + 2) phi' + mu(mu-1)(mu-2) phi
        + |phi|^(-n) phi = 0.

The singular term is evaluated as phi (phi^2 + zero_reg^2)^(-n/2).  The
periodic solution phi* is found by forward integration to the attracting
cycle (default) or by Newton shooting, and the heteroclinic scan tracks
its period as n grows toward the value where the cycle breaks.
"""
from __future__ import annotations

import concurrent.futures as cf
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize_scalar, root

from ._backend import get_kernels
from ._kernels_py import (ST_AMPLITUDE, ST_CROSSINGS_DONE, ST_MAX_STEPS, ST_SPAN_DONE,
                          ST_STEP_UNDERFLOW, eqlc_coefficients)
from .core import write_columns_csv

SQRT3 = math.sqrt(3.0)
# roots of 3 mu^2 - 6 mu + 2 = 0 and the corresponding exponent n = 3 / mu
MU_PLUS = (3.0 + SQRT3) / 3.0
MU_MINUS = (3.0 - SQRT3) / 3.0
N_PLUS = 9.0 / (3.0 + SQRT3)
# published value of the heteroclinic exponent, used only for comparisons
N_H_REFERENCE = 1.7587

_STATUS = {ST_SPAN_DONE: "span_done", ST_CROSSINGS_DONE: "crossings_done",
           ST_AMPLITUDE: "amplitude_cap", ST_STEP_UNDERFLOW: "step_underflow",
           ST_MAX_STEPS: "max_steps"}


def mu_of_n(n: float) -> float:
    return 3.0 / n


def quadratic_mu_roots() -> tuple[float, float]:
    """Roots of 3 mu^2 - 6 mu + 2 = 0 by the cancellation-free formula."""
    a, b, c = 3.0, -6.0, 2.0
    q = -0.5 * (b - math.sqrt(b * b - 4 * a * c))  # b < 0
    r1, r2 = q / a, c / q
    return max(r1, r2), min(r1, r2)


def linear_roots(n: float) -> tuple[float, float, float]:
    """Characteristic roots -mu, 1-mu, 2-mu of the linear part."""
    mu = mu_of_n(n)
    return -mu, 1.0 - mu, 2.0 - mu


def _check_n(n: float, hi: float = 3.0) -> None:
    if not (math.isfinite(n) and 0.0 < n < hi):
        raise ValueError(f"n must lie in (0, {hi:g}), got {n}")


def eqlc_rhs(state: Sequence[float], n: float, zero_reg: float = 0.0) -> np.ndarray:
    """(phi', phi'', phi''') for state (phi, phi', phi'')."""
    _check_n(n)
    if zero_reg < 0:
        raise ValueError("zero_reg must be nonnegative")
    p, dp, ddp = (float(v) for v in state)
    if p == 0.0 and zero_reg == 0.0 and n >= 1.0:
        raise ValueError("singular term |phi|^(-n) phi is undefined at phi = 0 for n >= 1; "
                         "pass zero_reg > 0")
    c2, c1, c0 = eqlc_coefficients(n)
    s = p * p + zero_reg * zero_reg
    sing = p * s ** (-0.5 * n) if s > 0.0 else 0.0
    return np.array([dp, ddp, -(c2 * ddp + c1 * dp + c0 * p + sing)])


@dataclass(frozen=True)
class EquilibriaReport:
    n: float
    values: tuple
    residual: float
    printed_formula_value: float | None  # [mu(mu-1)(2-mu)]^(+1/n), for the record


def equilibria_report(n: float) -> EquilibriaReport:
    """Nonzero constant solutions by a bracketed root solve on |phi|."""
    _check_n(n)
    mu = mu_of_n(n)
    c0 = mu * (mu - 1.0) * (mu - 2.0)
    if c0 >= 0.0:
        return EquilibriaReport(n, (), 0.0, None)

    def f(a):  # c0 + a^(-n); decreasing in a
        return c0 + a ** (-n)

    lo, hi = 1.0, 1.0
    while f(lo) <= 0:
        lo *= 0.5
    while f(hi) >= 0:
        hi *= 2.0
    a = brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    res = max(float(np.max(np.abs(eqlc_rhs((a, 0.0, 0.0), n)))),
              float(np.max(np.abs(eqlc_rhs((-a, 0.0, 0.0), n)))))
    if res >= 1e-12:
        raise ArithmeticError(f"equilibrium residual {res:.3g} exceeds 1e-12")
    printed = (mu * (mu - 1.0) * (2.0 - mu)) ** (1.0 / n)
    return EquilibriaReport(n, (-a, a), res, printed)


def equilibria(n: float) -> tuple:
    """(-a, a) with a = [mu(mu-1)(2-mu)]^(-1/n), or () when mu is outside (1, 2)."""
    return equilibria_report(n).values


# -------------------------------------------------------------- orbit type

@dataclass
class OrbitResult:
    """One period of phi* sampled uniformly.

    ``samples`` has columns (s, phi, phi', phi''); s runs from 0 to
    ``period`` inclusive and s = 0 lies a quarter period after an upward
    zero crossing (``method_meta["crossing_offset"]``).
    """

    n: float
    period: float
    samples: np.ndarray
    amplitude: float
    converged: bool
    method_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, 4)
        self._spline = None

    @property
    def mu(self) -> float:
        return mu_of_n(self.n)

    def closure_error(self) -> float:
        """|state(period) - state(0)| relative to the per-component sample scale."""
        if self.samples.shape[0] < 2:
            return math.inf
        scale = np.max(np.abs(self.samples[:, 1:]), axis=0)
        d = np.abs(self.samples[-1, 1:] - self.samples[0, 1:]) / np.where(scale > 0, scale, 1.0)
        return float(np.max(d))

    def _interp(self):
        if not self.converged:
            raise ValueError("orbit did not converge; phi* is unavailable")
        if self._spline is None:
            s = self.samples[:, 0]
            self._spline = CubicHermiteSpline(s, self.samples[:, 1], self.samples[:, 2])
        return self._spline

    def phi(self, s):
        """Periodic extension of phi*(s), cubic Hermite between samples."""
        sp = self._interp()
        return sp(np.mod(np.asarray(s, dtype=float), self.period))

    def dphi(self, s):
        sp = self._interp()
        return sp.derivative()(np.mod(np.asarray(s, dtype=float), self.period))

    def reflected(self) -> "OrbitResult":
        """(phi, phi', phi'') -> -(phi, phi', phi''), again a solution."""
        smp = self.samples.copy()
        smp[:, 1:] *= -1.0
        return OrbitResult(self.n, self.period, smp, self.amplitude, self.converged,
                           dict(self.method_meta, reflected=True))

    def to_csv(self, path) -> None:
        write_columns_csv(path, ["s", "phi", "dphi", "ddphi"], self.samples.T)

    def summary(self) -> dict:
        return {"n": self.n, "mu": self.mu, "period": self.period,
                "amplitude": self.amplitude, "converged": self.converged,
                "closure_error": self.closure_error() if self.samples.size else None,
                **{k: v for k, v in self.method_meta.items() if not isinstance(v, np.ndarray)}}


# ---------------------------------------------------------------- integrate

_RTOL, _ATOL = 1e-11, 1e-13


def _run(y0, n, zero_reg, s_span, *, max_crossings=0, sample_ds=0.0, amp_cap=1e6,
         max_steps=10 ** 8, backend=None, rtol=_RTOL, atol=_ATOL):
    k = get_kernels(backend)
    return k.eqlc_run(np.asarray(y0, dtype=float), float(n), float(zero_reg), float(s_span),
                      float(rtol), float(atol), 1e-3, int(max_steps), float(amp_cap),
                      int(max_crossings), float(sample_ds))


def _sample_period(y_c, n, zero_reg, period, m, backend=None):
    """Samples at s = k period / m, k = 0..m, starting at the crossing state y_c.

    Each sample is the integrator state at the end of its own segment
    (no dense-output interpolation), which keeps samples accurate next
    to the sharp regularized spike at phi = 0.
    """
    ds = period / m
    out = np.empty((m + 1, 4))
    y = np.asarray(y_c, dtype=float)
    out[0] = (0.0, *y)
    for k in range(1, m + 1):
        y, *_ = _run(y, n, zero_reg, ds, backend=backend)
        out[k] = (k * ds, *y)
    out[-1, 0] = period
    return out


def _return_period(y_c, n, zero_reg, backend=None, s_max=1e4):
    """Time of the next upward crossing of phi = 0, starting on the section."""
    _, _, st, cr, _, _ = _run(y_c, n, zero_reg, s_max, max_crossings=1, backend=backend)
    if cr.shape[0] == 0:
        return None, st
    return float(cr[0, 0]), st


def _quarter_shift(y_c, n, zero_reg, period, backend):
    """Advance a section state by a quarter period.

    At phi = 0 the regularized term gives phi'' a steep cusp, so a state
    taken exactly on the section is poorly conditioned; sampling starts
    away from it.
    """
    y, *_ = _run(y_c, n, zero_reg, 0.25 * period, backend=backend)
    return y


def orbit_residual(orbit: OrbitResult, backend=None) -> float:
    """Max one-sample defect against an independent, tighter integration.

    Each sample is flowed over one sample interval with tolerances 100
    times tighter than those that produced the samples and compared with
    the next sample, normalized by the per-component amplitude.
    """
    smp = orbit.samples
    zr = orbit.method_meta.get("zero_reg", 0.0)
    scale = np.max(np.abs(smp[:, 1:]), axis=0)
    worst = 0.0
    for k in range(smp.shape[0] - 1):
        ds = smp[k + 1, 0] - smp[k, 0]
        y, *_ = _run(smp[k, 1:], orbit.n, zr, ds, backend=backend,
                     rtol=_RTOL * 1e-2, atol=_ATOL * 1e-2)
        worst = max(worst, float(np.max(np.abs(y - smp[k + 1, 1:]) / scale)))
    return worst


def find_periodic_orbit(n: float, method: str = "forward_attractor", *, y0=None,
                        tol: float = 1e-6, s_budget: float = 2e4,
                        samples_per_period: int = 512, zero_reg_rel: float = 1e-8,
                        amp_cap: float = 1e6, chunk_crossings: int = 40,
                        guess: OrbitResult | None = None, backend=None) -> OrbitResult:
    """Compute phi* for exponent n; never raises on non-convergence.

    ``forward_attractor`` integrates from ``y0`` (default (1e-3, 0, 0))
    until two successive returns to the section phi = 0, phi' > 0 agree
    to ``tol`` in (phi', phi'') and in return time.  ``shooting`` solves
    y(T; 0, a, b) = (0, a, b) for (a, b, T) by a Powell hybrid Newton
    method, starting from ``guess`` or from a loosely converged forward
    run.  zero_reg is ``zero_reg_rel`` times the running amplitude for
    n >= 1 and 0 otherwise.
    """
    _check_n(n, 2.2)
    if method not in ("forward_attractor", "shooting"):
        raise ValueError(f"unknown method {method!r}")
    if method == "shooting":
        return _shooting(n, tol=tol, samples_per_period=samples_per_period,
                         zero_reg_rel=zero_reg_rel, amp_cap=amp_cap, guess=guess,
                         s_budget=s_budget, backend=backend)
    y = np.array([1e-3, 0.0, 0.0] if y0 is None else y0, dtype=float)
    amp = float(np.max(np.abs(y)))
    s_used = 0.0
    returns: list[tuple[float, float, float]] = []  # absolute s, phi', phi''
    meta: dict = {"method": method, "tol": tol, "y0": [float(v) for v in y]}
    status = "budget_exhausted"
    zero_reg = 0.0
    boost = 1.0
    while s_used < s_budget:
        zero_reg = boost * zero_reg_rel * amp if n >= 1.0 else 0.0
        y_end, s_end, st, cr, smp, _ = _run(
            y, n, zero_reg, s_budget - s_used, max_crossings=chunk_crossings,
            sample_ds=0.02, amp_cap=amp_cap, backend=backend)
        if st == ST_STEP_UNDERFLOW and n >= 1.0 and boost < 1e3:
            # the regularized spike at phi = 0 is too sharp while the
            # amplitude is still far below its final size; redo the chunk
            boost *= 10.0
            continue
        boost = 1.0
        if smp.shape[0]:
            amp = max(float(np.max(np.abs(smp[:, 1]))), 1e-300)
        for row in cr:
            returns.append((s_used + row[0], row[1], row[2]))
        s_used += s_end
        y = y_end
        if st == ST_AMPLITUDE:
            status = "escaped"
            break
        if st in (ST_STEP_UNDERFLOW, ST_MAX_STEPS):
            status = _STATUS[st]
            break
        if len(returns) >= 3:
            (s0, a0, b0), (s1, a1, b1), (s2, a2, b2) = returns[-3:]
            T1, T2 = s1 - s0, s2 - s1
            d = max(abs(a2 - a1) / abs(a2), abs(b2 - b1) / max(abs(b2), abs(a2)),
                    abs(T2 - T1) / T2)
            if d <= tol:
                status = "converged"
                break
        if cr.shape[0] == 0 and st == ST_SPAN_DONE:
            break
    meta.update(status=status, s_integrated=s_used, n_returns=len(returns),
                zero_reg=zero_reg)
    eq = equilibria(n)
    if status != "converged":
        if eq and np.allclose(np.abs(y[0]), eq[1], rtol=1e-3) and abs(y[1]) < 1e-3:
            meta["status"] = "equilibrium"
        return OrbitResult(n, math.nan, np.empty((0, 4)), float(np.max(np.abs(y))), False, meta)
    y_c = np.array([0.0, returns[-1][1], returns[-1][2]])
    return _finish_orbit(n, y_c, zero_reg, samples_per_period, tol, meta, backend)


def _finish_orbit(n, y_c, zero_reg, m, tol, meta, backend):
    period, st = _return_period(y_c, n, zero_reg, backend)
    if period is None:
        meta["status"] = "no_return"
        return OrbitResult(n, math.nan, np.empty((0, 4)), math.nan, False, meta)
    smp = _sample_period(_quarter_shift(y_c, n, zero_reg, period, backend),
                         n, zero_reg, period, m, backend)
    amp = float(np.max(np.abs(smp[:, 1])))
    meta["crossing_offset"] = 0.25 * period
    meta["section_state"] = [float(v) for v in y_c]
    orb = OrbitResult(n, period, smp, amp, True, meta)
    ce = orb.closure_error()
    meta["closure_error"] = ce
    orb.converged = bool(ce <= max(tol, 1e-6))
    if not orb.converged:
        meta["status"] = "closure_failed"
    return orb


def _shooting(n, *, tol, samples_per_period, zero_reg_rel, amp_cap, guess, s_budget, backend):
    if guess is None or not guess.converged:
        guess = find_periodic_orbit(n, "forward_attractor", tol=1e-3, s_budget=s_budget,
                                    samples_per_period=64, zero_reg_rel=zero_reg_rel,
                                    amp_cap=amp_cap, backend=backend)
        if not guess.converged:
            meta = dict(guess.method_meta, method="shooting", status="no_initial_guess")
            return OrbitResult(n, math.nan, np.empty((0, 4)), math.nan, False, meta)
    zero_reg = zero_reg_rel * guess.amplitude if n >= 1.0 else 0.0
    _, a0, b0 = guess.method_meta["section_state"]
    T0 = guess.period
    sc = np.array([abs(a0), max(abs(b0), abs(a0)), T0])

    def G(z):
        a, b, T = z * sc
        if not T > 0.5 * T0:  # exclude the trivial fixed point T = 0
            return np.full(3, 1e3)
        y, s_end, st, *_ = _run((0.0, a, b), n, zero_reg, T, amp_cap=amp_cap, backend=backend)
        if st == ST_AMPLITUDE:
            return np.full(3, 1e3)
        return (y - np.array([0.0, a, b])) / sc

    sol = root(G, np.ones(3), method="hybr", options={"xtol": 1e-12})
    a, b, T = sol.x * sc
    resid = float(np.max(np.abs(sol.fun)))
    # hybr may stop on lack of progress once the residual reaches the
    # integration noise floor; accept such points and let closure decide
    ok = bool(sol.success) or resid <= 1e-7
    meta = {"method": "shooting", "tol": tol, "zero_reg": zero_reg,
            "newton_success": bool(sol.success), "newton_residual": resid,
            "nfev": int(sol.nfev), "status": "converged" if ok else "newton_failed"}
    if not ok:
        return OrbitResult(n, math.nan, np.empty((0, 4)), math.nan, False, meta)
    smp = _sample_period(_quarter_shift(np.array([0.0, a, b]), n, zero_reg, T, backend),
                         n, zero_reg, T, samples_per_period, backend)
    meta["crossing_offset"] = 0.25 * T
    meta["section_state"] = [0.0, float(a), float(b)]
    orb = OrbitResult(n, float(T), smp, float(np.max(np.abs(smp[:, 1]))), True, meta)
    meta["closure_error"] = orb.closure_error()
    orb.converged = bool(meta["closure_error"] <= max(tol, 1e-6))
    return orb


# ------------------------------------------------------------ heteroclinic scan

@dataclass
class ScanResult:
    n_h_estimate: float
    bracket: tuple  # (last converged n, first failed n); either may be None
    fit: dict | None
    period_table: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n_h_estimate": self.n_h_estimate, "bracket": list(self.bracket),
                "fit": self.fit, "period_table": self.period_table,
                "reference_n_h": N_H_REFERENCE}


def _orbit_row(n: float, method: str, backend) -> dict:
    orb = find_periodic_orbit(n, method, samples_per_period=64, backend=backend)
    return {"n": n, "converged": orb.converged,
            "period": orb.period if orb.converged else None,
            "amplitude": orb.amplitude if orb.converged else None,
            "status": orb.method_meta.get("status")}


def fit_period_divergence(ns: Sequence[float], periods: Sequence[float],
                          n_lower: float, n_upper: float) -> dict:
    """Fit T = A - B ln(n_h - n) with n_h in (n_lower, n_upper].

    For each trial n_h the model is linear in (A, B); n_h minimizes the
    residual sum of squares.
    """
    ns = np.asarray(ns, float)
    T = np.asarray(periods, float)

    def rss(nh):
        X = np.column_stack([np.ones_like(ns), -np.log(nh - ns)])
        coef, *_ = np.linalg.lstsq(X, T, rcond=None)
        return float(np.sum((X @ coef - T) ** 2)), coef

    lo = n_lower + 1e-9 * max(1.0, abs(n_lower))
    res = minimize_scalar(lambda v: rss(v)[0], bounds=(lo, n_upper), method="bounded",
                          options={"xatol": 1e-10})
    r, coef = rss(res.x)
    ss_tot = float(np.sum((T - T.mean()) ** 2))
    return {"n_h": float(res.x), "A": float(coef[0]), "B": float(coef[1]),
            "r2": 1.0 - r / ss_tot if ss_tot > 0 else 1.0, "points": int(ns.size)}


def heteroclinic_scan(n_range: tuple = (1.6, 1.9), steps: int = 12,
                      method: str = "forward_attractor", workers: int = 1,
                      refine: int = 0, fit_points: int = 5, backend=None) -> ScanResult:
    """Track the period of phi* across n_range and locate where the cycle is lost.

    ``steps`` equally spaced exponents are tried.  The bracket is
    [last converged n before the first failure, first failure]; ``refine``
    extra bisections shrink it.  With at least four converged orbits the
    period is fitted against -ln(n_h - n) using the ``fit_points`` largest
    converged exponents.
    """
    lo, hi = float(n_range[0]), float(n_range[1])
    if not (1.5 < lo < hi < 2.0):
        raise ValueError("n_range must satisfy 1.5 < lo < hi < 2.0")
    if steps < 8:
        raise ValueError("steps must be at least 8")
    ns = [float(v) for v in np.linspace(lo, hi, steps)]
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_orbit_row, ns, [method] * len(ns), [backend] * len(ns)))
    else:
        rows = [_orbit_row(n, method, backend) for n in ns]
    first_fail = next((i for i, r in enumerate(rows) if not r["converged"]), None)
    if first_fail is None:
        bracket = (ns[-1], None)
    elif first_fail == 0:
        bracket = (None, ns[0])
    else:
        bracket = (ns[first_fail - 1], ns[first_fail])
    if refine and bracket[0] is not None and bracket[1] is not None:
        a, b = bracket
        for _ in range(refine):
            mid = 0.5 * (a + b)
            r = _orbit_row(mid, method, backend)
            rows.append(r)
            if r["converged"]:
                a = mid
            else:
                b = mid
        bracket = (a, b)
    rows.sort(key=lambda r: r["n"])
    conv = [r for r in rows if r["converged"] and (bracket[0] is None or r["n"] <= bracket[0])]
    fit = None
    if len(conv) >= 4 and bracket[0] is not None:
        use = conv[-fit_points:]
        upper = bracket[1] if bracket[1] is not None else bracket[0] + 0.5
        fit = fit_period_divergence([r["n"] for r in use], [r["period"] for r in use],
                                    bracket[0], upper + 0.5 * (upper - bracket[0]))
    if fit is not None:
        est = fit["n_h"]
    elif bracket[0] is not None and bracket[1] is not None:
        est = 0.5 * (bracket[0] + bracket[1])
    else:
        est = math.nan
    return ScanResult(est, bracket, fit, rows)
