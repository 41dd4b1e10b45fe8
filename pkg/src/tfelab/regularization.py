"""Mobility families, the perturbation F_{n,eps} and eps(n) schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import Mobility, ModelParams

# n-ladder on which schedules are validated at construction
VALIDATION_LADDER = (1e-1, 1e-2, 1e-3, 1e-4)


def _check_finite(u) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if np.any(np.isnan(arr)):
        raise ValueError("NaN input to mobility")
    return arr


def _scalar_or_array(out: np.ndarray, like):
    return float(out) if np.ndim(like) == 0 else out


def mobility(u, params: ModelParams):
    """phi(u) for the family selected by ``params.mobility``.

    Works elementwise on arrays.  The degenerate family is evaluated as
    (u^2)^(n/2) with no floor, so it returns exactly 0 at u = 0.
    """
    arr = _check_finite(u)
    n, eps = params.n, params.epsilon
    fam = params.mobility
    if fam is Mobility.UNIT:
        out = np.ones_like(arr)
    elif fam is Mobility.DEGENERATE:
        out = (arr * arr) ** (0.5 * n)
    elif fam is Mobility.SIMPLE:
        out = (eps * eps + arr * arr) ** (0.5 * n)
    else:
        out = eps ** n + (1.0 - eps) * (eps * eps + arr * arr) ** (0.5 * n)
    return _scalar_or_array(out, u)


def mobility_derivative(u, params: ModelParams):
    """d phi / du, used by the Newton Jacobian."""
    arr = _check_finite(u)
    n, eps = params.n, params.epsilon
    fam = params.mobility
    if fam is Mobility.UNIT:
        out = np.zeros_like(arr)
    elif fam is Mobility.DEGENERATE:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(arr == 0.0, 0.0, n * arr * (arr * arr) ** (0.5 * n - 1.0))
    else:
        out = n * arr * (eps * eps + arr * arr) ** (0.5 * n - 1.0)
        if fam is Mobility.HOMOTOPY:
            out = (1.0 - eps) * out
    return _scalar_or_array(out, u)


def perturbation_F(u, eps: float, n: float):
    """F_{n,eps}(u) = 1 - (eps^2 + u^2)^(n/2)."""
    arr = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(arr)) and math.isfinite(eps) and math.isfinite(n)):
        raise ValueError("non-finite input")
    out = 1.0 - (eps * eps + arr * arr) ** (0.5 * n)
    return _scalar_or_array(out, u)


# ------------------------------------------------------------------ schedules

class ScheduleError(ValueError):
    """Raised when an eps(n) rule violates n |ln eps(n)| -> 0."""


@dataclass(frozen=True)
class Schedule:
    """A rule n -> eps(n) tying the regularization to the exponent.

    ``rule`` is one of ``"exp_inv_sqrt"`` (eps = exp(-1/sqrt(n))),
    ``"power"`` (eps = n**p) or ``"custom_table"`` (tabulated ln eps,
    interpolated as log|ln eps| linear in log n).  Construction checks
    numerically that n |ln eps(n)| decreases monotonically along
    ``VALIDATION_LADDER``.
    """

    rule: str = "exp_inv_sqrt"
    p: float = 1.0
    table_n: tuple = ()
    table_log_eps: tuple = ()
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if self.rule not in ("exp_inv_sqrt", "power", "custom_table"):
            raise ScheduleError(f"unknown schedule rule {self.rule!r}")
        if self.rule == "power" and not self.p > 0:
            raise ScheduleError("power schedule needs p > 0")
        if self.rule == "custom_table":
            if len(self.table_n) != len(self.table_log_eps) or len(self.table_n) < 2:
                raise ScheduleError("custom table needs at least two (n, eps) pairs")
            if any(not (v < 0) for v in self.table_log_eps):
                raise ScheduleError("tabulated eps must lie in (0, 1)")
            lo, hi = min(self.table_n), max(self.table_n)
            if lo > VALIDATION_LADDER[-1] or hi < VALIDATION_LADDER[0]:
                raise ScheduleError("custom table must cover n in [1e-4, 1e-1]")
        if not self.description:
            object.__setattr__(self, "description", self.key)
        products = [n * abs(self.log_epsilon(n)) for n in VALIDATION_LADDER]
        if not all(b < a for a, b in zip(products, products[1:])):
            raise ScheduleError(
                "n|ln eps(n)| does not decrease along the validation ladder: "
                + ", ".join(f"{v:.3g}" for v in products))

    @property
    def key(self) -> str:
        if self.rule == "exp_inv_sqrt":
            return "exp_inv_sqrt"
        if self.rule == "power":
            return f"power:{self.p!r}"
        return "table"

    @classmethod
    def exp_inv_sqrt(cls) -> "Schedule":
        return cls("exp_inv_sqrt")

    @classmethod
    def power(cls, p: float) -> "Schedule":
        return cls("power", p=float(p))

    @classmethod
    def table(cls, ns: Sequence[float], eps: Sequence[float] | None = None, *,
              log_eps: Sequence[float] | None = None) -> "Schedule":
        """Tabulated schedule from eps values or (to avoid underflow) ln eps."""
        if (eps is None) == (log_eps is None):
            raise ScheduleError("give exactly one of eps or log_eps")
        if log_eps is None:
            if any(not (0 < e < 1) for e in eps):
                raise ScheduleError("tabulated eps must lie in (0, 1)")
            log_eps = [math.log(e) for e in eps]
        order = np.argsort(ns)
        return cls("custom_table",
                   table_n=tuple(float(ns[i]) for i in order),
                   table_log_eps=tuple(float(log_eps[i]) for i in order))

    @classmethod
    def from_log_callable(cls, fn: Callable[[float], float],
                          ns: Sequence[float] = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5)) -> "Schedule":
        """Tabulate ``n -> ln eps(n)`` on ``ns``."""
        return cls.table(list(ns), log_eps=[fn(n) for n in ns])

    @classmethod
    def from_key(cls, key: str) -> "Schedule":
        """Parse ``exp_inv_sqrt``, ``power:<p>`` or ``table:<csv path>``.

        Table files have a header and columns ``n,eps`` or ``n,ln_eps``.
        """
        if key == "exp_inv_sqrt":
            return cls.exp_inv_sqrt()
        if key.startswith("power:"):
            return cls.power(float(key.split(":", 1)[1]))
        if key.startswith("table:"):
            path = Path(key.split(":", 1)[1])
            header = path.read_text().splitlines()[0].strip().split(",")
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            if header[1].strip() == "ln_eps":
                return cls.table(data[:, 0], log_eps=data[:, 1])
            return cls.table(data[:, 0], data[:, 1])
        raise ScheduleError(f"unknown schedule key {key!r}")

    def log_epsilon(self, n: float) -> float:
        if self.rule == "exp_inv_sqrt":
            return -1.0 / math.sqrt(n)
        if self.rule == "power":
            return self.p * math.log(n)
        x = np.log(self.table_n)
        y = np.log(-np.asarray(self.table_log_eps))
        return -math.exp(float(np.interp(math.log(n), x, y)))

    def __call__(self, n: float) -> float:
        return epsilon_of_n(self, n)


def epsilon_of_n(schedule: Schedule, n: float) -> float:
    if not (math.isfinite(n) and n > 0):
        raise ValueError(f"n must be positive, got {n}")
    if n > 1:
        raise ValueError(f"n must lie in (0, 1], got {n}")
    return math.exp(schedule.log_epsilon(n))


# ----------------------------------------------------------- log expansion

@dataclass(frozen=True)
class LogExpansionRow:
    n: float
    epsilon: float
    F: float
    leading: float  # -(n/2) ln(eps^2 + u^2)
    ratio: float  # F / leading, nan when leading == 0
    exact_match: bool  # eps^2 + u^2 == 1, both sides vanish

    @property
    def deviation(self) -> float:
        return 0.0 if self.exact_match else abs(self.ratio - 1.0)


def log_expansion_check(u: float, eps, n_sequence: Sequence[float]) -> list[LogExpansionRow]:
    """Ratio F_{n,eps}(u) / [-(n/2) ln(eps^2 + u^2)] along a decreasing n ladder.

    ``eps`` is a fixed float or a :class:`Schedule` giving eps per n.
    """
    ns = [float(v) for v in n_sequence]
    if any(v <= 0 for v in ns):
        raise ValueError("every n must be positive")
    if any(b >= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_sequence must be strictly decreasing")
    rows = []
    for n in ns:
        e = epsilon_of_n(eps, n) if isinstance(eps, Schedule) else float(eps)
        s = e * e + u * u
        if s == 1.0:
            F = perturbation_F(u, e, n)
            rows.append(LogExpansionRow(n, e, F, 0.0, math.nan, True))
            continue
        # -expm1 keeps F accurate when n ln s is tiny
        F = -math.expm1(0.5 * n * math.log(s))
        lead = -0.5 * n * math.log(s)
        rows.append(LogExpansionRow(n, e, F, lead, F / lead, False))
    return rows
