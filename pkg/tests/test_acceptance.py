"""Exit criteria.  Each test prints one ``CRITERION k PASS|FAIL: ...`` line.

Criteria that map onto a subcommand run through the CLI so that their
manifests can be re-run by the determinism criterion.  Tolerances are
pinned in the module constants below.
"""
import json
import math
import time

import mpmath as mp
import numpy as np
import pytest

from tfelab import cli
from tfelab.biharmonic import biharmonic_solve, kernel_1d, kernel_residual
from tfelab.core import (Field, ModelParams, Mobility, SmoothBump, discrete_mass, make_grid,
                         sample_initial_data)
from tfelab.diagnostics import (TestFunction, energy_identity_residual, gradient_energy,
                                loglog_slope, weak_form_residual)
from tfelab.interface_ode import N_PLUS, quadratic_mu_roots
from tfelab.solver import SolverConfig, fixed_step_simulate, simulate

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

WORKERS = 4

# criterion 1
N_H_WINDOW = (1.70, 1.82)
SCAN_BUDGET_S = 600.0
# criterion 2
CONST_TOL = 1e-10
# criterion 3
KERNEL_NORM_TOL = 1e-8
KERNEL_F0_TOL = 1e-6
MIN_SIGN_CHANGES = 3
ENVELOPE_P_TOL = 0.05
ENVELOPE_R2 = 0.99
KERNEL_ORDER_MIN = 1.8
KERNEL_BUDGET_S = 60.0
# criterion 4
DECAY_TOL = 1e-4
CONV_ORDER_MIN = 1.8
SOLVER_BUDGET_S = 120.0
# criterion 5
MASS_TOL = 1e-12
ENERGY_ORDER = (0.8, 1.2)
MONOTONE_TOL = 1e-10
N_RANDOM_BUMPS = 50
# criterion 6
ERR0_FINAL_OVER_FIRST = 0.3
STAGNATION_LEVEL = 0.25
HOMOTOPY_BUDGET_S = 1800.0
# criterion 7
EPS_SLOPE = (0.8, 1.2)
BAD_SET_MIN = 1.0 / 2 - 0.1
# criterion 8
BLOWUP_EXPONENT_REL = 0.3
INTERFACE_RATIO_MAX = 3.0

RUNS = {
    "scan": ("scan", {"n_min": 1.6, "n_max": 1.9, "steps": 12}),
    "kernel": ("kernel", {"grid.y_max": 40.0, "grid.n_cells": 8000}),
    "homotopy": ("homotopy", {}),
    "branching": ("branching", {}),
    "branching_fixed": ("branching", {"fixed_epsilon": 1e-2}),
    "blowup": ("riemann", {"mode": "blowup", "n": 1.0, "chi_plus": 1.0, "chi_minus": 1.0}),
    "interface": ("riemann", {"mode": "interface", "n": 1.0, "grid.n_cells": 400,
                              "eps_ladder": [1e-1, 1e-2, 1e-3], "t_final": 0.1}),
}
for _mob in ("degenerate", "simple", "homotopy", "unit"):
    RUNS[f"mass_{_mob}"] = ("simulate", {"model.mobility": _mob, "model.n": 1.0,
                                         "model.epsilon": 0.05, "t_final": 0.01,
                                         "store_every_step": True})


def _report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    done = {}

    def get(name):
        if name not in done:
            sub, cfg = RUNS[name]
            t0 = time.perf_counter()
            outcome = cli.run(sub, cfg, root / name, WORKERS)
            assert outcome.exit_code == 0, outcome.message
            done[name] = (root / name, outcome.manifest, time.perf_counter() - t0)
        return done[name]

    return get


def _ladder_order(errs):
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])]


# ----------------------------------------------------------------- 1

def test_criterion_1_heteroclinic_bracket(cli_run, capsys):
    _, m, wall = cli_run("scan")
    lo, hi = m.results["bracket"]
    est = m.results["n_h_estimate"]
    ok = (lo is not None and hi is not None and N_H_WINDOW[0] <= lo < hi <= N_H_WINDOW[1]
          and lo <= est <= hi and wall <= SCAN_BUDGET_S)
    _report(capsys, 1, ok, f"bracket=({lo}, {hi}) n_h~{est:.4f} in {N_H_WINDOW}, {wall:.1f}s")


# ----------------------------------------------------------------- 2

def test_criterion_2_constants(capsys):
    mp.mp.dps = 40
    s3 = mp.sqrt(3)
    mu_p, mu_m = quadratic_mu_roots()
    d_mu = max(abs(mu_p - float((3 + s3) / 3)), abs(mu_m - float((3 - s3) / 3)))
    n_plus_oracle = float(9 / (3 + s3))
    d_n = max(abs(3.0 / mu_p - n_plus_oracle), abs(N_PLUS - n_plus_oracle))
    resid = max(abs(3 * m * m - 6 * m + 2) for m in (mu_p, mu_m))
    ok = d_mu <= CONST_TOL and d_n <= CONST_TOL and resid <= CONST_TOL
    _report(capsys, 2, ok, f"mu+={mu_p:.12f} mu-={mu_m:.12f} n+={3 / mu_p:.12f} "
                           f"(errors {d_mu:.1e}, {d_n:.1e}; quadratic residual {resid:.1e})")


# ----------------------------------------------------------------- 3

def test_criterion_3_kernel_suite(cli_run, capsys):
    t0 = time.perf_counter()
    out, m, _ = cli_run("kernel")
    side = json.loads((out / "kernel.json").read_text())
    f0_ref = float(mp.gamma(mp.mpf(5) / 4) / mp.pi)
    d_norm = abs(side["normalization"] - 1.0)
    d_f0 = abs(side["F0"] - f0_ref)
    sc = side["sign_changes_abs_y_le_10"]
    free = side["envelope_exponent"]
    fixed_r2 = side["envelope"]["r2"]
    res = [kernel_residual(kernel_1d(make_grid(-40.0, 40.0, n))) for n in (400, 800, 1600)]
    orders = _ladder_order(res)
    wall = time.perf_counter() - t0
    ok = (d_norm <= KERNEL_NORM_TOL and d_f0 <= KERNEL_F0_TOL and sc >= MIN_SIGN_CHANGES
          and abs(free["p"] - 4.0 / 3.0) <= ENVELOPE_P_TOL and free["r2"] >= ENVELOPE_R2
          and fixed_r2 >= ENVELOPE_R2 and min(orders) >= KERNEL_ORDER_MIN
          and wall <= KERNEL_BUDGET_S)
    _report(capsys, 3, ok,
            f"|intF-1|={d_norm:.1e} |F0-G(5/4)/pi|={d_f0:.1e} sign changes={sc} "
            f"envelope p={free['p']:.4f} (R2={free['r2']:.6f}, fixed-4/3 R2={fixed_r2:.6f}) "
            f"residual orders={[round(o, 2) for o in orders]} {wall:.1f}s")


# ----------------------------------------------------------------- 4

def test_criterion_4_solver_exactness(capsys):
    t0 = time.perf_counter()
    unit = ModelParams(1.0, 0.0, Mobility.UNIT)
    decay_err = []
    for n_cells, n_steps in ((32, 50), (64, 100), (128, 200)):
        g = make_grid(0.0, 2 * math.pi, n_cells)
        traj = fixed_step_simulate(Field(g, np.sin(g.nodes)), unit, 0.1, n_steps,
                                   SolverConfig(boundary="periodic", theta=0.5))
        decay_err.append(abs(float(np.max(np.abs(traj.final.values))) - math.exp(-0.1)))
    conv_err = []
    for n_cells in (150, 300, 600):
        g = make_grid(-30.0, 30.0, n_cells)
        u0 = sample_initial_data(SmoothBump(0.0, 2.0, 1.0), g)
        traj = fixed_step_simulate(u0, unit, 1.0, 400, SolverConfig(theta=0.5))
        conv_err.append(float(np.max(np.abs(traj.final.values - biharmonic_solve(u0, 1.0).values))))
    orders = _ladder_order(conv_err)
    wall = time.perf_counter() - t0
    ok = (decay_err[-1] <= DECAY_TOL and decay_err[-1] < decay_err[0]
          and min(orders) >= CONV_ORDER_MIN and wall <= SOLVER_BUDGET_S)
    _report(capsys, 4, ok, f"sin decay errors={[f'{e:.1e}' for e in decay_err]} "
                           f"convolution errors={[f'{e:.1e}' for e in conv_err]} "
                           f"orders={[round(o, 2) for o in orders]} {wall:.1f}s")


# ----------------------------------------------------------------- 5

def _mass_steps(out):
    data = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    times = np.unique(data[:, 0])
    masses = []
    for t in times:
        rows = data[data[:, 0] == t]
        masses.append(discrete_mass(rows[:, 2], rows[1, 1] - rows[0, 1]))
    masses = np.array(masses)
    return float(np.max(np.abs(np.diff(masses)))), float(np.max(np.abs(masses))), len(times) - 1


def test_criterion_5_conservation(cli_run, capsys, rng):
    mass = {}
    for mob in ("degenerate", "simple", "homotopy", "unit"):
        out, _, _ = cli_run(f"mass_{mob}")
        jump, scale, steps = _mass_steps(out)
        mass[mob] = (jump / max(1.0, scale), steps)
    mass_ok = all(v <= MASS_TOL and s > 0 for v, s in mass.values())

    g = make_grid(-6.0, 6.0, 120)
    params = ModelParams(1.0, 0.1)
    u0 = sample_initial_data(SmoothBump(0.0, 2.0, 1.0), g)
    res = [energy_identity_residual(fixed_step_simulate(u0, params, 0.05, k, SolverConfig(),
                                                        store_every_step=True), params)
           for k in (200, 400, 800)]
    e_orders = _ladder_order(res)
    energy_ok = all(ENERGY_ORDER[0] <= o <= ENERGY_ORDER[1] for o in e_orders)

    g = make_grid(-6.0, 6.0, 96)
    simple = ModelParams(1.0, 0.05, Mobility.SIMPLE)
    violations = 0
    for _ in range(N_RANDOM_BUMPS):
        b = SmoothBump(rng.uniform(-1, 1), rng.uniform(1, 3), rng.uniform(0.2, 2))
        traj = simulate(sample_initial_data(b, g), simple, 0.01,
                        SolverConfig(dt_initial=1e-4, theta=1.0), store_every_step=True)
        E = np.array([gradient_energy(s) for s in traj.snapshots])
        violations += int(np.count_nonzero(np.diff(E) > MONOTONE_TOL))
    ok = mass_ok and energy_ok and violations == 0
    _report(capsys, 5, ok,
            "max per-step mass change " + ", ".join(f"{k}={v:.1e}" for k, (v, _) in mass.items())
            + f"; energy identity residual orders={[round(o, 2) for o in e_orders]}"
            + f"; monotonicity violations={violations}/{N_RANDOM_BUMPS} bumps")


# ----------------------------------------------------------------- 6

def _zero_intercept(ns, ratios):
    """Value at n = 0 of the line through the two smallest-n ratios."""
    (n1, r1), (n2, r2) = sorted(zip(ns, ratios))[:2]
    return r1 - n1 * (r2 - r1) / (n2 - n1)


def test_criterion_6_homotopy(cli_run, capsys):
    t0 = time.perf_counter()
    _, h, _ = cli_run("homotopy")
    _, b, _ = cli_run("branching")
    _, c, _ = cli_run("branching_fixed")
    wall = time.perf_counter() - t0
    ns = h.config["n_ladder"]
    err0 = h.results["err0"]
    ratio, ctrl = b.results["ratio"], c.results["ratio"]
    stag_sched = _zero_intercept(ns, ratio) / min(ratio)
    stag_ctrl = _zero_intercept(ns, ctrl) / min(ctrl)
    ok = (h.results["err0_strictly_decreasing"] and err0[-1] / err0[0] < ERR0_FINAL_OVER_FIRST
          and b.results["ratio_strictly_decreasing"]
          and abs(stag_sched) < STAGNATION_LEVEL <= stag_ctrl and wall <= HOMOTOPY_BUDGET_S)
    _report(capsys, 6, ok,
            f"err0={[f'{e:.2e}' for e in err0]} final/first={err0[-1] / err0[0]:.3f}; "
            f"err1/n={[f'{r:.2e}' for r in ratio]}; n->0 intercept/last ratio: "
            f"schedule={stag_sched:.3f} fixed-eps control={stag_ctrl:.3f}; {wall:.1f}s")


# ----------------------------------------------------------------- 7

def test_criterion_7_weak_form_rates(capsys):
    g = make_grid(-10.0, 10.0, 400)
    u0 = Field(g, np.sin(2 * g.nodes) * sample_initial_data(SmoothBump(0.0, 5.0, 1.0), g).values)
    T = 0.05
    tf = TestFunction("bump_product", 0.7, 3.0, T / 2, T / 2)
    cfg = SolverConfig(theta=1.0)
    eps = [0.2, 0.1, 0.05, 0.025, 0.0125]
    eps_terms = []
    for e in eps:
        p = ModelParams(1.0, e, Mobility.HOMOTOPY)
        traj = fixed_step_simulate(u0, p, T, 200, cfg, store_every_step=True)
        eps_terms.append(weak_form_residual(traj, p, tf).eps_term)
    slope = loglog_slope(eps, eps_terms)
    p = ModelParams(1.0, 1e-3, Mobility.HOMOTOPY)
    traj = fixed_step_simulate(u0, p, T, 200, cfg, store_every_step=True)
    deltas = [0.2, 0.1, 0.05, 0.025]
    bad = [weak_form_residual(traj, p, tf, delta=d).bad_set_term for d in deltas]
    expo = loglog_slope(deltas, bad)
    ok = EPS_SLOPE[0] <= slope <= EPS_SLOPE[1] and expo >= BAD_SET_MIN
    _report(capsys, 7, ok, f"eps-term slope={slope:.3f} (want 1 +/- 0.2); "
                           f"bad-set exponent={expo:.3f} (want >= {BAD_SET_MIN:.2f})")


# ----------------------------------------------------------------- 8

def test_criterion_8_riemann_dichotomy(cli_run, capsys):
    out_b, mb, _ = cli_run("blowup")
    _, mi, _ = cli_run("interface")
    rb = mb.results
    blow_ok = bool(rb["blew_up"]) and rb["exponent_fit"] is not None \
        and abs(rb["exponent_fit"] - 1.0) <= BLOWUP_EXPONENT_REL
    ri = mi.results
    iface_ok = ri["sup_ratio"] is not None and ri["sup_ratio"] < INTERFACE_RATIO_MAX \
        and ri["blow_up_flags"] == 0
    meta = json.loads((out_b / "blowup.json").read_text())["meta"]
    _report(capsys, 8, blow_ok and iface_ok,
            f"blow-up flagged={rb['blew_up']} exponent={rb['exponent_fit']} "
            f"(max sup {meta['max_sup']:.3g} of ceiling {meta['ceiling']:.3g}, "
            f"edge-dominated={rb['unreliable']}); interface window sups="
            f"{[f'{s:.3g}' for s in ri['window_sup']]} ratio={ri['sup_ratio']:.3f} "
            f"flags={ri['blow_up_flags']}")


# ----------------------------------------------------------------- 9

def test_criterion_9_determinism(cli_run, capsys):
    status = {}
    for name in RUNS:
        out, _, _ = cli_run(name)
        rep = cli.reproduce(out / "manifest.json", WORKERS)
        status[name] = (rep["status"], rep.get("csv_byte_identical", False))
    ok = all(s == "all_match" and byte for s, byte in status.values())
    bad = {k: v for k, v in status.items() if v != ("all_match", True)}
    _report(capsys, 9, ok, f"{len(status)} manifests reproduced byte-identically"
            if ok else f"divergent manifests: {bad}")
