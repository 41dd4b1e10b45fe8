import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfelab.biharmonic import biharmonic_solve
from tfelab.core import (Field, ModelParams, Mobility, SmoothBump, Trajectory, interface_profile,
                         make_grid, sample_initial_data)
from tfelab.diagnostics import (TestFunction, count_sign_changes, energy_history,
                                energy_identity_residual, energy_report, gradient_energy,
                                loglog_slope, oscillation_profile, weak_form_residual,
                                write_energy_ledger, write_weak_form_ledger)
from tfelab.solver import SolverConfig, fixed_step_simulate, simulate

UNIT = ModelParams(1.0, 0.0, Mobility.UNIT)


def test_gradient_energy_of_sine():
    g = make_grid(0, 2 * math.pi, 2000)
    assert gradient_energy(Field(g, np.sin(g.nodes))) == pytest.approx(math.pi / 2, rel=1e-6)


def test_zero_field_report_is_zero():
    g = make_grid(-1, 1, 20)
    r = energy_report(Field(g, np.zeros(21)), ModelParams(1.0, 0.1))
    assert r.to_row() == [0.0, 0.0, 0.0, 0.0, 0.0]


def test_energy_identity_first_order_in_dt():
    g = make_grid(-6, 6, 120)
    params = ModelParams(1.0, 0.1)
    u0 = sample_initial_data(SmoothBump(0, 2, 1), g)
    res = []
    for n_steps in (50, 100, 200):
        traj = fixed_step_simulate(u0, params, 0.05, n_steps, SolverConfig(),
                                   store_every_step=True)
        res.append(energy_identity_residual(traj, params))
    assert res[0] / res[1] == pytest.approx(2, rel=0.15)
    assert res[1] / res[2] == pytest.approx(2, rel=0.15)
    E0 = gradient_energy(u0)
    assert res[-1] < 1e-2 * E0


def test_energy_history_checks_params(bump_field):
    traj = simulate(bump_field, ModelParams(1.0, 0.1), 0.001)
    with pytest.raises(ValueError):
        energy_history(traj, ModelParams(2.0, 0.1))


def test_energy_ledger_format(tmp_path, bump_field):
    params = ModelParams(1.0, 0.1)
    traj = simulate(bump_field, params, 0.001)
    write_energy_ledger(energy_history(traj, params), tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "t,mass,grad_energy,dissipation,flux_norm"
    assert len(lines) == 1 + len(traj)


@given(st.sampled_from(["bump_product", "sine_packet"]), st.floats(-0.9, 0.9), st.floats(0.2, 0.8))
def test_test_function_derivatives(kind, x, t):
    tf = TestFunction(kind, 0.1, 1.2, 0.5, 0.45, 2.0)
    d = 1e-6
    assert tf.dx(x, t) == pytest.approx((tf(x + d, t) - tf(x - d, t)) / (2 * d), abs=1e-6)
    assert tf.dt(x, t) == pytest.approx((tf(x, t + d) - tf(x, t - d)) / (2 * d), abs=1e-6)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunction("gaussian")
    with pytest.raises(ValueError):
        TestFunction(x_width=0.0)


def test_weak_form_zero_trajectory():
    g = make_grid(-2, 2, 40)
    params = ModelParams(1.0, 0.1, Mobility.HOMOTOPY)
    traj = fixed_step_simulate(Field(g, np.zeros(41)), params, 0.1, 10, store_every_step=True)
    r = weak_form_residual(traj, params, TestFunction(x_width=1.0, t_center=0.05, t_width=0.05))
    assert (r.total, r.eps_term, r.bad_set_term) == (0.0, 0.0, 0.0)


def test_weak_form_support_outside_box(bump_field):
    traj = fixed_step_simulate(bump_field, UNIT, 0.1, 5, store_every_step=True)
    with pytest.raises(ValueError):
        weak_form_residual(traj, UNIT, TestFunction(x_center=9.5, x_width=1.0,
                                                    t_center=0.05, t_width=0.05), delta=0.1)
    with pytest.raises(ValueError):
        weak_form_residual(traj, UNIT, TestFunction(t_center=0.05, t_width=0.05), delta=0.0)


def _mode_residual(n_cells, n_steps, theta=1.0):
    g = make_grid(0, 2 * math.pi, n_cells)
    traj = fixed_step_simulate(Field(g, np.sin(g.nodes)), UNIT, 0.1, n_steps,
                               SolverConfig(boundary="periodic", theta=theta),
                               store_every_step=True)
    tf = TestFunction("sine_packet", math.pi, 2.0, 0.05, 0.05, 1.0)
    return weak_form_residual(traj, UNIT, tf, delta=1e-3).total


def test_weak_form_mode_residual_is_dt_truncation():
    # backward Euler on a single mode: the residual is the O(dt) time error
    r = [_mode_residual(256, n) for n in (40, 80, 160)]
    assert r[0] / r[1] == pytest.approx(2, rel=0.25)
    assert r[1] / r[2] == pytest.approx(2, rel=0.25)


def test_weak_form_refinement_factor():
    assert _mode_residual(32, 20) / _mode_residual(64, 40) >= 1.8


def test_weak_form_ledger(tmp_path):
    from tfelab.diagnostics import WeakFormResidual
    write_weak_form_ledger([WeakFormResidual(1.0, 0.5, 0.25, 0.1, 0.01)], tmp_path / "w.csv")
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "eps,delta,total,eps_term,bad_set_term"


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)


def test_sign_changes_of_sine():
    g = make_grid(0, 4 * math.pi, 400)
    assert count_sign_changes(np.sin(g.nodes), 1e-6) == 3
    assert oscillation_profile(Field(g, np.sin(g.nodes)), 1e-6).sign_changes == 3


def test_biharmonic_evolution_oscillates():
    g = make_grid(-20, 20, 800)
    u = biharmonic_solve(sample_initial_data(SmoothBump(0, 1, 1), g), 0.05)
    assert oscillation_profile(u).sign_changes >= 2


def test_interface_envelope_exponent(orbit_n1):
    g = make_grid(-1, 1, 4000)
    prof = oscillation_profile(Field(g, interface_profile(g.nodes, 1.0, orbit_n1)))
    assert prof.envelope_exponent_right is None  # data do not vanish at x = 1
    assert prof.envelope_exponent == pytest.approx(3.0, abs=0.3)


def test_oscillation_profile_zero_field():
    g = make_grid(-1, 1, 10)
    p = oscillation_profile(Field(g, np.zeros(11)))
    assert p.sign_changes == 0 and p.envelope_exponent is None
