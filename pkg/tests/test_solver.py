import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfelab.biharmonic import biharmonic_solve
from tfelab.core import Field, ModelParams, Mobility, SmoothBump, make_grid, sample_initial_data
from tfelab.diagnostics import gradient_energy
from tfelab.solver import (SolverAbort, SolverConfig, fixed_step_simulate, iter_snapshots,
                           mass_history, operator, simulate, step)

UNIT = ModelParams(1.0, 0.0, Mobility.UNIT)
PERIODIC = SolverConfig(boundary="periodic")


def _sine(n_cells, k=1):
    g = make_grid(0.0, 2 * math.pi, n_cells)
    return Field(g, np.sin(k * g.nodes))


def _params(fam):
    return {"degenerate": ModelParams(1.3, 0.0, Mobility.DEGENERATE),
            "simple": ModelParams(1.3, 0.05, Mobility.SIMPLE),
            "homotopy": ModelParams(1.3, 0.05, Mobility.HOMOTOPY),
            "unit": UNIT}[fam]


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_single_mode_amplification_factor(theta):
    u = _sine(64, 2)
    h = u.grid.spacing
    dt = 1e-3
    cfg = SolverConfig(boundary="periodic", theta=theta)
    new = step(u, dt, UNIT, cfg)
    lam = (4 / h ** 2 * math.sin(2 * h / 2) ** 2) ** 2
    factor = (1 - (1 - theta) * dt * lam) / (1 + theta * dt * lam)
    np.testing.assert_allclose(new.values, factor * u.values, atol=1e-12)


def test_sine_decay_converges_to_exact():
    errs = []
    for n_cells, n_steps in ((32, 50), (64, 100), (128, 200)):
        traj = fixed_step_simulate(_sine(n_cells), UNIT, 0.1, n_steps,
                                   SolverConfig(boundary="periodic", theta=0.5))
        amp = float(np.max(np.abs(traj.final.values)))
        errs.append(abs(amp - math.exp(-0.1)))
    assert errs[-1] < 1e-4
    assert errs[-1] < errs[0]


@pytest.mark.parametrize("fam", ["degenerate", "simple", "homotopy", "unit"])
@pytest.mark.parametrize("boundary", ["decay_clamped", "periodic"])
def test_mass_conserved_each_step(fam, boundary, rng):
    g = make_grid(-5, 5, 120)
    vals = sample_initial_data(SmoothBump(0.3, 2.0, 1.0), g).values
    vals = vals * np.cos(2 * g.nodes)
    if boundary == "periodic":
        vals[-1] = vals[0]
    u = Field(g, vals)
    cfg = SolverConfig(boundary=boundary, dt_initial=1e-5)
    m0 = u.mass() if boundary == "decay_clamped" else u.grid.spacing * np.sum(u.values[:-1])
    for _ in range(3):
        u = step(u, 1e-5, _params(fam), cfg)
        m = u.mass() if boundary == "decay_clamped" else u.grid.spacing * np.sum(u.values[:-1])
        assert abs(m - m0) <= 1e-12 * max(1.0, abs(m0))


@given(st.floats(-3.0, 3.0), st.sampled_from(["simple", "unit", "homotopy"]))
def test_constant_state_is_fixed(c, fam):
    g = make_grid(0, 1, 20)
    u = Field(g, np.full(g.n_nodes, c))
    new = step(u, 1e-3, _params(fam), SolverConfig())
    np.testing.assert_array_equal(new.values, u.values)


def test_operator_on_constant_is_zero():
    g = make_grid(0, 1, 20)
    assert np.all(operator(np.full(21, 2.0), g.spacing, _params("simple"), SolverConfig()) == 0)


def test_solver_matches_convolution_second_order():
    u_ref = None
    errs = []
    for n in (150, 300):
        g = make_grid(-30, 30, n)
        u0 = sample_initial_data(SmoothBump(0.0, 2.0, 1.0), g)
        traj = fixed_step_simulate(u0, UNIT, 1.0, 400, SolverConfig(theta=0.5))
        u_ref = biharmonic_solve(u0, 1.0)
        errs.append(np.max(np.abs(traj.final.values - u_ref.values)))
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_simple_mobility_finite_propagation():
    g = make_grid(-8, 8, 320)
    u0 = sample_initial_data(SmoothBump(0.0, 1.5, 1.0), g)
    traj = simulate(u0, ModelParams(1.0, 1e-3, Mobility.SIMPLE), 1.0,
                    SolverConfig(dt_initial=1e-5, dt_max=1e-2), snap_times=[0.5])
    assert not traj.metadata["blew_up"]

    def support(f):
        idx = np.where(np.abs(f.values) > 1e-6)[0]
        return g.nodes[idx[-1]] - g.nodes[idx[0]]

    s0, s1 = support(traj[0]), support(traj.final)
    assert s0 < s1 < g.length


def test_snapshots_land_on_requested_times(bump_field):
    traj = simulate(bump_field, _params("simple"), 0.05, SolverConfig(dt_initial=3e-3),
                    snap_times=[0.01, 0.0237])
    assert list(traj.times) == [0.0, 0.01, 0.0237, 0.05]
    assert [s.time for s in iter_snapshots(traj, [0.0237])] == [0.0237]
    m = mass_history(traj)
    assert np.max(np.abs(m - m[0])) < 1e-12


def test_energy_monotone_backward_euler(rng):
    g = make_grid(-6, 6, 96)
    params = _params("simple")
    for _ in range(5):
        u0 = sample_initial_data(SmoothBump(rng.uniform(-1, 1), rng.uniform(1, 3),
                                            rng.uniform(0.2, 2)), g)
        traj = simulate(u0, params, 0.02, SolverConfig(dt_initial=1e-4), store_every_step=True)
        E = [gradient_energy(s) for s in traj.snapshots]
        assert np.all(np.diff(E) <= 1e-10)


def test_dt_collapse_raises_abort(bump_field):
    cfg = SolverConfig(dt_initial=1.0, dt_min=0.9, dt_max=1.0, newton_max_iter=1)
    with pytest.raises(SolverAbort) as exc:
        simulate(bump_field, _params("degenerate"), 2.0, cfg)
    assert exc.value.trajectory is not None
    assert "blew_up" in exc.value.report


@pytest.mark.parametrize("kw", [dict(theta=0.3), dict(boundary="dirichlet"),
                                dict(face_average="harmonic"), dict(dt_min=1.0, dt_initial=0.1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_step_rejects_nonpositive_dt(bump_field):
    with pytest.raises(ValueError):
        step(bump_field, 0.0, UNIT, SolverConfig())
