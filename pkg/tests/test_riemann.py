import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tfelab.core import Field, Mobility, make_grid
from tfelab.riemann import (InterfaceEntry, RescaleSpec, blowup_experiment, interface_initial_data,
                            interface_phase, monomial_chain, psi, psi_residual, rescale,
                            riemann_initial_data, separable_analysis, separable_residual,
                            stable_interface_experiment, write_interface_csv)


# ------------------------------------------------------------------ scaling

def test_time_unscaled_for_alpha_n_over_4():
    spec = RescaleSpec(alpha=0.25, n=1.0, epsilon=1e-3)
    assert spec.beta == 0.0


def test_rescale_spec_validation():
    with pytest.raises(ValueError):
        RescaleSpec(0.25, 1.0, 0.0)
    with pytest.raises(ValueError):
        RescaleSpec(0.25, 0.0, 0.1)
    with pytest.raises(ValueError):
        RescaleSpec(0.25, 1.0, 0.1).compose(RescaleSpec(0.5, 1.0, 0.1))


@given(st.floats(0.2, 3.0), st.floats(1e-3, 1.0), st.floats(0.1, 2.0))
def test_rescale_round_trip(n, eps, alpha):
    grid = make_grid(-1.0, 1.0, 40)
    u = Field(grid, np.cos(grid.nodes), 0.3)
    spec = RescaleSpec(alpha, n, eps)
    back = rescale(rescale(u, spec), spec.inverse())
    assert np.allclose(back.grid.nodes, grid.nodes, rtol=1e-12, atol=1e-12)
    assert np.allclose(back.values, u.values, rtol=1e-12)
    assert back.time == pytest.approx(0.3, rel=1e-12)


def test_rescale_compose():
    grid = make_grid(-1.0, 1.0, 40)
    u = Field(grid, grid.nodes ** 2, 0.0)
    a, b = RescaleSpec(0.5, 1.0, 0.1), RescaleSpec(0.5, 1.0, 0.2)
    one = rescale(u, a.compose(b))
    two = rescale(rescale(u, a), b)
    assert np.allclose(one.values, two.values, rtol=1e-12)
    assert np.allclose(one.grid.nodes, two.grid.nodes, rtol=1e-12)


def test_rescale_target_budget():
    grid = make_grid(-1.0, 1.0, 10)
    u = Field(grid, np.zeros(grid.n_nodes))
    with pytest.raises(MemoryError):
        rescale(u, RescaleSpec(0.25, 1.0, 0.1), make_grid(-1.0, 1.0, 10 ** 7 + 1))


@pytest.mark.parametrize("n", [1.0, 2.0])
def test_rescaled_data_approach_power_law(n):
    """u0 = chi |x|^(4/n) (1 + x^2) rescales to chi |y|^(4/n) (1 + eps^(n/2) y^2)."""
    chi = 0.7
    target = make_grid(-2.0, 2.0, 200)
    ref = chi * np.abs(target.nodes) ** (4.0 / n)
    for eps in (1e-2, 1e-4, 1e-6):
        spec = RescaleSpec(n / 4.0, n, eps)
        s = eps ** spec.alpha
        x_grid = make_grid(-2.5 * s, 2.5 * s, 250)  # image grid shares the target nodes
        x = x_grid.nodes
        u0 = Field(x_grid, chi * np.abs(x) ** (4.0 / n) * (1.0 + x ** 2))
        v = rescale(u0, spec, target)
        err = float(np.max(np.abs(v.values - ref)))
        assert err == pytest.approx(chi * eps ** (n / 2) * 2.0 ** (4.0 / n + 2), rel=1e-6)


def test_riemann_data_one_sided():
    grid = make_grid(-1.0, 1.0, 8)
    v = riemann_initial_data(grid, 2.0, (3.0, 0.5)).values
    assert v[-1] == 3.0 and v[0] == 0.5 and v[4] == 0.0


# ------------------------------------------------------- separable solutions

def test_monomial_chain_n1():
    # q = 4: 4*3 * 2 * 5 = 120
    assert monomial_chain(1.0, 1) == 120.0


def test_no_separable_profile_at_n1():
    res = separable_analysis(1.0, 1)
    assert res.P == 120.0
    assert res.C_star is None and not res.degenerate


def test_exponent_collision_is_degenerate():
    res = separable_analysis(2.0, 1)  # q = 2 kills grad Lap
    assert res.degenerate and res.C_star is None and res.P == 0.0


def test_separable_profile_n3():
    res = separable_analysis(3.0, 1)
    assert res.P < 0
    assert res.C_star == pytest.approx((-1.0 / res.P) ** (1.0 / 3.0), rel=1e-15)
    assert res.C_star == pytest.approx(1.1309, abs=1e-4)
    assert separable_residual(3.0, 1, res.C_star, [0.1, 0.5, 1.0, 7.0]) <= 1e-10


@given(st.floats(0.3, 6.0), st.integers(1, 3))
def test_separable_root_when_P_negative(n, N):
    res = separable_analysis(n, N)
    if res.P < 0:
        assert res.C_star > 0
        assert separable_residual(n, N, res.C_star, [0.3, 2.0]) <= 1e-10
    else:
        assert res.C_star is None


def test_separable_input_checks():
    with pytest.raises(ValueError):
        separable_analysis(0.0)
    with pytest.raises(ValueError):
        separable_residual(1.0, 1, 1.0, [0.0, 1.0])


@pytest.mark.parametrize("n", [0.5, 1.0, 3.0])
def test_psi_solves_its_ode(n):
    assert psi_residual(n, 1.0, np.linspace(0.0, 0.99, 50)) <= 1e-14
    assert psi(0.0, n, 1.0) == pytest.approx(n ** (-1.0 / n))


def test_psi_residual_rejects_late_probe():
    with pytest.raises(ValueError):
        psi_residual(1.0, 1.0, [1.0])


# ---------------------------------------------------------------- blow-up

def test_blowup_zero_data():
    rep = blowup_experiment(1.0, (0.0, 0.0), make_grid(-2.0, 2.0, 40))
    assert rep.blew_up is False and rep.T_estimate is None
    assert rep.meta["note"] == "zero data"


def test_blowup_short_run_stays_bounded():
    rep = blowup_experiment(1.0, (1.0, 1.0), make_grid(-2.0, 2.0, 60), t_max=1e-3)
    assert not rep.blew_up
    assert rep.meta["max_sup"] <= rep.meta["ceiling"]
    assert rep.to_dict()["meta"]["growth_dominated"]


def test_blowup_linear_control():
    rep = blowup_experiment(1.0, (1.0, 1.0), make_grid(-2.0, 2.0, 60), t_max=1e-3,
                            mobility=Mobility.UNIT)
    assert not rep.blew_up
    assert rep.meta["mobility"] == "unit"


# ------------------------------------------------------- stable interface

def test_interface_phase():
    assert interface_phase(3.0, math.e) == pytest.approx(1.0)


def test_interface_data_bounded_by_amplitude(orbit_n1):
    grid = make_grid(-2.0, 2.0, 400)
    pos = grid.nodes > 0
    for eps in (1e-1, 1e-2, 1e-3):
        v = interface_initial_data(grid, 1.0, orbit_n1, eps).values
        assert not v[~pos].any()
        assert np.max(np.abs(v[pos]) / grid.nodes[pos] ** 3) <= orbit_n1.amplitude * 1.01


def test_interface_data_period_shift(orbit_n1):
    """eps and eps exp(-3T/n) shift the phase by one period, giving the same data."""
    n, eps = 1.0, 1e-2
    grid = make_grid(0.01, 2.0, 300)
    a = interface_initial_data(grid, n, orbit_n1, eps).values
    b = interface_initial_data(grid, n, orbit_n1, eps * math.exp(-3.0 * orbit_n1.period / n)).values
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(a))


def test_stable_interface_short_run(orbit_n1, tmp_path):
    grid = make_grid(-2.0, 2.0, 100)
    entries = stable_interface_experiment(1.0, orbit_n1, [1e-1, 1e-2], grid, 1e-3)
    assert len(entries) == 2
    for e in entries:
        assert not e.blew_up and math.isfinite(e.window_sup)
        assert e.data_bound_ratio <= 1.01
    write_interface_csv(entries, tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text().splitlines()[0] == "eps,window_sup,blew_up"


def test_stable_interface_checks(orbit_n1):
    grid = make_grid(-2.0, 2.0, 20)
    with pytest.raises(ValueError):
        stable_interface_experiment(1.0, orbit_n1, [1e-2, 1e-1], grid, 1e-3)

    class Bad:
        converged = False

    with pytest.raises(ValueError):
        stable_interface_experiment(1.0, Bad(), [1e-1], grid, 1e-3)


def test_interface_entry_row():
    assert InterfaceEntry(0.1, 2.0, False, 1.0).to_row() == [0.1, 2.0, 0.0]
