import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfelab._kernels_py import eqlc_coefficients
from tfelab.interface_ode import (MU_MINUS, MU_PLUS, N_PLUS, equilibria, equilibria_report,
                                  eqlc_rhs, find_periodic_orbit, fit_period_divergence,
                                  heteroclinic_scan, linear_roots, mu_of_n, orbit_residual,
                                  quadratic_mu_roots)

# regression anchors (forward-attractor run, default tolerances)
PERIOD_N1 = 1.9248473001
AMPLITUDE_N1 = 0.0217890138


def test_coefficients_at_n1():
    assert eqlc_coefficients(1.0) == pytest.approx((6.0, 11.0, 6.0), abs=1e-14)


def test_singular_term_value():
    # state (0.5, 0, 0) at n = 2: phi''' = -(mu(mu-1)(mu-2) * 0.5 + 0.5^-2 * 0.5)
    rhs = eqlc_rhs((0.5, 0.0, 0.0), 2.0)
    mu = 1.5
    assert rhs[2] == pytest.approx(-(mu * (mu - 1) * (mu - 2) * 0.5 + 2.0), abs=1e-15)


def test_rhs_undefined_at_zero_without_regularization():
    with pytest.raises(ValueError):
        eqlc_rhs((0.0, 1.0, 0.0), 1.5)
    assert np.all(np.isfinite(eqlc_rhs((0.0, 1.0, 0.0), 1.5, zero_reg=1e-8)))
    assert np.all(np.isfinite(eqlc_rhs((0.0, 1.0, 0.0), 0.5)))


@given(st.floats(0.2, 2.5), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_rhs_is_odd(n, p, dp, ddp):
    if p == 0.0:
        p = 0.1
    np.testing.assert_allclose(eqlc_rhs((-p, -dp, -ddp), n), -eqlc_rhs((p, dp, ddp), n),
                               rtol=1e-14, atol=1e-300)


def test_mu_roots():
    mp, mm = quadratic_mu_roots()
    assert mp == pytest.approx((3 + math.sqrt(3)) / 3, abs=1e-15)
    assert mm == pytest.approx((3 - math.sqrt(3)) / 3, abs=1e-15)
    assert 3 * mp ** 2 - 6 * mp + 2 == pytest.approx(0, abs=1e-14)
    assert (MU_PLUS, MU_MINUS) == (mp, mm)
    assert N_PLUS == pytest.approx(9 / (3 + math.sqrt(3)), abs=1e-15)
    assert N_PLUS == pytest.approx(1.90192, abs=1e-5)
    assert mu_of_n(N_PLUS) == pytest.approx(MU_PLUS, rel=1e-15)


def test_linear_roots():
    # at mu = 3 the linear part is solved by x^0, x^1, x^2, i.e. exp(lambda s), lambda = -3, -2, -1
    assert sorted(linear_roots(1.0)) == pytest.approx([-3.0, -2.0, -1.0])


def test_equilibria_examples():
    assert equilibria(1.0) == ()
    a = equilibria(2.0)
    assert a[1] == pytest.approx(0.375 ** -0.5, rel=1e-14)
    assert a[1] == pytest.approx(1.63299, abs=1e-5)
    rep = equilibria_report(1.7)
    assert rep.residual < 1e-12
    for v in rep.values:
        assert np.max(np.abs(eqlc_rhs((v, 0.0, 0.0), 1.7))) < 1e-12


@given(st.floats(1.55, 2.9))
def test_equilibria_solve_the_ode(n):
    for v in equilibria(n):
        assert np.max(np.abs(eqlc_rhs((v, 0.0, 0.0), n))) < 1e-12


def test_orbit_n1_regression(orbit_n1):
    assert orbit_n1.converged
    assert orbit_n1.period == pytest.approx(PERIOD_N1, abs=1e-8)
    assert orbit_n1.amplitude == pytest.approx(AMPLITUDE_N1, rel=1e-7)
    assert orbit_n1.closure_error() < 1e-6


def test_orbit_samples_solve_the_ode(orbit_n1):
    assert orbit_residual(orbit_n1) < 1e-6
    assert orbit_residual(orbit_n1.reflected()) < 1e-6


def test_orbit_csv(tmp_path, orbit_n1):
    orbit_n1.to_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "s,phi,dphi,ddphi"
    assert len(lines) == 1 + orbit_n1.samples.shape[0]


def test_orbit_interpolant_periodic(orbit_n1):
    s = np.linspace(0, 5, 11)
    np.testing.assert_allclose(orbit_n1.phi(s + orbit_n1.period), orbit_n1.phi(s), atol=1e-15)


def test_orbit_beyond_heteroclinic_fails():
    orb = find_periodic_orbit(1.9)
    assert not orb.converged
    assert orb.method_meta["status"] in ("escaped", "equilibrium", "budget_exhausted")
    with pytest.raises(ValueError):
        orb.phi(0.0)


def test_shooting_agrees_with_forward_attractor(orbit_n1):
    sh = find_periodic_orbit(1.0, "shooting")
    assert sh.converged
    assert sh.period == pytest.approx(orbit_n1.period, abs=1e-8)


def test_zero_reg_insensitivity():
    a = find_periodic_orbit(1.5, samples_per_period=64)
    b = find_periodic_orbit(1.5, samples_per_period=64, zero_reg_rel=5e-9)
    assert a.converged and b.converged
    assert a.period == pytest.approx(b.period, rel=1e-6)


def test_bad_inputs():
    with pytest.raises(ValueError):
        find_periodic_orbit(1.0, "newton")
    with pytest.raises(ValueError):
        find_periodic_orbit(-1.0)
    with pytest.raises(ValueError):
        heteroclinic_scan((1.2, 1.9))
    with pytest.raises(ValueError):
        heteroclinic_scan((1.6, 1.9), steps=4)


def test_period_divergence_fit_recovers_synthetic():
    ns = np.array([1.6, 1.65, 1.7, 1.72, 1.74])
    T = 3.0 - 1.5 * np.log(1.76 - ns)
    fit = fit_period_divergence(ns, T, 1.74, 1.9)
    assert fit["n_h"] == pytest.approx(1.76, abs=1e-5)
    assert fit["r2"] > 0.999999


def test_scan_periods_increase():
    res = heteroclinic_scan((1.6, 1.9), 12)
    conv = [r for r in res.period_table if r["converged"]]
    periods = [r["period"] for r in conv]
    assert all(b > a for a, b in zip(periods, periods[1:]))
    assert 1.70 <= res.n_h_estimate <= 1.82
    assert "n_h_estimate" in res.to_dict()
