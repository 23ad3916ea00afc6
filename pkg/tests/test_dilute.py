import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activesusp.dilute import (ShellDensity, alpha_decomposition, dilute_Bact1, dilute_Bpas1, dilute_report,
                               dipole_density, einstein_compare, kappa_threshold, model_Bact1,
                               point_dipole_Bact1, pusher_puller_shear, richardson_in_width,
                               viscosity_reduction_check)
from activesusp.forcing import make_dipole_model
from activesusp.tensors import shear, unit_ball_volume


@pytest.mark.parametrize("d", [2, 3])
def test_kernel_and_pairing_routes_agree(d):
    E = shear(d)
    dens = dipole_density(make_dipole_model(1.0, 1.7, -1, 0.3), E)
    k = dilute_Bact1(dens, route="kernel")
    p = dilute_Bact1(dens, route="pairing", n_box=96 if d == 2 else 64)
    assert np.abs(k - p).max() <= 1e-7 * np.abs(k).max()


@pytest.mark.parametrize("d", [2, 3])
def test_width_extrapolation_matches_closed_form(d):
    E = shear(d)
    lim, vals = richardson_in_width(make_dipole_model(1.0, 1.7, -1, 0.3), E)
    exact = pusher_puller_shear(-1, 1.7, 1.0, 1.0, d)
    assert abs(2 * (E * lim).sum() - exact) <= 0.01 * abs(exact)
    # the raw finite-width values are off by more than the extrapolated one
    assert abs(2 * (E * vals[0]).sum() - exact) > abs(2 * (E * lim).sum() - exact)


def test_closed_form_values():
    assert pusher_puller_shear(-1, 2.0, 1.0, 1.0, 3) == pytest.approx(-0.734375, abs=1e-15)
    for d in (2, 3):
        assert abs(pusher_puller_shear(-1, 1 + 1e-9, 1.0, 1.0, d)) < 1e-8
        with pytest.raises(ValueError):
            pusher_puller_shear(-1, 1.0, 1.0, 1.0, d)
    with pytest.raises(ValueError):
        pusher_puller_shear(0, 2.0, 1.0, 1.0, 2)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(1.01, 10), f=st.floats(0.1, 5), s=st.floats(-3, 3), d=st.sampled_from([2, 3]))
def test_gamma_antisymmetry_and_point_dipole(r, f, s, d):
    a, b = pusher_puller_shear(1, r, f, s, d), pusher_puller_shear(-1, r, f, s, d)
    assert a == pytest.approx(-b)
    E = shear(d, s)
    e = np.ones(d) / np.sqrt(d) if d == 2 else np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    B = point_dipole_Bact1(1, r, f, e)
    assert 2 * (E * B).sum() == pytest.approx(a, rel=1e-10, abs=1e-12)


def test_alpha_decomposition_of_dipole():
    E = shear(2)
    m = make_dipole_model(1.0, 1.7, -1, 0.3)
    alpha, res = alpha_decomposition(model_Bact1(m, E), m.base_direction(E))
    assert res < 1e-8 and alpha < 0
    alpha, res = alpha_decomposition(np.diag([1.0, -1.0]), np.array([0.0, 1.0]))
    assert alpha == pytest.approx(-4.0) and res < 1e-14


def test_einstein_compare_recovers_synthetic_slope():
    S = dilute_Bpas1(2)
    lam = [0.01, 0.02, 0.05]
    fit = einstein_compare(lam, [np.eye(2) + l * S for l in lam], S, d=2)
    assert fit.relative_deviation < 1e-12
    assert fit.slope_per_volume_fraction == pytest.approx(2.0)
    assert np.allclose(fit.intercept_free, np.eye(2)) and np.allclose(fit.slope_free, S)


def test_passive_coefficient():
    for d in (2, 3):
        assert np.allclose(dilute_Bpas1(d), (d + 2) / 2 * unit_ball_volume(d) * np.eye(len(dilute_Bpas1(d))))


def test_reduction_margin_without_activity():
    for d in (2, 3):
        E = shear(d, 2.0)
        red, margin, feas = viscosity_reduction_check(0.0, 0.01, np.zeros((d, d)), E)
        assert not red and feas
        assert margin == pytest.approx(-(d + 2) / 2 * unit_ball_volume(d) * 0.01 * (E * E).sum())


def test_puller_never_reduces():
    E = shear(2)
    B1 = model_Bact1(make_dipole_model(1.0, 1.7, 1, 0.3), E)
    for kappa in (0.0, 0.5, 5.0, 500.0):
        assert not viscosity_reduction_check(kappa, 0.01, B1, E)[0]


def test_pusher_reduces_beyond_threshold_and_feasibility():
    E = shear(2)
    m = make_dipole_model(1.0, 1.7, -1, 0.3)
    B1 = model_Bact1(m, E)
    kstar = -0.5 * 4 * np.pi * (E * E).sum() / (E * B1).sum()
    assert not viscosity_reduction_check(0.9 * kstar, 0.01, B1, E)[0]
    assert viscosity_reduction_check(1.1 * kstar, 0.01, B1, E)[0]
    ell = 12.0
    kmax = kappa_threshold(ell, 2)
    assert kmax == pytest.approx(12.0**1.5)
    assert viscosity_reduction_check(kmax, 0.01, B1, E, ell=ell)[2]
    assert not viscosity_reduction_check(1.01 * kmax, 0.01, B1, E, ell=ell)[2]


def test_support_inside_exclusion_shell_is_rejected():
    def spread(x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return np.where(r < 2.5, x, 0.0)

    with pytest.raises(ValueError):
        dilute_Bact1(ShellDensity(spread, 2))


def test_report_serializes():
    rep = dilute_report(make_dipole_model(1.0, 1.7, -1, 0.3), shear(2), 1.0, 0.01).to_dict()
    assert rep["shear_scalar"] < 0 and rep["alpha_residual"] < 1e-8
    assert len(rep["Bpas1"]) == 2
