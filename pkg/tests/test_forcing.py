import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activesusp.ensemble import ParticleEnsemble, sample_hardcore
from activesusp.forcing import (ResolutionError, SwimForceModel, bump, evaluate_force, make_dipole_model,
                                shear_orientation)
from activesusp.stokes import PeriodicGrid
from activesusp.tensors import shear


def rotation(t):
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def test_bump_has_unit_mass_and_compact_support():
    from scipy import integrate
    w = 0.3
    mass, _ = integrate.quad(lambda r: 2 * np.pi * r * bump(np.array([[r, 0.0]]), w)[0], 0, w)
    assert abs(mass - 1.0) < 1e-8
    assert bump(np.array([[w * 1.0001, 0.0]]), w)[0] == 0.0


def test_shear_orientation_is_top_eigenvector():
    E = shear(2, 1.0)
    e = shear_orientation(E)
    assert np.allclose(e, np.array([1, 1]) / np.sqrt(2))
    # a tie (E = 0) is broken deterministically
    e0, tie = shear_orientation(np.zeros((2, 2)), with_flag=True)
    assert tie and np.isclose(np.linalg.norm(e0), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_orientation_equivariant_up_to_sign(t):
    R = rotation(t)
    E = np.diag([0.7, -0.7])
    e = shear_orientation(E)
    eR = shear_orientation(R @ E @ R.T)
    assert np.isclose(abs(eR @ (R @ e)), 1.0, atol=1e-10)


@pytest.mark.parametrize("d,L,N", [(2, 16.0, 128), (3, 12.0, 96)])
def test_discrete_density_is_exactly_neutral(d, L, N):
    ens = sample_hardcore(d, L, 0.02 if d == 2 else 0.004, 1.0, seed=2) if d == 2 else \
        ParticleEnsemble(d, L, 1.0, [[3.0, 3.0, 3.0], [8.5, 8.0, 7.5]], [1.0, 1.0])
    grid = PeriodicGrid(d, L, N)
    model = make_dipole_model(1.3, 1.7, -1, 0.3, orientation="random:2.0")
    fs = evaluate_force(model, ens, shear(d, 1.0), grid)
    h = grid.cell_volume
    for pf in fs.particles:
        scale = np.abs(pf.values).sum() * h
        assert np.abs(pf.values.sum(1) * h).max() <= 1e-12 * scale
        M = pf.values @ pf.disp * h
        assert np.abs(M - M.T).max() <= 1e-12 * scale * 2
    assert np.abs(fs.net_force()).max() <= 1e-12 * np.abs(fs.values).sum() * h


def test_propulsion_and_first_moment_match_point_dipole():
    """Interior carries +F e; first moment equals that of -F e at gamma*offset*e."""
    L, N = 16.0, 256
    ens = ParticleEnsemble.single(2, L)
    grid = PeriodicGrid(2, L, N)
    for gamma in (-1, 1):
        model = make_dipole_model(2.0, 1.6, gamma, 0.3)
        E = shear(2, 1.0)
        fs = evaluate_force(model, ens, E, grid)
        e = model.base_direction(E)
        assert np.allclose(fs.propulsion[0], 2.0 * e, rtol=1e-2)
        M = fs.first_moments()[0]
        expected = -2.0 * gamma * 1.6 * np.outer(e, e)
        assert np.allclose(M, expected, atol=2e-2)


def test_resolution_error_names_required_grid():
    ens = ParticleEnsemble.single(2, 32.0)
    with pytest.raises(ResolutionError, match="N >="):
        evaluate_force(make_dipole_model(1.0, 1.7, -1, 0.1), ens, shear(2), PeriodicGrid(2, 32.0, 64))


def test_model_validation():
    with pytest.raises(ValueError):
        make_dipole_model(1.0, 1.0, -1)
    with pytest.raises(ValueError):
        SwimForceModel(offset=1.8, width=0.3)  # bump leaves the shell
    with pytest.raises(ValueError):
        SwimForceModel(orientation="sideways")
    with pytest.raises(ValueError):
        SwimForceModel(gamma=0)


def test_response_laws():
    E = shear(2, 1.0)
    e = shear_orientation(E)
    assert SwimForceModel(response="constant", fbar=2.0).strength(E, e) == 2.0
    assert np.isclose(SwimForceModel(response="linear", fbar=2.0).strength(E, e), 1.0)
    assert np.isclose(SwimForceModel(response="saturating", fbar=2.0).strength(E, e), 2 * np.tanh(0.5))


def test_zero_model_gives_zero_force():
    ens = ParticleEnsemble.single(2, 16.0)
    fs = evaluate_force(SwimForceModel(fbar=0.0), ens, shear(2), PeriodicGrid(2, 16.0, 128))
    assert not np.any(fs.values)


def test_random_orientation_fixed_per_realization():
    model = SwimForceModel(orientation="random:1.5", seed=3)
    a = model.noise(5, 2, ensemble_seed=9)
    b = model.noise(5, 2, ensemble_seed=9)
    c = model.noise(5, 2, ensemble_seed=10)
    assert np.array_equal(a["angle"], b["angle"]) and not np.array_equal(a["angle"], c["angle"])
