import numpy as np
import pytest

from activesusp.correctors import (analytic_sphere_corrector, annulus_error, solve_active_corrector,
                                   solve_passive_corrector, solve_single_particle, write_corrector)
from activesusp.dilute import dilute_Bpas1
from activesusp.ensemble import ParticleEnsemble, sample_hardcore
from activesusp.forcing import make_dipole_model
from activesusp.stokes import PeriodicGrid
from activesusp.tensors import shear, unit_ball_volume


def _grad(E, x, h=1e-5):
    d = x.shape[-1]
    G = np.zeros(x.shape[:-1] + (d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        G[..., :, j] = (analytic_sphere_corrector(E, x + e) - analytic_sphere_corrector(E, x - e)) / (2 * h)
    return G


def _pressure(E, x):
    d = x.shape[-1]
    r2 = (x**2).sum(-1)
    return -(d + 2) * np.einsum("...i,ij,...j->...", x, E, x) * r2 ** (-(d + 2) / 2)


def test_analytic_corrector_value():
    E = np.diag([1.0, -0.5, -0.5])
    assert np.allclose(analytic_sphere_corrector(E, np.array([2.0, 0, 0])), [-0.53125, 0, 0])


@pytest.mark.parametrize("d", [2, 3])
def test_analytic_corrector_solves_stokes_and_is_rigid_inside(d):
    E = shear(d, 1.0) + np.diag([0.3, -0.3] if d == 2 else [0.3, 0.1, -0.4])
    x0 = np.array([1.3, 0.4, 0.2][:d])
    h = 1e-3
    I = np.eye(d)
    lap = sum((analytic_sphere_corrector(E, x0 + h * I[j]) - 2 * analytic_sphere_corrector(E, x0)
               + analytic_sphere_corrector(E, x0 - h * I[j])) / h**2 for j in range(d))
    gp = np.array([(_pressure(E, x0 + h * I[j]) - _pressure(E, x0 - h * I[j])) / (2 * h) for j in range(d)])
    assert np.allclose(lap, gp, rtol=1e-5)
    assert abs(np.trace(_grad(E, x0))) < 1e-8
    # continuity across the surface; inside, psi + E x = 0
    n = x0 / np.linalg.norm(x0)
    assert np.allclose(analytic_sphere_corrector(E, n * (1 + 1e-9)), analytic_sphere_corrector(E, n * (1 - 1e-9)),
                       atol=1e-7)
    assert np.allclose(analytic_sphere_corrector(E, 0.5 * n), -0.5 * E @ n)


@pytest.mark.parametrize("d", [2, 3])
def test_analytic_disturbance_stresslet_is_einstein_coefficient(d):
    """Surface stresslet of psi is d|B| E at every radius.

    Adding the stresslet ``2|B| E`` of the ambient flow on the unit sphere
    gives the Einstein coefficient ``(d+2)|B| E``.
    """
    E = shear(d, 1.0) + np.diag([0.3, -0.3] if d == 2 else [0.3, 0.1, -0.4])
    for R in (1.3, 1.8):
        if d == 2:
            t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
            nu = np.stack([np.cos(t), np.sin(t)], -1)
            w = np.full(400, 2 * np.pi * R / 400)
        else:
            c, wc = np.polynomial.legendre.leggauss(40)
            ph = np.linspace(0, 2 * np.pi, 80, endpoint=False)
            C, P = np.meshgrid(c, ph, indexing="ij")
            S = np.sqrt(1 - C**2)
            nu = np.stack([S * np.cos(P), S * np.sin(P), C], -1).reshape(-1, 3)
            w = (wc[:, None] * np.full(80, 2 * np.pi / 80)).reshape(-1) * R**2
        x = R * nu
        G = _grad(E, x)
        sig = (G + np.swapaxes(G, -1, -2)) - _pressure(E, x)[:, None, None] * np.eye(d)
        S = np.einsum("nij,nj,nk,n->ik", sig, nu, x, w)
        assert np.allclose(S + 2 * unit_ball_volume(d) * E, 2 * dilute_Bpas1(d)[0, 0] * E, atol=1e-6)


def test_single_sphere_matches_whole_space_corrector_2d():
    grid = PeriodicGrid(2, 16.0, 128)
    sol = solve_single_particle(shear(2, 1.0), 16.0, grid)
    # periodic images at L = 16 add a few percent on the annulus
    assert annulus_error(sol) < 0.08


def test_single_sphere_3d_small_cell():
    grid = PeriodicGrid(3, 12.0, 96)
    sol = solve_single_particle(np.diag([1.0, -0.5, -0.5]), 12.0, grid)
    assert annulus_error(sol) < 0.10


def test_centered_sphere_is_symmetric():
    grid = PeriodicGrid(2, 16.0, 128)
    sol = solve_single_particle(shear(2, 1.0), 16.0, grid)
    # u(c + x) = -u(c - x) for the point-symmetric problem
    u = sol.flow.u
    flipped = -np.roll(u[:, ::-1, ::-1], 1, axis=(1, 2))
    assert np.abs(u - flipped).max() < 1e-8 * np.abs(u).max()


def test_rigid_motion_inside_particles():
    ens = sample_hardcore(2, 24.0, 0.015, 1.0, seed=1)
    grid = PeriodicGrid(2, 24.0, 192)
    sol = solve_passive_corrector(ens, shear(2, 1.0), grid)
    # the rigidity constraint is imposed weakly; pointwise strain stays small
    assert sol.flow.interior_strain_rms < 0.1 * np.linalg.norm(shear(2, 1.0))
    assert np.isclose(sol.energy_density(), sol.energy_density_quadrature(), rtol=1e-10)


def test_active_corrector_energy_identity_and_force_free():
    ens = sample_hardcore(2, 24.0, 0.015, 1.0, seed=1)
    grid = PeriodicGrid(2, 24.0, 192)
    model = make_dipole_model(1.0, 1.7, -1, 0.3)
    sol = solve_active_corrector(ens, model, shear(2, 1.0), grid)
    assert np.isclose(sol.gradient_energy(), sol.force_work(), rtol=1e-8)
    # the body carries the propulsion F e, so the fluid pushes back with -F e
    props = np.array([pf.propulsion for pf in sol.force.particles])
    assert np.allclose(sol.reaction_force, -props, atol=1e-12)


def test_invalid_strain_rejected():
    ens = ParticleEnsemble.single(2, 16.0)
    grid = PeriodicGrid(2, 16.0, 128)
    with pytest.raises(ValueError):
        solve_passive_corrector(ens, np.eye(2), grid)


def test_write_corrector_outputs(tmp_path):
    grid = PeriodicGrid(2, 16.0, 128)
    sol = solve_single_particle(shear(2), 16.0, grid)
    paths = write_corrector(tmp_path / "c", sol)
    assert all(p.exists() for p in paths)
    text = paths[-1].read_text()
    assert "kind = single" in text and "N = 128" in text
    assert paths[2].read_text().startswith("iter,div_res,rigid_res")
