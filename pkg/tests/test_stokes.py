import numpy as np
import pytest

from activesusp.ensemble import ParticleEnsemble, sample_hardcore
from activesusp.stokes import (Mollifier, PeriodicField, PeriodicGrid, RigidStokesSolver, UzawaStagnationError,
                               load_field, mollify, particle_average_strain, save_field, solve_stokes_periodic)
from activesusp.tensors import shear


@pytest.mark.parametrize("d,N", [(2, 32), (3, 16)])
def test_free_stokes_single_mode(d, N):
    """u = P_k a sin(k.x) / |k|^2 for f = a sin(k.x)."""
    L = 2 * np.pi
    grid = PeriodicGrid(d, L, N)
    k = np.array([1, 2, 0][:d], float)
    a = np.array([1.0, 0.5, -0.3][:d])
    phase = np.tensordot(k, grid.coords, axes=(0, 0))
    f = a[(...,) + (None,) * d] * np.sin(phase)
    sol = solve_stokes_periodic(grid, f)
    U = (a - k * (k @ a) / (k @ k)) / (k @ k)
    assert np.abs(sol.u - U[(...,) + (None,) * d] * np.sin(phase)).max() < 1e-13
    assert sol.div_residual < 1e-13


def test_mean_force_is_discarded_and_reported():
    grid = PeriodicGrid(2, 1.0, 16)
    f = np.ones((2, 16, 16)) * np.array([2.0, -1.0])[:, None, None]
    sol = solve_stokes_periodic(grid, f)
    assert np.allclose(sol.discarded_mean, [2.0, -1.0]) and np.abs(sol.u).max() < 1e-14


def test_rigid_solver_constraints_and_energy():
    ens = sample_hardcore(2, 24.0, 0.015, 1.0, seed=5)
    grid = PeriodicGrid(2, 24.0, 192)
    solver = RigidStokesSolver(grid, ens, tol=1e-10)
    E = shear(2, 1.0)
    sol = solver.solve(strain=E)
    assert sol.converged and sol.rigid_residual <= 1e-9
    assert sol.div_residual < 1e-12
    # velocity is zero mean and the solution is linear in the strain
    assert np.abs(grid.mean(sol.u)).max() < 1e-14
    sol2 = solver.solve(strain=2 * E)
    assert np.allclose(sol2.u, 2 * sol.u, atol=1e-8 * np.abs(sol.u).max())


def test_body_force_reaction_on_particle():
    """A force carried entirely by one particle is returned as minus its reaction."""
    L, N = 16.0, 128
    ens = ParticleEnsemble.single(2, L)
    grid = PeriodicGrid(2, L, N)
    idx, disp = grid.ball_nodes(ens.centers[0], 0.8)
    f = np.zeros((2, N * N))
    f[0, idx] = 1.0
    f[0] -= f[0].mean()
    sol = RigidStokesSolver(grid, ens, tol=1e-10).solve(force=f.reshape(2, N, N))
    # the discarded mean is spread over the whole body of the particle
    body, _ = grid.ball_nodes(ens.centers[0], 1.0)
    applied = (len(idx) - len(body) * len(idx) / N**2) * grid.cell_volume
    assert np.isclose(-sol.reaction_force[0, 0], applied, rtol=1e-12)
    assert abs(sol.reaction_force[0, 1]) < 1e-14


def test_under_resolved_particles_rejected():
    ens = ParticleEnsemble.single(2, 32.0)
    with pytest.raises(ValueError, match="cells per radius"):
        RigidStokesSolver(PeriodicGrid(2, 32.0, 64), ens)


def test_stagnation_raises_with_history():
    ens = sample_hardcore(2, 24.0, 0.015, 1.0, seed=5)
    grid = PeriodicGrid(2, 24.0, 192)
    with pytest.raises(UzawaStagnationError) as info:
        RigidStokesSolver(grid, ens, tol=1e-14, maxiter=3, stall_window=2).solve(strain=shear(2))
    assert len(info.value.history) >= 2


def test_mollifier_unit_mass_and_constant_preservation():
    grid = PeriodicGrid(2, 1.0, 64)
    m = Mollifier(0.2)
    assert np.isclose(m.weights(grid).sum(), 1.0)
    c = np.full((2, 64, 64), 3.0)
    assert np.allclose(mollify(c, m, grid), 3.0)
    with pytest.raises(ValueError):
        Mollifier(0.01).weights(grid)


def test_particle_average_strain_of_linear_flow():
    grid = PeriodicGrid(2, 1.0, 64)
    k = 2 * np.pi
    u = np.stack([np.sin(k * grid.coords[1]), np.zeros((64, 64))])
    ens = ParticleEnsemble(2, 1.0, 0.0, [[0.5, 0.0]], [0.125])
    A = particle_average_strain(u, ens, None, grid)[0]
    # D12 = k cos(k y)/2 averaged over a small disc around y = 0
    assert np.isclose(A[0, 1], k / 2, rtol=0.1) and np.isclose(np.trace(A), 0.0)


def test_field_round_trip(tmp_path):
    grid = PeriodicGrid(3, 2.5, 8)
    vals = np.random.default_rng(0).normal(size=(3, 8, 8, 8))
    save_field(tmp_path / "u.bin", PeriodicField(grid, vals))
    back = load_field(tmp_path / "u.bin")
    assert back.grid == grid and np.array_equal(back.values, vals)
