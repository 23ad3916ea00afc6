import csv
from dataclasses import replace

import numpy as np
import pytest

from activesusp.ensemble import ParticleEnsemble
from activesusp.forcing import make_dipole_model
from activesusp.solvers import (CSV_HEADER, ContractionError, SolverConfig, TabulatedBact, TwoScaleRow,
                                base_cell, cell_tensors, forcing_field, micro_ensemble, one_mode_solution,
                                solve_macro, solve_micro, two_scale_experiment, write_table)
from activesusp.effective import bact_function, passive_basis_correctors
from activesusp.stokes import PeriodicGrid, solve_stokes_periodic
from activesusp.tensors import shear

MODES = [{"k": [0, 1], "a": [1.0, 0.0]}, {"k": [1, 1], "a": [0.3, -0.3]}]


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_macro_with_identity_is_free_stokes():
    cfg = SolverConfig(N=32, h=MODES)
    grid = PeriodicGrid(2, 1.0, 32)
    sol, log = solve_macro(np.eye(2), None, cfg, grid)
    ref = solve_stokes_periodic(grid, forcing_field(grid, MODES))
    assert _rel(sol.u, ref.u) < 1e-12 and log.iterations == 1


@pytest.mark.parametrize("d", [2, 3])
def test_macro_single_mode_closed_form(d):
    rng = np.random.default_rng(d)
    m = 2 if d == 2 else 5
    A = rng.normal(size=(m, m))
    B = np.eye(m) + 0.3 * A @ A.T
    k = [1, 2] if d == 2 else [1, 0, 2]
    a = [1.0, 0.5] if d == 2 else [0.2, 1.0, -0.4]
    cfg = SolverConfig(N=16, h=[{"k": k, "a": a}])
    grid = PeriodicGrid(d, 1.0, 16)
    sol, _ = solve_macro(B, None, cfg, grid, volume_fraction=0.1)
    U = one_mode_solution(B, k, a, d, volume_fraction=0.1)
    phase = 2 * np.pi * np.tensordot(np.asarray(k, float), grid.coords, axes=(0, 0))
    expected = U[(...,) + (None,) * d] * np.sin(phase)[None]
    assert np.abs(sol.u - expected).max() < 1e-12 * np.abs(U).max()
    assert sol.div_residual < 1e-10


def test_macro_rejects_indefinite_tensor():
    with pytest.raises(ValueError):
        solve_macro(np.diag([1.0, -0.1]), None, SolverConfig(N=16))


def test_linear_activity_shifts_the_viscosity():
    """A linear B_act = c E without mollifier is the passive problem with B + kappa c."""
    cfg = SolverConfig(N=32, h=MODES, kappa=0.5, delta=0.0, tol=1e-12)
    grid = PeriodicGrid(2, 1.0, 32)
    sol, log = solve_macro(np.eye(2), lambda E: -0.4 * E, cfg, grid)
    ref, _ = solve_macro(np.eye(2) * 0.8, None, cfg, grid)
    assert log.converged and _rel(sol.u, ref.u) < 1e-10
    assert np.allclose(log.ratios[:5], 0.2, rtol=1e-6)


def test_macro_divergence_raises():
    cfg = SolverConfig(N=16, h=MODES, kappa=1.0, delta=0.0)
    with pytest.raises(ContractionError) as err:
        solve_macro(np.eye(2), lambda E: -1.5 * E, cfg)
    assert len(err.value.log.ratios) >= 3


def test_macro_mollifier_limit_is_cauchy():
    def bact(E):
        n2 = (E * E).sum(axis=(-2, -1), keepdims=True)
        return -0.5 * E / (1.0 + n2)

    grid = PeriodicGrid(2, 1.0, 64)
    base = SolverConfig(N=64, h=MODES, kappa=0.3, tol=1e-12)
    sols = [solve_macro(np.eye(2), bact, replace(base, delta=dl), grid)[0].u for dl in (0.2, 0.1, 0.05, 0.0)]
    gaps = [_rel(a, sols[-1]) for a in sols[:-1]]
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_micro_without_particles_is_the_macro_flow():
    ens = ParticleEnsemble.empty(2, 1.0, seed=0)
    cfg = SolverConfig(N=32, h=MODES, kappa=1.0)
    grid = PeriodicGrid(2, 1.0, 32)
    u, log = solve_micro(ens, make_dipole_model(1.0, 1.7, -1, 0.3), cfg, grid)
    ubar, _ = solve_macro(np.eye(2), None, cfg, grid)
    assert log.iterations == 1 and _rel(u.u, ubar.u) < 1e-10


def test_passive_micro_is_a_single_solve():
    ens = micro_ensemble(base_cell(2, 4.0, 1), 0.125)
    cfg = SolverConfig(N=64, h=MODES)
    u, log = solve_micro(ens, make_dipole_model(1.0, 1.7, -1, 0.3), cfg)
    assert log.iterations == 1 and log.converged and u.div_residual < 1e-8


def test_micro_contraction_ratio_scales_with_activity():
    ens = micro_ensemble(base_cell(2, 4.0, 0), 0.125)
    model = make_dipole_model(1.0, 1.7, -1, 0.3, orientation="fixed:1,1", response="linear")
    ratios = []
    for kappa in (0.25, 0.5):
        _, log = solve_micro(ens, model, SolverConfig(N=64, h=MODES, kappa=kappa), None)
        assert log.converged
        ratios.append(np.median(log.ratios))
    assert ratios[1] / ratios[0] == pytest.approx(2.0, rel=1e-3)


def test_micro_scale_guard():
    ens = micro_ensemble(base_cell(2, 4.0, 0), 0.125)
    with pytest.raises(ValueError):
        solve_micro(ens, None, SolverConfig(N=64, delta=0.05, ell=1.0))


def test_micro_ensemble_requires_integer_tiling():
    with pytest.raises(ValueError):
        micro_ensemble(base_cell(2, 4.0, 0), 0.1)
    ens = micro_ensemble(base_cell(2, 4.0, 0), 0.0625)
    assert len(ens) == 16 and ens.L == pytest.approx(1.0)
    assert np.allclose(ens.radii, 0.0625)


def test_tabulated_bact_matches_direct_evaluation():
    base = base_cell(2, 4.0, 0)
    grid = PeriodicGrid(2, 4.0, 32)
    cors = passive_basis_correctors(base, grid)
    model = make_dipole_model(1.0, 1.7, -1, 0.3, response="saturating")
    tab = TabulatedBact([cors], model, 32)
    direct = bact_function(cors, model)
    # the grid-sampled bump is not exactly smooth in its rotation angle
    for E in (shear(2, 0.7), np.array([[0.3, 0.2], [0.2, -0.3]])):
        assert np.abs(tab(E) - direct(E)).max() < 1e-2 * np.abs(direct(E)).max()
    batch = np.stack([shear(2, 0.7), shear(2, -0.2)])
    assert np.allclose(tab(batch)[1], tab(batch[1]))


def test_two_scale_gap_decreases_and_table_format(tmp_path):
    cfg = SolverConfig(h=MODES)
    rows, verdict = two_scale_experiment([0.25, 0.125], cfg, None, seeds=(0,))
    assert verdict and rows[1].l2_gap < rows[0].l2_gap
    path = tmp_path / "t.csv"
    write_table(path, rows + [TwoScaleRow(0.1, 0.2, 0.0, 1, 0.5, 0.4, 3, 0.01, {"x": 7})], ["x"])
    with open(path) as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_HEADER + ("x",)
    assert table[-1][-1] == "7" and len(table) == 4
    with pytest.raises(ValueError):
        two_scale_experiment([0.125, 0.25], cfg, None)


def test_cell_tensors_of_passive_cell():
    cell = cell_tensors(base_cell(2, 4.0, 0), 32, None)
    assert cell.bact is None and np.linalg.eigvalsh(cell.Bpas).min() > 1.0
    assert cell.volume_fraction == pytest.approx(np.pi / 16)
