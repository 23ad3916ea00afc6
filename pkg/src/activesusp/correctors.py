"""Passive and active corrector problems on periodic cells.

The passive corrector ``psi_E`` is the disturbance flow of rigid particles
immersed in the linear flow ``E x``: ``D(psi_E + E x) = 0`` inside every
particle, no net force or torque.  The active corrector ``phi_E`` is the
flow driven by the swim forces evaluated at ``E`` with force-free rigid
particles.  Both use the periodic zero-mean gauge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import ParticleEnsemble
from .forcing import ForceSample, SwimForceModel, evaluate_force
from .stokes import (FlowSolution, PeriodicField, PeriodicGrid, RigidStokesSolver, save_field,
                     write_residual_log)
from .tensors import is_trace_free_symmetric, wrap


@dataclass
class CorrectorSolution:
    """A solved cell problem and its provenance.

    Attributes
    ----------
    kind : str
        ``"passive"``, ``"active"`` or ``"single"``.
    E : ndarray, shape (d, d)
    flow : FlowSolution
    ensemble : ParticleEnsemble
    force : ForceSample or None
        Swim-force density of an active corrector.
    """

    kind: str
    E: np.ndarray
    flow: FlowSolution
    ensemble: ParticleEnsemble
    force: ForceSample | None = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.flow.grid

    @property
    def seed(self):
        return self.ensemble.seed

    @property
    def velocity(self) -> np.ndarray:
        return self.flow.u

    @property
    def reaction_force(self) -> np.ndarray:
        return self.flow.reaction_force

    @property
    def reaction_torque(self) -> np.ndarray:
        return self.flow.reaction_torque

    def strain_hat(self):
        g = self.grid
        return g.strain_hat(g.fft(self.flow.u))

    def strain(self) -> np.ndarray:
        return self.grid.ifft(self.strain_hat())

    def energy_density(self) -> float:
        """Cell average of ``2 |D(u) + E|^2`` (``E = 0`` for active correctors)."""
        g = self.grid
        Dh = self.strain_hat()
        E = self.E if self.kind != "active" else np.zeros_like(self.E)
        # D(u) has zero mean, so the cross term vanishes
        return 2.0 * (g.parseval_mean(Dh, Dh) + float((E * E).sum()))

    def energy_density_quadrature(self) -> float:
        """Same as :meth:`energy_density`, by nodal quadrature."""
        E = self.E if self.kind != "active" else np.zeros_like(self.E)
        D = self.strain() + E[(...,) + (None,) * self.grid.d]
        return 2.0 * float((D**2).sum(axis=(0, 1)).mean())

    def mean_gradient(self) -> np.ndarray:
        g = self.grid
        G = g.grad_hat(g.fft(self.flow.u))
        return G[(slice(None), slice(None)) + (0,) * g.d].real / g.N**g.d

    def gradient_energy(self) -> float:
        return self.flow.gradient_energy()

    def force_work(self) -> float:
        """``int u . f`` over the torus for an active corrector."""
        if self.force is None:
            return 0.0
        return float((self.flow.u * self.force.values).sum()) * self.grid.cell_volume

    def manifest(self) -> str:
        g, fl = self.grid, self.flow
        E = " ".join(repr(float(v)) for v in np.asarray(self.E).ravel())
        rows = [
            ("kind", self.kind),
            ("E", E),
            ("d", g.d),
            ("L", repr(g.L)),
            ("N", g.N),
            ("seed", "none" if self.seed is None else int(self.seed)),
            ("particles", len(self.ensemble)),
            ("iterations", fl.iterations),
            ("div_residual", f"{fl.div_residual:.6e}"),
            ("rigid_residual", f"{fl.rigid_residual:.6e}"),
            ("interior_strain_rms", f"{fl.interior_strain_rms:.6e}"),
            ("converged", fl.converged),
        ]
        rows += sorted(self.meta.items())
        return "".join(f"{k} = {v}\n" for k, v in rows)


def write_corrector(stem, sol: CorrectorSolution) -> list[Path]:
    """Write velocity and pressure snapshots, residual log and manifest.

    Files are ``<stem>.u.bin``, ``<stem>.p.bin``, ``<stem>.residuals.csv``
    and ``<stem>.manifest.txt``.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = [stem.with_name(stem.name + s) for s in (".u.bin", ".p.bin", ".residuals.csv", ".manifest.txt")]
    save_field(paths[0], PeriodicField(sol.grid, sol.flow.u))
    save_field(paths[1], PeriodicField(sol.grid, sol.flow.p))
    write_residual_log(paths[2], sol.flow.residual_history)
    paths[3].write_text(sol.manifest())
    return paths


def _check_strain(E, d):
    E = np.asarray(E, float)
    if E.shape != (d, d):
        raise ValueError(f"strain must be a {d}x{d} matrix")
    if not is_trace_free_symmetric(E, atol=1e-10):
        raise ValueError("strain must be symmetric and trace-free")
    return E


def _solver(ensemble, grid, tol, solver, options):
    if solver is not None:
        if solver.grid != grid or solver.ensemble is not ensemble:
            raise ValueError("solver was built for a different grid or ensemble")
        return solver
    return RigidStokesSolver(grid, ensemble, tol=tol, **options)


def solve_passive_corrector(ensemble: ParticleEnsemble, E, grid: PeriodicGrid, tol: float = 1e-10,
                            *, solver: RigidStokesSolver | None = None, **options) -> CorrectorSolution:
    """Disturbance flow ``psi_E`` of rigid force-free particles in the flow ``E x``.

    A prebuilt ``solver`` for the same grid and ensemble may be passed to
    reuse its setup across strain directions.
    """
    E = _check_strain(E, grid.d)
    flow = _solver(ensemble, grid, tol, solver, options).solve(strain=E, tol=tol)
    return CorrectorSolution("passive", E, flow, ensemble)


def solve_active_corrector(ensemble: ParticleEnsemble, model: SwimForceModel, E, grid: PeriodicGrid,
                           tol: float = 1e-10, *, solver: RigidStokesSolver | None = None,
                           **options) -> CorrectorSolution:
    """Flow ``phi_E`` driven by the swim forces at strain ``E`` around rigid particles."""
    E = _check_strain(E, grid.d)
    force = evaluate_force(model, ensemble, E, grid)
    flow = _solver(ensemble, grid, tol, solver, options).solve(force=force.values, tol=tol)
    return CorrectorSolution("active", E, flow, ensemble, force)


def solve_single_particle(E, L: float, grid: PeriodicGrid, tol: float = 1e-10, *, center=None,
                          **options) -> CorrectorSolution:
    """Passive corrector of one unit particle in a periodic cell of side ``L``."""
    if abs(grid.L - L) > 1e-12 * L:
        raise ValueError("grid and cell size differ")
    ens = ParticleEnsemble.single(grid.d, L, center=center)
    sol = solve_passive_corrector(ens, E, grid, tol, **options)
    sol.kind = "single"
    return sol


def analytic_sphere_corrector(E, x) -> np.ndarray:
    """Whole-space corrector of the unit sphere at the origin.

    ``-E x`` inside the ball and, outside,
    ``-(d+2)/2 (x.Ex) x / |x|^(d+2) (1 - 1/|x|^2) - E x / |x|^(d+2)``.

    Parameters
    ----------
    E : (d, d) array
    x : array of shape (..., d)
    """
    E = np.asarray(E, float)
    x = np.asarray(x, float)
    d = E.shape[0]
    r2 = (x**2).sum(-1)
    Ex = x @ E.T
    xEx = (x * Ex).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rd2 = np.where(r2 > 0, r2, 1.0) ** (-(d + 2) / 2)
        outer = (-(d + 2) / 2 * xEx * rd2 * (1.0 - 1.0 / np.where(r2 > 0, r2, 1.0)))[..., None] * x \
            - Ex * rd2[..., None]
    return np.where((r2 <= 1.0)[..., None], -Ex, outer)


def annulus_error(sol: CorrectorSolution, rmin: float = 1.5, rmax: float = 3.0, center=None) -> float:
    """Relative discrete L2 distance to :func:`analytic_sphere_corrector` on an annulus."""
    g = sol.grid
    c = sol.ensemble.centers[0] if center is None else np.asarray(center, float)
    rel = wrap(g.coords - c.reshape((g.d,) + (1,) * g.d), g.L)
    r = np.sqrt((rel**2).sum(0))
    ann = (r > rmin) & (r < rmax)
    exact = np.moveaxis(analytic_sphere_corrector(sol.E, np.moveaxis(rel[:, ann], 0, -1)), -1, 0)
    diff = sol.flow.u[:, ann] - exact
    return math.sqrt(float((diff**2).sum()) / float((exact**2).sum()))
