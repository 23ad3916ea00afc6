"""Effective viscosity tensors from periodic cell problems.

For every realization of the particle configuration the passive correctors
``psi_a`` of the orthonormal strain basis ``Phi_a`` are solved once.  Then

* ``B_pas[a, b] = avg (D(psi_a) + Phi_a) : (D(psi_b) + Phi_b)``,
* ``b . Phi_a = -L^-d sum_n int chi_n (p_a - <p_a>_fluid)``,
* ``2 B_act(E) . Phi_a = -L^-d sum_n int (psi_a + Phi_a (x - x_n)) . f_n(E)``,
* ``F(E) . Phi_a = -L^-d sum_n int Phi_a (x - x_n) . f_n(E)``.

Only passive correctors enter ``B_act``.  Active correctors ``phi_E`` give
the companion quantities ``C(E)`` and ``c(E)`` through the particle
stresslets, and ``B_act = C + F/2`` holds realization by realization up to
solver tolerance.  Averages over realizations carry standard errors.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correctors import CorrectorSolution, solve_active_corrector, solve_passive_corrector
from .forcing import SwimForceModel, evaluate_force
from .stokes import PeriodicGrid, RigidStokesSolver
from .tensors import BASIS_CONVENTION, dim_trace_free, from_coords, to_coords, trace_free_basis


def _mean_se(samples):
    a = np.asarray(samples, float)
    if len(a) == 0:
        raise ValueError("no realizations")
    se = a.std(axis=0, ddof=1) / math.sqrt(len(a)) if len(a) > 1 else np.zeros(a.shape[1:])
    return a.mean(axis=0), se


def _fluid_pressure_mean(flow) -> float:
    """Mean pressure over the fluid, weighting nodes by ``1 - sum_n chi_n``."""
    g = flow.grid
    solid = np.zeros(g.N**g.d)
    for idx, chi in zip(flow.patches, flow.indicators):
        solid[idx] += chi
    fluid = np.clip(1.0 - solid, 0.0, 1.0)
    return float((fluid * flow.p.reshape(-1)).sum() / fluid.sum())


def _trace_moment(flow) -> float:
    """``-sum_n int chi_n (p - <p>_fluid)``: trace of the stresslets over ``d``."""
    if not flow.patches:
        return 0.0
    c = _fluid_pressure_mean(flow)
    pf = flow.p.reshape(-1)
    tot = sum(float((chi * (pf[idx] - c)).sum()) for idx, chi in zip(flow.patches, flow.indicators))
    return -tot * flow.grid.cell_volume


def _check_sets(corrector_sets):
    sets = [list(s) for s in corrector_sets]
    if not sets:
        raise ValueError("need at least one realization")
    g0 = sets[0][0].grid
    m = dim_trace_free(g0.d)
    Phi = trace_free_basis(g0.d)
    for s in sets:
        if len(s) != m:
            raise ValueError(f"each realization needs {m} basis correctors")
        for a, c in enumerate(s):
            if c.grid != g0:
                raise ValueError("correctors were solved on different (d, L, N)")
            if c.kind not in ("passive", "single"):
                raise ValueError("passive correctors required")
            if not np.allclose(c.E, Phi[a], atol=1e-12):
                raise ValueError("correctors must follow the trace-free basis order")
            if c.ensemble is not s[0].ensemble:
                raise ValueError("basis correctors of one realization must share the ensemble")
    return sets, g0, Phi


def passive_basis_correctors(ensemble, grid: PeriodicGrid, tol: float = 1e-10,
                             solver: RigidStokesSolver | None = None, **options) -> list[CorrectorSolution]:
    """Solve ``psi_a`` for every basis strain ``Phi_a`` with one shared solver."""
    solver = solver or RigidStokesSolver(grid, ensemble, tol=tol, **options)
    return [solve_passive_corrector(ensemble, P, grid, tol, solver=solver) for P in trace_free_basis(grid.d)]


# ------------------------------------------------------------ single realization

def bpas_sample(correctors) -> np.ndarray:
    g = correctors[0].grid
    Dh = [c.strain_hat() for c in correctors]
    return np.array([[g.parseval_mean(a, b) for b in Dh] for a in Dh]) + np.eye(len(Dh))


def bpas_sample_stresslet(correctors) -> np.ndarray:
    """``B_pas`` from the particle stresslets instead of the energy."""
    g = correctors[0].grid
    Phi = trace_free_basis(g.d)
    out = np.eye(len(correctors))
    for b, c in enumerate(correctors):
        if c.flow.patches:
            S = c.flow.particle_stress().sum(0) / g.volume
            out[:, b] += 0.5 * np.einsum("aij,ij->a", Phi, S)
    return out


def bbar_sample(correctors) -> np.ndarray:
    g = correctors[0].grid
    return np.array([_trace_moment(c.flow) for c in correctors]) / g.volume


def bact_sample(correctors, force) -> np.ndarray:
    """Coordinates of ``B_act(E)`` for one realization and its force sample."""
    g = correctors[0].grid
    Phi = trace_free_basis(g.d)
    M = force.first_moments().sum(0) if force.particles else np.zeros((g.d, g.d))
    work = np.array([float((c.flow.u * force.values).sum()) * g.cell_volume for c in correctors])
    return -0.5 * (work + np.einsum("aij,ij->a", Phi, M)) / g.volume


def fbar_sample(force) -> np.ndarray:
    g = force.grid
    Phi = trace_free_basis(g.d)
    M = force.first_moments().sum(0) if force.particles else np.zeros((g.d, g.d))
    return -np.einsum("aij,ij->a", Phi, M) / g.volume


def active_stress_sample(active: CorrectorSolution):
    """``(C(E) coordinates, c(E))`` from the stresslets of an active corrector."""
    g = active.grid
    Phi = trace_free_basis(g.d)
    if not active.flow.patches:
        return np.zeros(len(Phi)), 0.0
    S = active.flow.particle_stress().sum(0) / g.volume
    C = 0.5 * np.einsum("aij,ij->a", Phi, S)
    return C, _trace_moment(active.flow) / g.volume


# ------------------------------------------------------------ assembly

def assemble_Bpas(corrector_sets):
    """Passive effective viscosity in the trace-free basis.

    Parameters
    ----------
    corrector_sets : iterable of lists
        For each realization, the basis correctors from
        :func:`passive_basis_correctors`.

    Returns
    -------
    B, se : (m, m) arrays
    """
    sets, _, _ = _check_sets(corrector_sets)
    return _mean_se([bpas_sample(s) for s in sets])


def assemble_bbar(corrector_sets):
    """Pressure-moment vector ``b`` (coordinates) and its standard error."""
    sets, _, _ = _check_sets(corrector_sets)
    return _mean_se([bbar_sample(s) for s in sets])


def assemble_Bact(corrector_sets, model: SwimForceModel, E, ensembles=None):
    """Active effective viscosity ``B_act(E)`` as a (d, d) matrix with errors.

    The swim forces of each realization are sampled on the ensemble its
    correctors were solved for.  If ``ensembles`` is given it must list the
    same realizations in the same order.
    """
    sets, g, _ = _check_sets(corrector_sets)
    if ensembles is not None:
        ensembles = list(ensembles)
        if len(ensembles) != len(sets):
            raise ValueError("one ensemble per corrector realization required")
        for s, ens in zip(sets, ensembles):
            own = s[0].ensemble
            if ens.seed != own.seed or len(ens) != len(own) or not np.array_equal(ens.centers, own.centers):
                raise ValueError(f"realization seed mismatch: correctors {own.seed}, ensemble {ens.seed}")
    E = np.asarray(E, float)
    return _mean_se([from_coords(bact_sample(s, evaluate_force(model, s[0].ensemble, E, g)), g.d)
                     for s in sets])


def assemble_F(model: SwimForceModel, ensembles, E, grid: PeriodicGrid):
    """``F(E)`` as a (d, d) matrix with errors; pure quadrature of the forces."""
    E = np.asarray(E, float)
    return _mean_se([from_coords(fbar_sample(evaluate_force(model, ens, E, grid)), grid.d)
                     for ens in ensembles])


def assemble_cbar(active_correctors):
    """``c(E)`` with its standard error from active correctors at one ``E``."""
    return _mean_se([active_stress_sample(a)[1] for a in active_correctors])


def assemble_Cbar(active_correctors):
    """``C(E)`` as a (d, d) matrix with errors from active correctors."""
    d = active_correctors[0].grid.d
    return _mean_se([from_coords(active_stress_sample(a)[0], d) for a in active_correctors])


def total_viscosity(Bpas, Bact, kappa: float, E) -> np.ndarray:
    """``B_pas E + kappa B_act(E)``; ``Bact`` is a matrix (already at ``E``) or a callable."""
    E = np.asarray(E, float)
    passive = from_coords(np.asarray(Bpas) @ to_coords(E), E.shape[0])
    if kappa == 0:
        return passive
    active = Bact(E) if callable(Bact) else np.asarray(Bact, float)
    return passive + kappa * active


def bact_function(correctors, model: SwimForceModel):
    """``E -> B_act(E)`` for one realization with fixed passive correctors."""
    g = correctors[0].grid
    ens = correctors[0].ensemble
    noise = model.noise(len(ens), g.d, ens.seed)

    def bact(E):
        E = np.asarray(E, float)
        return from_coords(bact_sample(correctors, evaluate_force(model, ens, E, g, noise=noise)), g.d)

    return bact


@dataclass
class LinearizationReport:
    steps: np.ndarray
    estimates: np.ndarray
    richardson: np.ndarray
    order: float
    inconclusive: bool


def linearize_Bact(bact, E, F, h: float = 0.1, levels: int = 3, noise: float = 0.0) -> LinearizationReport:
    """Central-difference derivative of ``bact`` at ``E`` in direction ``F``.

    Steps ``h, h/2, h/4, ...``; the observed order is
    ``log2(|D_h - D_h/2| / |D_h/2 - D_h/4|)``.  The result is flagged
    inconclusive when successive differences are not above ``noise``
    (an absolute error level of a single evaluation of ``bact``).
    """
    if levels < 3:
        raise ValueError("three step levels are needed to observe an order")
    E, F = np.asarray(E, float), np.asarray(F, float)
    steps = h / 2.0 ** np.arange(levels)
    est = np.array([(bact(E + s * F) - bact(E - s * F)) / (2 * s) for s in steps])
    diffs = np.array([np.linalg.norm(est[i] - est[i + 1]) for i in range(levels - 1)])
    floor = np.array([2 * noise / s for s in steps[1:]])
    inconclusive = bool(np.any(diffs <= np.maximum(floor, 1e-13 * max(1.0, np.abs(est).max()))))
    order = float(np.log2(diffs[-2] / diffs[-1])) if not inconclusive else float("nan")
    rich = (4 * est[-1] - est[-2]) / 3
    return LinearizationReport(steps, est, rich, order, inconclusive)


def extrapolate_in_L(Ls, values, d: int, se=None):
    """Least-squares fit ``value = a + b L^-d``.

    Returns ``(a, b, a_se)``; ``a_se`` propagates the given per-point
    standard errors (zero when omitted).  Values may be arrays.
    """
    Ls = np.asarray(Ls, float)
    vals = np.asarray(values, float)
    if len(Ls) != len(vals):
        raise ValueError("one value per box size")
    if len(Ls) < 2:
        raise ValueError("at least two box sizes are needed")
    A = np.stack([np.ones_like(Ls), Ls ** (-d)], axis=1)
    pinv = np.linalg.pinv(A)
    coef = np.tensordot(pinv, vals, axes=(1, 0))
    if se is None:
        a_se = np.zeros(vals.shape[1:])
    else:
        a_se = np.sqrt(np.tensordot(pinv[0] ** 2, np.asarray(se, float) ** 2, axes=(0, 0)))
    return coef[0], coef[1], a_se


# ------------------------------------------------------------ full reports

def realization_tensors(ensemble, N: int, model: SwimForceModel | None, queries, tol: float = 1e-10,
                        with_active: bool = True, solver_options: dict | None = None) -> dict:
    """All per-realization samples for one ensemble (picklable result)."""
    grid = PeriodicGrid(ensemble.d, ensemble.L, N)
    solver = RigidStokesSolver(grid, ensemble, tol=tol, **(solver_options or {}))
    cors = passive_basis_correctors(ensemble, grid, tol, solver=solver)
    out = {"Bpas": bpas_sample(cors), "bbar": bbar_sample(cors), "seed": ensemble.seed,
           "count": len(ensemble), "Bact": [], "F": [], "C": [], "c": []}
    for E in queries:
        E = np.asarray(E, float)
        if model is None:
            m = dim_trace_free(grid.d)
            for key in ("Bact", "F", "C"):
                out[key].append(np.zeros(m))
            out["c"].append(0.0)
            continue
        force = evaluate_force(model, ensemble, E, grid)
        out["Bact"].append(bact_sample(cors, force))
        out["F"].append(fbar_sample(force))
        if with_active:
            act = solve_active_corrector(ensemble, model, E, grid, tol, solver=solver)
            C, c = active_stress_sample(act)
        else:
            C, c = np.full(len(out["F"][-1]), np.nan), np.nan
        out["C"].append(C)
        out["c"].append(c)
    return out


@dataclass
class EffectiveTensors:
    """Monte Carlo estimates of the effective tensors; coordinates in the trace-free basis."""

    d: int
    Bpas: np.ndarray
    Bpas_se: np.ndarray
    bbar: np.ndarray
    bbar_se: np.ndarray
    queries: list = field(default_factory=list)
    Bact: list = field(default_factory=list)
    Bact_se: list = field(default_factory=list)
    F: list = field(default_factory=list)
    F_se: list = field(default_factory=list)
    C: list = field(default_factory=list)
    C_se: list = field(default_factory=list)
    cbar: list = field(default_factory=list)
    cbar_se: list = field(default_factory=list)
    entry_se: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def Bact_matrix(self, q: int) -> np.ndarray:
        return from_coords(self.Bact[q], self.d)

    def F_matrix(self, q: int) -> np.ndarray:
        return from_coords(self.F[q], self.d)

    def to_dict(self) -> dict:
        def arr(a):
            return np.asarray(a, float).tolist()

        return {
            "basis": BASIS_CONVENTION,
            "d": self.d,
            "Bpas": arr(self.Bpas), "Bpas_se": arr(self.Bpas_se),
            "bbar": arr(self.bbar), "bbar_se": arr(self.bbar_se),
            "queries": [
                {"E": arr(E),
                 "Bact": arr(from_coords(self.Bact[q], self.d)), "Bact_se": arr(self.entry_se["Bact"][q]),
                 "Bact_coords": arr(self.Bact[q]), "Bact_coords_se": arr(self.Bact_se[q]),
                 "F": arr(from_coords(self.F[q], self.d)), "F_se": arr(self.entry_se["F"][q]),
                 "C": arr(from_coords(self.C[q], self.d)), "C_se": arr(self.entry_se["C"][q]),
                 "cbar": float(self.cbar[q]), "cbar_se": float(self.cbar_se[q])}
                for q, E in enumerate(self.queries)
            ],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def reduce_realizations(d: int, samples: list, queries, provenance: dict | None = None) -> EffectiveTensors:
    """Average per-realization samples (in list order) into a report."""
    B, Bse = _mean_se([s["Bpas"] for s in samples])
    b, bse = _mean_se([s["bbar"] for s in samples])
    rep = EffectiveTensors(d, B, Bse, b, bse, [np.asarray(E, float) for E in queries])
    rep.entry_se = {"Bact": [], "F": [], "C": []}
    for q in range(len(rep.queries)):
        for key, dst, dse in (("Bact", rep.Bact, rep.Bact_se), ("F", rep.F, rep.F_se),
                              ("C", rep.C, rep.C_se), ("c", rep.cbar, rep.cbar_se)):
            mean, se = _mean_se([s[key][q] for s in samples])
            dst.append(mean)
            dse.append(se)
            if key != "c":
                mats = [from_coords(s[key][q], d) for s in samples]
                rep.entry_se.setdefault(key, []).append(_mean_se(mats)[1])
    rep.provenance = dict(provenance or {})
    rep.provenance.update({"n_realizations": len(samples),
                           "seeds": [s["seed"] for s in samples],
                           "mean_particles": float(np.mean([s["count"] for s in samples]))})
    return rep


def compute_effective_tensors(ensembles, N: int, model: SwimForceModel | None = None, queries=(),
                              tol: float = 1e-10, with_active: bool = True, workers: int = 1,
                              solver_options: dict | None = None) -> EffectiveTensors:
    """Solve every realization (optionally in parallel) and reduce in input order."""
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("need at least one realization")
    d, L = ensembles[0].d, ensembles[0].L
    if any(e.d != d or e.L != L for e in ensembles):
        raise ValueError("realizations must share dimension and box size")
    args = [(e, N, model, list(queries), tol, with_active, solver_options) for e in ensembles]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_realization_star, args))
    else:
        samples = [realization_tensors(*a) for a in args]
    return reduce_realizations(d, samples, queries, {"d": d, "L": L, "N": N, "tol": tol})


def _realization_star(args):
    return realization_tensors(*args)
