"""Microscopic fixed-point solver, macroscopic homogenized solver and
two-scale experiments on the unit torus.

Micro problem (particles of radius ``eps``)
    ``-Lap u + grad p = h (1 - 1_I) + (kappa/eps) sum_n f_n(E_n(u))`` with
    rigid force- and torque-free particles, where ``E_n(u)`` is the
    particle average of ``chi_delta * D(u)``.  Solved by the fixed point
    ``v -> T(v)``: freeze the felt strains, rebuild the swim forces and do
    one constrained Stokes solve.

Macro problem
    ``-div(2 B_pas D(u)) + grad p = (1 - lambda) h + div(2 kappa B_act(chi_delta * D(u)))``,
    solved by the same kind of fixed point; each step is an anisotropic
    Stokes solve done mode by mode.  ``delta = 0`` drops the mollifier.

The bounded domain with a no-slip wall is replaced by the torus with a
mean-zero forcing ``h``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .effective import bact_sample, bpas_sample, passive_basis_correctors
from .ensemble import ParticleEnsemble, volume_fraction
from .forcing import SwimForceModel, evaluate_force
from .stokes import (FlowSolution, Mollifier, PeriodicGrid, RigidStokesSolver, particle_average_strain)
from .tensors import dim_trace_free, from_coords, to_coords, trace_free_basis

CSV_HEADER = ("eps", "delta", "kappa", "seed", "l2_gap", "lowmode_gap", "iters", "ratio")


class ContractionError(RuntimeError):
    """The fixed-point iteration stopped contracting."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


@dataclass
class SolverConfig:
    """Parameters of the micro and macro fixed-point solvers.

    Parameters
    ----------
    kappa : float
        Activity strength.
    delta : float
        Mollifier scale (0 disables the mollifier in the macro solver).
    eps : float
        Particle radius on the unit torus.
    N : int
        Grid points per side.
    tol : float
        Fixed-point tolerance on the relative H1-seminorm increment.
    inner_tol : float
        Tolerance of each constrained Stokes solve.
    maxiter : int
    seed : int
    h : list of dict
        Forcing modes ``{"k": [...], "a": [...]}``, each ``a sin(2 pi k.x)``.
    eta : float
        Exponent of the smallness condition ``kappa ell^(eta - d) <= threshold``.
    ell : float
        Hardcore parameter of the particle configuration, in particle radii.
    threshold : float
    damping : float
        Relaxation factor in (0, 1].
    allow_unresolved_scales : bool
        Run even when ``eps ell > delta``.
    """

    kappa: float = 0.0
    delta: float = 0.25
    eps: float = 0.125
    N: int = 64
    tol: float = 1e-8
    inner_tol: float = 1e-10
    maxiter: int = 50
    seed: int = 0
    h: list = field(default_factory=lambda: [{"k": [0, 1], "a": [1.0, 0.0]}])
    eta: float = 0.5
    ell: float = 1.0
    threshold: float = 1.0
    damping: float = 1.0
    allow_unresolved_scales: bool = False

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.delta < 0 or self.eps <= 0:
            raise ValueError("delta must be nonnegative and eps positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.N < 4 or self.N % 2:
            raise ValueError("N must be an even integer >= 4")
        if self.tol <= 0 or self.inner_tol <= 0 or self.maxiter < 1:
            raise ValueError("tolerances must be positive and maxiter >= 1")
        for mode in self.h:
            if set(mode) != {"k", "a"}:
                raise ValueError("each forcing mode needs exactly the keys 'k' and 'a'")
            if not any(mode["k"]):
                raise ValueError("forcing modes must have a nonzero wave vector")

    def smallness(self, d: int) -> float:
        """``kappa ell^(eta - d)``."""
        return self.kappa * self.ell ** (self.eta - d)

    def guaranteed(self, d: int) -> bool:
        return self.smallness(d) <= self.threshold

    def scales_ok(self) -> bool:
        return self.eps * self.ell <= self.delta


def forcing_field(grid: PeriodicGrid, modes) -> np.ndarray:
    """``sum a sin(2 pi k.x / L)`` on the grid."""
    h = np.zeros((grid.d,) + grid.shape)
    X = grid.coords
    for mode in modes:
        k, a = np.asarray(mode["k"], float), np.asarray(mode["a"], float)
        if len(k) != grid.d or len(a) != grid.d:
            raise ValueError("forcing mode has the wrong dimension")
        phase = 2 * np.pi * np.tensordot(k, X, axes=(0, 0)) / grid.L
        h += a[(...,) + (None,) * grid.d] * np.sin(phase)[None]
    return h


def _seminorm(grid: PeriodicGrid, u) -> float:
    G = grid.grad_hat(grid.fft(u))
    return math.sqrt(grid.parseval_mean(G, G) * grid.volume)


def _fluid_mask(grid: PeriodicGrid, ensemble: ParticleEnsemble) -> np.ndarray:
    mask = np.ones(grid.N**grid.d)
    for c, r in zip(ensemble.centers, ensemble.radii):
        idx, _ = grid.ball_nodes(c, r)
        mask[idx] = 0.0
    return mask.reshape(grid.shape)


@dataclass
class FixedPointLog:
    """Iteration history.

    ``increments`` are the H1-seminorm increments ``|v_k+1 - v_k|``,
    ``relative`` the same divided by ``|v_k+1|`` (the stopping criterion)
    and ``ratios`` the quotients of successive increments.
    """

    increments: list = field(default_factory=list)
    relative: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    guaranteed: bool = True
    notes: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        """Last observed contraction ratio (nan before two increments)."""
        return self.ratios[-1] if self.ratios else float("nan")


def _record(log: FixedPointLog, inc: float, norm: float) -> float:
    if log.increments and log.increments[-1] > 0:
        log.ratios.append(inc / log.increments[-1])
    log.increments.append(inc)
    log.relative.append(inc / max(norm, 1e-300))
    return log.relative[-1]


def _check_divergence(log: FixedPointLog, cfg: SolverConfig, d: int):
    if len(log.ratios) >= 3 and all(r >= 1.0 for r in log.ratios[-3:]):
        raise ContractionError(
            f"fixed point diverges (ratios {', '.join(f'{r:.3g}' for r in log.ratios[-3:])}); "
            f"the smallness condition kappa ell^(eta-d) = {cfg.smallness(d):.3g} <= {cfg.threshold:g} "
            f"is likely violated", log)


def solve_micro(ensemble: ParticleEnsemble, model: SwimForceModel | None, cfg: SolverConfig,
                grid: PeriodicGrid | None = None, *, v0=None, **stokes_options):
    """Fixed point of the microscopic active suspension problem.

    Parameters
    ----------
    ensemble : ParticleEnsemble
        Particles on the unit torus, radius ``cfg.eps``.
    model : SwimForceModel or None
        ``None`` (or ``kappa = 0``) gives the passive problem.
    cfg : SolverConfig
    grid : PeriodicGrid, optional
        Defaults to the unit torus with ``cfg.N`` points per side.

    Returns
    -------
    (FlowSolution, FixedPointLog)

    Raises
    ------
    ContractionError
        When the increment ratio is at least one for three consecutive steps.
    ValueError
        When ``eps ell > delta`` without ``allow_unresolved_scales``.
    """
    d = ensemble.d
    grid = grid or PeriodicGrid(d, 1.0, cfg.N)
    if abs(grid.L - ensemble.L) > 1e-12:
        raise ValueError("micro problem lives on the ensemble torus")
    if not cfg.scales_ok() and not cfg.allow_unresolved_scales:
        raise ValueError(f"eps ell = {cfg.eps * cfg.ell:g} exceeds delta = {cfg.delta:g}")
    log = FixedPointLog(guaranteed=cfg.guaranteed(d))
    if not log.guaranteed:
        log.notes.append(f"kappa ell^(eta-d) = {cfg.smallness(d):.4g} above threshold {cfg.threshold:g}")
    h = forcing_field(grid, cfg.h) * _fluid_mask(grid, ensemble)[None]
    solver = RigidStokesSolver(grid, ensemble, tol=cfg.inner_tol, **stokes_options)
    active = model is not None and cfg.kappa != 0 and not model.is_zero and len(ensemble) > 0
    moll = Mollifier(cfg.delta) if (active and cfg.delta > 0) else None
    noise = model.noise(len(ensemble), d, ensemble.seed) if active else None
    scale = cfg.kappa / cfg.eps

    def T(v):
        f = h
        if active:
            strains = particle_average_strain(v, ensemble, moll, grid)
            f = h + scale * evaluate_force(model, ensemble, strains, grid, noise=noise).values
        return solver.solve(force=f, tol=cfg.inner_tol)

    v = np.zeros((d,) + grid.shape) if v0 is None else np.asarray(v0, float)
    sol = T(v)
    log.iterations = 1
    if not active:
        log.converged = True
        return sol, log
    v = sol.u if v0 is None else cfg.damping * sol.u + (1 - cfg.damping) * v
    prev = sol
    for it in range(2, cfg.maxiter + 1):
        sol = T(v)
        log.iterations = it
        new = cfg.damping * sol.u + (1 - cfg.damping) * v
        inc = _record(log, _seminorm(grid, new - v), _seminorm(grid, new))
        v, prev = new, sol
        if inc < cfg.tol:
            log.converged = True
            break
        _check_divergence(log, cfg, d)
    return prev, log


# --------------------------------------------------------------- macroscopic

def _as_batched(bact):
    """Wrap ``bact`` so that it maps (n, d, d) strains to (n, d, d) stresses."""

    def batched(E):
        try:
            out = np.asarray(bact(E), float)
            if out.shape == E.shape:
                return out
        except (ValueError, TypeError, np.linalg.LinAlgError):
            pass
        return np.array([bact(e) for e in E])

    return batched


class TabulatedBact:
    """``B_act`` of a 2D swimmer model from passive correctors, tabulated in orientation.

    With a Frenkel or fixed orientation rule, the force density at ``E`` is
    the unit-strength pattern for the direction ``e(E)`` scaled by the
    response ``F(E)``; ``B_act`` inherits this structure.  The unit
    patterns are evaluated on ``n_angles`` directions in ``[0, 2 pi)`` and
    interpolated trigonometrically.

    Parameters
    ----------
    corrector_sets : list of lists of CorrectorSolution
        Passive basis correctors of each realization.
    model : SwimForceModel
    n_angles : int
    """

    def __init__(self, corrector_sets, model: SwimForceModel, n_angles: int = 32):
        d = corrector_sets[0][0].grid.d
        if d != 2:
            raise ValueError("orientation tabulation is implemented for d = 2")
        kind = model.orientation.partition(":")[0]
        if kind == "random":
            raise ValueError("orientation noise is not tabulated; average explicitly instead")
        self.model, self.d, self.n = model, d, int(n_angles)
        th = 2 * np.pi * np.arange(self.n) / self.n
        unit = replace(model, response="constant", fbar=1.0)
        table = np.zeros((self.n, dim_trace_free(d)))
        for cors in corrector_sets:
            g, ens = cors[0].grid, cors[0].ensemble
            for i, t in enumerate(th):
                m = replace(unit, orientation=f"fixed:{math.cos(t)!r},{math.sin(t)!r}")
                table[i] += bact_sample(cors, evaluate_force(m, ens, np.zeros((d, d)), g))
        self.table = table / len(corrector_sets)
        self.coef = np.fft.rfft(self.table, axis=0) / self.n

    def unit(self, theta) -> np.ndarray:
        """Coordinates of ``B_act`` per unit strength at direction angles ``theta``."""
        theta = np.asarray(theta, float)
        k = np.arange(self.coef.shape[0])
        w = np.where((k == 0) | ((self.n % 2 == 0) & (k == self.n // 2)), 1.0, 2.0)
        ph = np.exp(1j * np.multiply.outer(theta, k))
        return np.einsum("...k,ka->...a", ph * w, self.coef).real

    def __call__(self, E):
        E = np.asarray(E, float)
        single = E.ndim == 2
        Es = E[None] if single else E.reshape(-1, 2, 2)
        dirs = self.model.directions(Es)
        F = np.array([self.model.strength(e_, v) for e_, v in zip(Es, dirs)])
        c = F[:, None] * self.unit(np.arctan2(dirs[:, 1], dirs[:, 0]))
        out = from_coords(c, 2)
        return out[0] if single else out.reshape(E.shape)


def solve_macro(Bpas, bact, cfg: SolverConfig, grid: PeriodicGrid | None = None, *,
                volume_fraction: float = 0.0, d: int | None = None):
    """Fixed point of the homogenized problem on the unit torus.

    Parameters
    ----------
    Bpas : (m, m) array
        Passive effective tensor in trace-free coordinates; must be
        symmetric positive definite.
    bact : callable or None
        ``E -> B_act(E)`` as a (d, d) matrix; batched over leading axes
        when possible.
    cfg : SolverConfig
        ``kappa``, ``delta`` (0: no mollifier), ``N``, ``tol``, ``maxiter``,
        ``h`` and ``damping`` are used.
    volume_fraction : float
        The forcing is ``(1 - volume_fraction) h``.

    Returns
    -------
    (FlowSolution, FixedPointLog)
    """
    Bpas = np.asarray(Bpas, float)
    if d is None:
        d = {2: 2, 5: 3}[Bpas.shape[0]]
    if Bpas.shape != (dim_trace_free(d),) * 2:
        raise ValueError("B_pas has the wrong shape")
    if not np.allclose(Bpas, Bpas.T, rtol=1e-8, atol=1e-12) or np.linalg.eigvalsh(0.5 * (Bpas + Bpas.T)).min() <= 0:
        raise ValueError("B_pas must be symmetric positive definite")
    grid = grid or PeriodicGrid(d, 1.0, cfg.N)
    Phi = trace_free_basis(d)
    K = grid.wavevectors
    # per-mode operator 2 G^T B G with G[a] = Phi_a k, plus k k^T on the gradient part
    G = np.einsum("aij,j...->...ai", Phi, K)
    M = 2.0 * np.einsum("...ai,ab,...bj->...ij", G, 0.5 * (Bpas + Bpas.T), G)
    Kl = np.moveaxis(K, 0, -1)
    k2 = (Kl**2).sum(-1)
    kk = Kl[..., :, None] * Kl[..., None, :]
    P = np.eye(d) - kk * np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)[..., None, None]
    A = P @ M @ P + kk
    A[k2 == 0] = np.eye(d)
    Ainv = np.linalg.inv(A)

    h = (1.0 - volume_fraction) * forcing_field(grid, cfg.h)
    hh = grid.fft(h)
    zero = (slice(None),) + (0,) * d
    hh[zero] = 0.0
    active = bact is not None and cfg.kappa != 0
    moll = Mollifier(cfg.delta).symbol(grid) if (active and cfg.delta > 0) else None
    batched = _as_batched(bact) if active else None

    def T(uh):
        gh = hh
        if active:
            Dh = grid.strain_hat(uh)
            if moll is not None:
                Dh = Dh * moll
            D = np.moveaxis(grid.ifft(Dh).reshape(d, d, -1), -1, 0)
            S = np.moveaxis(batched(D), 0, -1).reshape((d, d) + grid.shape)
            gh = hh + grid.div_tensor_hat(grid.fft(2.0 * cfg.kappa * S))
        gl = np.moveaxis(gh, 0, -1)
        ul = np.einsum("...ij,...jk,...k->...i", Ainv, P, gl)
        ul[k2 == 0] = 0.0
        # pressure from the gradient part of the residual
        rl = gl - np.einsum("...ij,...j->...i", M, ul)
        ph = -1j * (Kl * rl).sum(-1) * np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        return np.moveaxis(ul, -1, 0), ph

    log = FixedPointLog()
    uh = np.zeros_like(hh)
    uh, ph = T(uh)
    log.iterations = 1
    if active:
        for it in range(2, cfg.maxiter + 1):
            new, ph = T(uh)
            new = cfg.damping * new + (1 - cfg.damping) * uh
            dn = math.sqrt(grid.parseval_mean(grid.grad_hat(new - uh), grid.grad_hat(new - uh)))
            nn = math.sqrt(grid.parseval_mean(grid.grad_hat(new), grid.grad_hat(new)))
            inc = _record(log, dn, nn)
            uh = new
            log.iterations = it
            if inc < cfg.tol:
                break
            _check_divergence(log, cfg, d)
        log.converged = bool(log.relative and log.relative[-1] < cfg.tol)
    else:
        log.converged = True
    u, p = grid.ifft(uh), grid.ifft(ph)
    div = float(np.abs(grid.ifft(grid.div_hat(uh))).max())
    return FlowSolution(grid, u, p, div_residual=div, iterations=log.iterations,
                        reaction_force=np.zeros((0, d)), reaction_torque=np.zeros((0, d, d)),
                        converged=log.converged), log


def one_mode_solution(Bpas, k, a, d: int, volume_fraction: float = 0.0):
    """Closed-form passive macro velocity amplitude for ``h = a sin(2 pi k.x)``.

    Returns the vector ``U`` with ``u = U sin(2 pi k.x)``: the divergence-free
    part of ``a`` divided by the directional viscosity on the mode.
    """
    Phi = trace_free_basis(d)
    kv = 2 * np.pi * np.asarray(k, float)
    G = np.einsum("aij,j->ai", Phi, kv)
    M = 2.0 * G.T @ np.asarray(Bpas, float) @ G
    Pk = np.eye(d) - np.outer(kv, kv) / (kv @ kv)
    A = Pk @ M @ Pk + np.outer(kv, kv)
    return np.linalg.solve(A, Pk @ ((1 - volume_fraction) * np.asarray(a, float)))


# ------------------------------------------------------------ two-scale runs

def base_cell(d: int, L0: float = 4.0, seed: int = 0) -> ParticleEnsemble:
    """One unit particle at a seeded random position in a cell of side ``L0``."""
    rng = np.random.default_rng(seed)
    ell = 0.5 * (L0 - 2.0)
    ens = ParticleEnsemble(d, L0, ell, rng.random((1, d)) * L0, np.ones(1), seed)
    return ens


def micro_ensemble(base: ParticleEnsemble, eps: float) -> ParticleEnsemble:
    """Tile ``base`` so that its unit particles, shrunk by ``eps``, fill the unit torus."""
    reps = 1.0 / (eps * base.L)
    n = int(round(reps))
    if n < 1 or abs(reps - n) > 1e-9:
        raise ValueError(f"1/(eps L0) = {reps:g} must be a positive integer")
    return base.tiled(n).scaled(eps)


@dataclass
class CellTensors:
    """Effective tensors of a periodic base cell."""

    Bpas: np.ndarray
    bact: object
    volume_fraction: float
    correctors: list


def cell_tensors(base: ParticleEnsemble, N0: int, model: SwimForceModel | None,
                 tol: float = 1e-10, n_angles: int = 32, **options) -> CellTensors:
    """Exact effective tensors of a periodic base cell (no Monte Carlo)."""
    grid = PeriodicGrid(base.d, base.L, N0)
    cors = passive_basis_correctors(base, grid, tol, **options)
    bact = None
    if model is not None and not model.is_zero:
        bact = TabulatedBact([cors], model, n_angles)
    return CellTensors(bpas_sample(cors), bact, volume_fraction(base), cors)


def _gaps(grid: PeriodicGrid, u, ubar, n_low: int = 8):
    uh, bh = grid.fft(u), grid.fft(ubar)
    diff = uh - bh
    l2 = math.sqrt(grid.parseval_mean(diff, diff) / max(grid.parseval_mean(bh, bh), 1e-300))
    K = grid.wavevectors
    kint = np.rint(np.abs(K) * grid.L / (2 * np.pi))
    low = np.all(kint <= n_low // 2, axis=0)
    Gd, Gb = grid.grad_hat(diff) * low, grid.grad_hat(bh) * low
    lm = math.sqrt(grid.parseval_mean(Gd, Gd) / max(grid.parseval_mean(Gb, Gb), 1e-300))
    return l2, lm


@dataclass
class TwoScaleRow:
    eps: float
    delta: float
    kappa: float
    seed: int
    l2_gap: float
    lowmode_gap: float
    iters: int
    ratio: float
    extra: dict = field(default_factory=dict)

    def as_tuple(self):
        return (self.eps, self.delta, self.kappa, self.seed, self.l2_gap, self.lowmode_gap, self.iters,
                self.ratio)


def two_scale_row(eps: float, cfg: SolverConfig, model: SwimForceModel | None, L0: float = 4.0,
                  cells_per_radius: int = 8, macro_delta: float | None = None) -> TwoScaleRow:
    """Micro solve at ``eps`` against the macro solve with the base-cell tensors."""
    base = base_cell(2 if len(cfg.h[0]["k"]) == 2 else 3, L0, cfg.seed)
    N = int(round(cells_per_radius / eps))
    N0 = int(round(cells_per_radius * L0))
    c = replace(cfg, eps=eps, N=N, ell=base.ell)
    cell = cell_tensors(base, N0, model if cfg.kappa else None, tol=cfg.inner_tol)
    ens = micro_ensemble(base, eps)
    grid = PeriodicGrid(base.d, 1.0, N)
    u, log = solve_micro(ens, model, c, grid)
    mc = replace(c, delta=c.delta if macro_delta is None else macro_delta)
    ubar, mlog = solve_macro(cell.Bpas, cell.bact, mc, grid, volume_fraction=cell.volume_fraction, d=base.d)
    l2, lm = _gaps(grid, u.u, ubar.u)
    return TwoScaleRow(eps, cfg.delta, cfg.kappa, cfg.seed, l2, lm, log.iterations, log.ratio,
                       {"macro_iters": mlog.iterations, "guaranteed": log.guaranteed})


def _row_star(args):
    return two_scale_row(*args)


def two_scale_experiment(eps_list, cfg: SolverConfig, model: SwimForceModel | None, seeds=(0,),
                         L0: float = 4.0, workers: int = 1):
    """Table of micro/macro gaps over decreasing ``eps`` (rows independent).

    Returns ``(rows, verdict)``; the verdict is true when the L2 gap
    decreases strictly along ``eps`` for every seed.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    jobs = [(e, replace(cfg, seed=s), model, L0) for s in seeds for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_row_star, jobs))
    else:
        rows = [_row_star(j) for j in jobs]
    verdict = True
    for s in seeds:
        gaps = [r.l2_gap for r in rows if r.seed == s]
        verdict &= all(b < a for a, b in zip(gaps, gaps[1:]))
    return rows, bool(verdict)


def delta_limit_experiment(pairs, cfg: SolverConfig, model: SwimForceModel | None, L0: float = 4.0):
    """Rows over ``(delta, eps)`` pairs comparing ``u_eps``, ``u_delta`` and ``u_0``.

    Each row carries the usual gaps plus ``macro_gap`` (relative L2 distance
    of the macro solutions at ``delta`` and at ``delta = 0``) and the
    exponent ``s = log(eps)/log(delta)`` of the coupling.
    """
    rows = []
    for delta, eps in pairs:
        c = replace(cfg, delta=delta)
        row = two_scale_row(eps, c, model, L0)
        base = base_cell(len(cfg.h[0]["k"]), L0, cfg.seed)
        N = int(round(8 / eps))
        cell = cell_tensors(base, int(round(8 * L0)), model if cfg.kappa else None, tol=cfg.inner_tol)
        grid = PeriodicGrid(base.d, 1.0, N)
        ud, _ = solve_macro(cell.Bpas, cell.bact, replace(c, N=N), grid,
                            volume_fraction=cell.volume_fraction, d=base.d)
        u0, _ = solve_macro(cell.Bpas, cell.bact, replace(c, N=N, delta=0.0), grid,
                            volume_fraction=cell.volume_fraction, d=base.d)
        row.extra["macro_gap"], _ = _gaps(grid, ud.u, u0.u)
        row.extra["s_exponent"] = math.log(eps) / math.log(delta) if 0 < delta < 1 else float("nan")
        rows.append(row)
    return rows


def write_table(path, rows, extra_columns=()):
    """CSV with the standard header plus any requested extra columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER + tuple(extra_columns))
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()]
                       + [r.extra.get(c, "") for c in extra_columns])
