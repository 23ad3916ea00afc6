"""Swimming-force densities of active particles.

Each particle pushes on the fluid in the shell ``1 < |x - x_n|/r_n < 2``
around it.  The force-dipole model used here concentrates that push on a
small bump of width ``w`` (in particle radii) placed ``offset`` radii from
the center along the swimming direction ``e``, ahead of the particle for
a puller (``gamma = +1``) and behind it for a pusher (``gamma = -1``):

    exterior:  -F(E) * bump_w(x - x_n - gamma * offset * r_n * e) * e
    interior:  +F(E) * e / |B|

with ``bump_w`` of unit mass in particle units.  The particle body carries
the propulsion ``F e`` and the total force of the pair vanishes.  Values
are independent of ``r_n``, so a particle of radius ``r`` exerts the
total propulsion ``F r^d``.  The discrete density is then made exactly
neutral (force and torque) by adding the rigid-motion-shaped field on the
shell that cancels the quadrature residue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .tensors import unit_ball_volume, wrap

ORIENTATION_KINDS = ("frenkel-shear", "fixed:<vector>", "random:<concentration>")
RESPONSES = ("constant", "linear", "saturating")


class ResolutionError(ValueError):
    """The grid is too coarse for the regularized dipole."""


def shear_orientation(E, sign: int = 1, *, with_flag: bool = False):
    """Unit eigenvector of ``E`` for its largest eigenvalue, times ``sign``.

    The sign is fixed so that the first nonzero component is positive
    before ``sign`` is applied.  When the top eigenvalue is repeated (for
    instance ``E = 0``) the vector is the normalized projection onto the
    top eigenspace of the first coordinate vector ``e_1, e_2, ...`` that is
    not orthogonal to it.

    Returns
    -------
    e : ndarray, shape (d,)
    degenerate : bool
        Only when ``with_flag`` is true.
    """
    E = np.asarray(E, float)
    S = 0.5 * (E + E.T)
    w, V = np.linalg.eigh(S)
    d = len(w)
    tol = 1e-12 * max(1.0, float(np.abs(w).max()))
    top = w[-1] - w <= tol
    degenerate = int(top.sum()) > 1
    if degenerate:
        Q = V[:, top]
        for i in range(d):
            v = Q @ Q[i]
            if np.linalg.norm(v) > 1e-8:
                break
        e = v / np.linalg.norm(v)
    else:
        e = V[:, -1].copy()
    first = np.flatnonzero(np.abs(e) > 1e-12)[0]
    if e[first] < 0:
        e = -e
    e = e * (1.0 if sign >= 0 else -1.0)
    return (e, degenerate) if with_flag else e


@lru_cache(maxsize=None)
def _bump_mass(d: int) -> float:
    """Integral over the unit ball of ``exp(-1/(1-|s|^2))``."""
    sphere = {2: 2 * math.pi, 3: 4 * math.pi}[d]
    val, _ = integrate.quad(lambda r: r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13)
    return sphere * val


def bump(y, w: float) -> np.ndarray:
    """Smooth compactly supported unit-mass bump of radius ``w``; ``y`` has shape (..., d)."""
    y = np.asarray(y, float)
    d = y.shape[-1]
    s2 = (y**2).sum(-1) / w**2
    out = np.zeros(s2.shape)
    inside = s2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
    return out / (_bump_mass(d) * w**d)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("orientation vector must be nonzero")
    return v / n


def _skew_basis(d: int) -> np.ndarray:
    mats = []
    for i in range(d):
        for j in range(i + 1, d):
            T = np.zeros((d, d))
            T[i, j], T[j, i] = 1.0, -1.0
            mats.append(T)
    return np.array(mats)


@dataclass(frozen=True)
class ParticleForce:
    """Force density of one particle on its support nodes.

    ``values`` has shape (d, k) for the nodes ``nodes`` (flat indices) at
    displacements ``disp`` (shape (k, d)) from the center.
    """

    nodes: np.ndarray
    disp: np.ndarray
    values: np.ndarray
    direction: np.ndarray
    strength: float
    propulsion: np.ndarray
    torque: np.ndarray


@dataclass
class ForceSample:
    """Total density on the grid plus the per-particle pieces it is made of."""

    grid: object
    values: np.ndarray
    particles: list = field(default_factory=list)

    @property
    def propulsion(self) -> np.ndarray:
        d = self.grid.d
        return np.array([p.propulsion for p in self.particles]).reshape(-1, d)

    @property
    def directions(self) -> np.ndarray:
        d = self.grid.d
        return np.array([p.direction for p in self.particles]).reshape(-1, d)

    def net_force(self) -> np.ndarray:
        """Per-particle integral of the density over its support, shape (n, d)."""
        hd = self.grid.cell_volume
        return np.array([p.values.sum(1) * hd for p in self.particles]).reshape(-1, self.grid.d)

    def net_torque(self) -> np.ndarray:
        """Per-particle ``skew(int f (x) (x - x_n))``, shape (n, d, d)."""
        hd, d = self.grid.cell_volume, self.grid.d
        out = np.zeros((len(self.particles), d, d))
        for n, p in enumerate(self.particles):
            M = p.values @ p.disp * hd
            out[n] = 0.5 * (M - M.T)
        return out

    def first_moments(self) -> np.ndarray:
        """Per-particle ``int f (x) (x - x_n)``, shape (n, d, d)."""
        hd, d = self.grid.cell_volume, self.grid.d
        return np.array([p.values @ p.disp * hd for p in self.particles]).reshape(-1, d, d)


@dataclass(frozen=True)
class SwimForceModel:
    """Regularized force-dipole swimmer.

    Parameters
    ----------
    fbar : float
        Propulsion magnitude ``|f_bar|`` at the reference response.
    offset : float
        Distance of the dipole point from the center, in particle radii;
        must lie in (1, 2).
    gamma : int
        +1 for a puller, -1 for a pusher.
    width : float
        Bump radius ``w`` in particle radii.
    orientation : str
        ``"frenkel-shear"`` (top eigenvector of the felt strain),
        ``"fixed:<v1,v2[,v3]>"`` or ``"random:<kappa>"`` (von Mises-Fisher
        noise of concentration ``kappa`` around the Frenkel direction,
        drawn once per particle and realization).
    response : str
        Strength law ``F(E)`` in terms of ``zeta = e.E.e``: ``"constant"``
        (``fbar``), ``"linear"`` (``fbar zeta / scale``) or
        ``"saturating"`` (``fbar tanh(zeta / scale)``).
    response_scale : float
    seed : int
        Seed of the orientation noise, combined with each ensemble's seed.
    """

    fbar: float = 1.0
    offset: float = 1.7
    gamma: int = -1
    width: float = 0.15
    orientation: str = "frenkel-shear"
    response: str = "constant"
    response_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 1.0 < self.offset < 2.0:
            raise ValueError(f"dipole offset must lie strictly between 1 and 2, got {self.offset}")
        if self.gamma not in (1, -1):
            raise ValueError("gamma must be +1 (puller) or -1 (pusher)")
        if not self.width > 0:
            raise ValueError("bump width must be positive")
        if self.offset - self.width < 1.0 or self.offset + self.width > 2.0:
            raise ValueError(
                f"bump of width {self.width} at offset {self.offset} leaves the shell 1 < |x| < 2")
        if self.response not in RESPONSES:
            raise ValueError(f"response must be one of {RESPONSES}")
        if not self.response_scale > 0:
            raise ValueError("response_scale must be positive")
        self._parse_orientation()

    def _parse_orientation(self):
        kind, _, arg = self.orientation.partition(":")
        if kind == "frenkel-shear" and not arg:
            return kind, None
        if kind == "fixed":
            return kind, _unit([float(v) for v in arg.split(",")])
        if kind == "random":
            kappa = float(arg)
            if kappa < 0:
                raise ValueError("concentration must be nonnegative")
            return kind, kappa
        raise ValueError(f"unknown orientation rule {self.orientation!r}; expected one of {ORIENTATION_KINDS}")

    @property
    def is_zero(self) -> bool:
        return self.fbar == 0.0

    def activity_bound(self, d: int) -> float:
        """Constant ``C`` with ``sup |f(E)| <= C <E>`` on unit particles.

        Includes a 5% allowance for the discrete normalization of the bump
        and the neutralizing shell field.
        """
        peak = math.exp(-1.0) / (_bump_mass(d) * self.width**d)
        interior = 1.0 / unit_ball_volume(d)
        growth = 1.0 / self.response_scale if self.response == "linear" else 1.0
        return 1.05 * abs(self.fbar) * max(peak, interior) * max(growth, 1.0)

    # ------------------------------------------------------------ rules
    def base_direction(self, E) -> np.ndarray:
        kind, arg = self._parse_orientation()
        E = np.asarray(E, float)
        if kind == "fixed":
            if len(arg) != E.shape[-1]:
                raise ValueError("fixed orientation has the wrong dimension")
            return arg
        return shear_orientation(E, 1)

    def strength(self, E, e) -> float:
        if self.response == "constant":
            return float(self.fbar)
        zeta = float(e @ np.asarray(E, float) @ e)
        if self.response == "linear":
            return float(self.fbar) * zeta / self.response_scale
        return float(self.fbar) * math.tanh(zeta / self.response_scale)

    def noise(self, n: int, d: int, ensemble_seed=None):
        """Per-particle orientation perturbations, fixed for a realization."""
        kind, kappa = self._parse_orientation()
        if kind != "random":
            return None
        rng = np.random.default_rng([self.seed, 0 if ensemble_seed is None else int(ensemble_seed)])
        if d == 2:
            return {"angle": rng.vonmises(0.0, kappa, size=n) if kappa > 0 else rng.uniform(-np.pi, np.pi, n)}
        u = rng.random(n)
        if kappa > 0:
            cos = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
        else:
            cos = 2.0 * u - 1.0
        return {"cos": np.clip(cos, -1.0, 1.0), "axis": rng.normal(size=(n, 3))}

    def directions(self, strains, noise=None) -> np.ndarray:
        """Swimming direction of every particle given its felt strain."""
        strains = np.asarray(strains, float)
        out = np.array([self.base_direction(E) for E in strains]).reshape(len(strains), -1)
        if noise is None:
            return out
        if "angle" in noise:
            c, s = np.cos(noise["angle"]), np.sin(noise["angle"])
            return np.stack([c * out[:, 0] - s * out[:, 1], s * out[:, 0] + c * out[:, 1]], axis=1)
        res = np.empty_like(out)
        for n, (e, cs, a) in enumerate(zip(out, noise["cos"], noise["axis"])):
            t = a - (a @ e) * e
            nt = np.linalg.norm(t)
            if nt < 1e-12:
                i = int(np.argmin(np.abs(e)))
                t, nt = np.eye(3)[i] - e[i] * e, math.sqrt(1.0 - e[i] ** 2)
            t = t / nt
            res[n] = cs * e + math.sqrt(max(0.0, 1.0 - cs * cs)) * t
        return res

    # ------------------------------------------------------- continuum form
    def reference_density(self, E, direction=None):
        """Force density of an isolated unit particle at the origin.

        Returns a callable mapping points of shape (..., d) to forces of
        shape (..., d): the exterior bump plus the uniform interior
        extension.  This is the continuum counterpart of
        :func:`evaluate_force` with ``r_n = 1``.
        """
        E = np.asarray(E, float)
        d = E.shape[-1]
        e = self.base_direction(E) if direction is None else _unit(direction)
        F = self.strength(E, e)
        xp = self.gamma * self.offset * e
        interior = F / unit_ball_volume(d)

        def density(x):
            x = np.asarray(x, float)
            r2 = (x**2).sum(-1)
            amp = -F * bump(x - xp, self.width) + np.where(r2 < 1.0, interior, 0.0)
            return amp[..., None] * e

        return density

    def dipole_point(self, E, direction=None) -> np.ndarray:
        E = np.asarray(E, float)
        e = self.base_direction(E) if direction is None else _unit(direction)
        return self.gamma * self.offset * e

    def propulsion(self, E, direction=None) -> np.ndarray:
        E = np.asarray(E, float)
        e = self.base_direction(E) if direction is None else _unit(direction)
        return self.strength(E, e) * e


def make_dipole_model(fbar: float, offset: float, gamma: int, width: float = 0.15,
                      orientation: str = "frenkel-shear", **kwargs) -> SwimForceModel:
    """Regularized pusher (``gamma=-1``) or puller (``gamma=+1``) dipole."""
    if offset <= 1.0 or offset >= 2.0:
        raise ValueError(f"dipole offset must lie strictly between 1 and 2, got {offset}")
    return SwimForceModel(fbar=float(fbar), offset=float(offset), gamma=int(gamma),
                          width=float(width), orientation=orientation, **kwargs)


def _neutralize(values, disp, shell, hd, d):
    """Add a rigid-motion field on ``shell`` nodes cancelling net force and torque."""
    basis = [np.tile(np.eye(d)[i][:, None], (1, len(disp))) for i in range(d)]
    basis += [T @ disp.T for T in _skew_basis(d)]
    V = np.array(basis)
    resid = np.einsum("jik,ik->j", V, values) * hd
    Vs = V[:, :, shell]
    G = np.einsum("jik,lik->jl", Vs, Vs) * hd
    c = np.linalg.solve(G, -resid)
    values = values.copy()
    values[:, shell] += np.einsum("j,jik->ik", c, Vs)
    return values


def evaluate_force(model: SwimForceModel, ensemble, E, grid, *, noise=None) -> ForceSample:
    """Rasterize the swim-force density of every particle on ``grid``.

    Parameters
    ----------
    model : SwimForceModel
    ensemble : ParticleEnsemble
    E : array, shape (d, d) or (n, d, d)
        Strain felt by the particles (one for all, or one per particle).
    grid : PeriodicGrid
    noise : dict, optional
        Orientation perturbations; drawn from the model and the ensemble
        seed when omitted.

    Raises
    ------
    ResolutionError
        If the bump diameter spans fewer than four grid cells.
    """
    d, n = grid.d, len(ensemble)
    values = np.zeros((d, grid.N**d))
    sample = ForceSample(grid, values.reshape((d,) + grid.shape), [])
    if n == 0 or model.is_zero:
        return sample
    E = np.asarray(E, float)
    strains = np.broadcast_to(E, (n, d, d)) if E.ndim == 2 else E
    if strains.shape != (n, d, d):
        raise ValueError("strain must have shape (d, d) or (n, d, d)")
    rmin = float(ensemble.radii.min())
    if 2 * model.width * rmin < 4 * grid.h:
        need = int(math.ceil(2 * grid.L / (model.width * rmin)))
        raise ResolutionError(
            f"bump of radius {model.width * rmin:.4g} spans {2 * model.width * rmin / grid.h:.2f} cells; "
            f"at least 4 are required (N >= {need + need % 2})")
    if noise is None:
        noise = model.noise(n, d, ensemble.seed)
    dirs = model.directions(strains, noise)
    hd = grid.cell_volume
    for k, (c, r) in enumerate(zip(ensemble.centers, ensemble.radii)):
        e = dirs[k]
        F = model.strength(strains[k], e)
        idx, disp = grid.ball_nodes(c, 2.0 * r)
        rho = np.linalg.norm(disp, axis=1) / r
        vals = np.zeros((d, len(idx)))
        if F != 0.0:
            xp = model.gamma * model.offset * e
            b = bump(disp / r - xp, model.width)
            b /= b.sum() * hd
            inside = rho <= 1.0
            vals -= F * np.outer(e, b)
            vals[:, inside] += F * e[:, None] / (inside.sum() * hd)
            shell = (rho > 1.0) & (rho < 2.0)
            vals = _neutralize(vals * r**d, disp, shell, hd, d)
        inside = rho <= 1.0
        fb = vals[:, inside].sum(1) * hd
        M = vals[:, inside] @ disp[inside] * hd
        values[:, idx] += vals
        sample.particles.append(ParticleForce(idx, disp, vals, e, F, fb, 0.5 * (M - M.T)))
    sample.values = values.reshape((d,) + grid.shape)
    return sample
