"""First-order (dilute) effective viscosity of spherical swimmers.

Per unit number density ``lambda1`` the passive and active contributions of
an isolated unit sphere are

    E':2 B_pas1 E    = (d+2) |B| E':E
    E':2 B_act1(E)   = -int_{|x|>1} (1 - |x|^-(d+2)) E'x . f(x)
                       + (d+2)/2 int_{|x|>1} (1 - |x|^-2) (x.E'x) x / |x|^(d+2) . f(x)

where ``f`` is the mean swim-force density of one particle at strain
``E``.  The second form equals ``-int (psi_E' + E'x) . f`` with the
whole-space sphere corrector ``psi``, which is how the two quadrature
routes below are made independent of each other.

For a point dipole at ``x(E) = gamma r e`` with force ``-F e`` there, the
shear scalar is ``E:2B_act1(E) = gamma (s/2) r F g(r)`` with
``g(r) = 1 - (d+2)/2 r^-d + d/2 r^-(d+2)`` (:func:`pusher_puller_shear`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correctors import analytic_sphere_corrector
from .forcing import SwimForceModel
from .tensors import deviatoric, dim_trace_free, from_coords, to_coords, trace_free_basis, unit_ball_volume


@dataclass(frozen=True)
class ShellDensity:
    """Force density of one unit particle at the origin, with support hints.

    Parameters
    ----------
    func : callable
        Maps points (..., d) to forces (..., d).
    d : int
    rmin, rmax : float
        Radial interval containing the exterior support (within ``[1, 2]``).
    cap_axis, cap_angle : optional
        The exterior support lies in the cone of half-angle ``cap_angle``
        around ``cap_axis``.
    box : (lo, hi), optional
        Cartesian bounding box of the exterior support.
    """

    func: object
    d: int
    rmin: float = 1.0
    rmax: float = 2.0
    cap_axis: np.ndarray | None = None
    cap_angle: float | None = None
    box: tuple | None = None

    def __call__(self, x):
        return self.func(x)


def dipole_density(model: SwimForceModel, E, direction=None) -> ShellDensity:
    """The regularized dipole of ``model`` at strain ``E`` as a :class:`ShellDensity`."""
    E = np.asarray(E, float)
    d = E.shape[0]
    xp = model.dipole_point(E, direction)
    r, w = float(np.linalg.norm(xp)), model.width
    return ShellDensity(model.reference_density(E, direction), d, r - w, r + w,
                        xp / r, math.asin(min(1.0, w / r)), (xp - w, xp + w))


def dilute_Bpas1(d: int) -> np.ndarray:
    """``B_pas1`` per unit number density, as an (m, m) matrix: ``(d+2)|B|/2`` times identity."""
    return 0.5 * (d + 2) * unit_ball_volume(d) * np.eye(dim_trace_free(d))


def _kernel(x, Phi):
    """``-(1 - r^-(d+2)) Phi x + (d+2)/2 (1 - r^-2) (x.Phi x) x / r^(d+2)`` for every basis matrix."""
    d = x.shape[-1]
    r2 = (x**2).sum(-1)
    Px = np.einsum("aij,...j->a...i", Phi, x)
    xPx = (x[None] * Px).sum(-1)
    a = -(1.0 - r2 ** (-(d + 2) / 2))
    b = 0.5 * (d + 2) * (1.0 - 1.0 / r2) * r2 ** (-(d + 2) / 2)
    return a[None, ..., None] * Px + (b[None] * xPx)[..., None] * x[None]


def _shell_nodes(dens: ShellDensity, n_radial: int, n_angular: int):
    d = dens.d
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    lo, hi = max(1.0, dens.rmin), min(2.0, dens.rmax)
    rho = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    wr = 0.5 * (hi - lo) * wt * rho ** (d - 1)
    if d == 2:
        if dens.cap_axis is not None:
            th0 = math.atan2(dens.cap_axis[1], dens.cap_axis[0])
            s, ws = np.polynomial.legendre.leggauss(n_angular)
            th = th0 + dens.cap_angle * s
            wth = dens.cap_angle * ws
        else:
            th = 2 * np.pi * np.arange(n_angular) / n_angular
            wth = np.full(n_angular, 2 * np.pi / n_angular)
        dirs = np.stack([np.cos(th), np.sin(th)], -1)
        wang = wth
    else:
        if dens.cap_axis is not None:
            axis = np.asarray(dens.cap_axis, float)
            cmin = math.cos(dens.cap_angle)
        else:
            axis, cmin = np.array([0.0, 0.0, 1.0]), -1.0
        s, ws = np.polynomial.legendre.leggauss(n_angular)
        cos = 0.5 * (1 - cmin) * s + 0.5 * (1 + cmin)
        wc = 0.5 * (1 - cmin) * ws
        nphi = 2 * n_angular
        phi = 2 * np.pi * np.arange(nphi) / nphi
        # orthonormal frame around the axis
        a = np.eye(3)[int(np.argmin(np.abs(axis)))]
        u = a - (a @ axis) * axis
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        sin = np.sqrt(np.clip(1 - cos**2, 0, None))
        dirs = (cos[:, None, None] * axis + sin[:, None, None]
                * (np.cos(phi)[None, :, None] * u + np.sin(phi)[None, :, None] * v)).reshape(-1, 3)
        wang = (wc[:, None] * np.full(nphi, 2 * np.pi / nphi)[None, :]).reshape(-1)
    x = rho[:, None, None] * dirs[None]
    w = wr[:, None] * wang[None]
    return x, w


def _box_nodes(dens: ShellDensity, n: int):
    d = dens.d
    lo, hi = (np.full(d, -2.0), np.full(d, 2.0)) if dens.box is None else map(np.asarray, dens.box)
    t, wt = np.polynomial.legendre.leggauss(n)
    axes = [0.5 * (h - l) * t + 0.5 * (h + l) for l, h in zip(lo, hi)]
    ws = [0.5 * (h - l) * wt for l, h in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    W = ws[0]
    for wk in ws[1:]:
        W = np.multiply.outer(W, wk)
    return X, W


def dilute_Bact1(density: ShellDensity, *, route: str = "kernel", n_radial: int = 64,
                 n_angular: int = 96, n_box: int = 96) -> np.ndarray:
    """``B_act1`` per unit number density as a (d, d) trace-free matrix.

    Parameters
    ----------
    density : ShellDensity
        Mean force density of one particle at the strain of interest.
    route : {"kernel", "pairing"}
        ``"kernel"``: polar Gauss-Legendre quadrature of the closed-form
        kernel over the exterior support.  ``"pairing"``: Cartesian
        Gauss-Legendre quadrature of ``-(psi_E' + E'x) . f`` over the
        support box (``[-2, 2]^d`` without a hint).

    Raises
    ------
    ValueError
        If the density does not vanish outside ``|x| < 2``.
    """
    d = density.d
    Phi = trace_free_basis(d)
    # support audit just outside the shell
    probe_r = 2.0 + 1e-6
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    probe = probe_r * (np.stack([np.cos(th), np.sin(th)], -1) if d == 2 else
                       np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], -1))
    if np.abs(density(probe)).max() > 0:
        raise ValueError("force density is not supported in the shell 1 < |x| < 2")
    if route == "kernel":
        x, w = _shell_nodes(density, n_radial, n_angular)
        f = density(x)
        vals = (_kernel(x, Phi) * f[None]).sum(-1)
        twice = (vals * w[None]).reshape(len(Phi), -1).sum(1)
    elif route == "pairing":
        X, W = _box_nodes(density, n_box)
        f = density(X)
        twice = np.empty(len(Phi))
        for a, P in enumerate(Phi):
            g = analytic_sphere_corrector(P, X) + X @ P.T
            r2 = (X**2).sum(-1)
            g = np.where((r2 < 4.0)[..., None], g, 0.0)
            twice[a] = -float(((g * f).sum(-1) * W).sum())
    else:
        raise ValueError("route must be 'kernel' or 'pairing'")
    return from_coords(0.5 * twice, d)


def point_dipole_Bact1(gamma: int, r: float, fmag: float, direction) -> np.ndarray:
    """Closed-form ``B_act1`` of a point dipole: ``gamma r F g(r)/2 (e e - I/d)``."""
    e = np.asarray(direction, float)
    e = e / np.linalg.norm(e)
    d = len(e)
    g = 1.0 - 0.5 * (d + 2) * r ** (-d) + 0.5 * d * r ** (-(d + 2))
    return 0.5 * gamma * r * fmag * g * deviatoric(np.outer(e, e))


def model_Bact1(model: SwimForceModel, E, *, route: str = "kernel", n_orientations: int = 64,
                **quad) -> np.ndarray:
    """``B_act1(E)`` of a dipole model, averaged over its orientation noise.

    Orientation noise is averaged with a fixed quadrature in 2D (von Mises
    weights on a uniform angle grid) and a fixed-seed sample in 3D.
    """
    E = np.asarray(E, float)
    d = E.shape[0]
    kind = model.orientation.partition(":")[0]
    if kind != "random":
        return dilute_Bact1(dipole_density(model, E), route=route, **quad)
    kappa = float(model.orientation.partition(":")[2])
    base = model.base_direction(E)
    if d == 2:
        th = 2 * np.pi * np.arange(n_orientations) / n_orientations
        wts = np.exp(kappa * (np.cos(th) - 1.0))
        wts /= wts.sum()
        c, s = np.cos(th), np.sin(th)
        dirs = np.stack([c * base[0] - s * base[1], s * base[0] + c * base[1]], -1)
    else:
        noise = model.noise(n_orientations, 3, 12345)
        dirs = model.directions(np.broadcast_to(E, (n_orientations, 3, 3)), noise)
        wts = np.full(n_orientations, 1.0 / n_orientations)
    return sum(wk * dilute_Bact1(dipole_density(model, E, e), route=route, **quad) for wk, e in zip(wts, dirs))


def richardson_in_width(model: SwimForceModel, E, widths=(0.3, 0.15, 0.075), **kw):
    """Extrapolate ``B_act1`` to zero bump width assuming an even error expansion.

    Returns ``(limit, values)`` with ``values`` the (d, d) matrices at each width.
    """
    from dataclasses import replace

    widths = tuple(sorted(widths, reverse=True))
    vals = [model_Bact1(replace(model, width=w), E, **kw) for w in widths]
    table = list(vals)
    for level in range(1, len(widths)):
        ratio = (widths[0] / widths[1]) ** (2 * level)
        table = [(ratio * table[i + 1] - table[i]) / (ratio - 1) for i in range(len(table) - 1)]
    return table[0], vals


def pusher_puller_shear(gamma: int, r: float, fmag: float, s: float, d: int) -> float:
    """``gamma (s/2) r fmag (1 - (d+2)/2 r^-d + d/2 r^-(d+2))``; ``r`` must exceed 1."""
    if not r > 1.0:
        raise ValueError(f"dipole distance must exceed the particle radius 1, got {r}")
    if gamma not in (1, -1):
        raise ValueError("gamma must be +1 (puller) or -1 (pusher)")
    return gamma * (s / 2) * r * fmag * (1.0 - (d + 2) / 2 * r ** (-d) + d / 2 * r ** (-(d + 2)))


def alpha_decomposition(Bact1, fdir):
    """Least-squares fit ``B_act1 ~ alpha/2 (f f - I/d)``.

    Returns ``(alpha, residual)`` with the residual relative to ``|B_act1|``
    (zero for a zero input).
    """
    B = np.asarray(Bact1, float)
    A = deviatoric(np.outer(fdir, fdir) / float(np.dot(fdir, fdir)))
    alpha = 2.0 * float((B * A).sum() / (A * A).sum())
    nb = float(np.linalg.norm(B))
    res = float(np.linalg.norm(B - 0.5 * alpha * A)) / nb if nb > 0 else 0.0
    return alpha, res


@dataclass
class EinsteinFit:
    slope: np.ndarray
    intercept_free: np.ndarray
    slope_free: np.ndarray
    dilute_slope: np.ndarray
    relative_deviation: float
    slope_per_volume_fraction: float


def einstein_compare(lambda1, values, dilute_slope, d: int | None = None) -> EinsteinFit:
    """Fit ``B(lambda1) = I + lambda1 S`` to cell values and compare with the dilute slope.

    ``values`` holds matrices (or scalars) at each ``lambda1``.  The
    relative deviation compares ``|S - S_dilute| / |S_dilute|``; when
    ``d`` is given, the mean diagonal slope is also reported per unit
    volume fraction.
    """
    lam = np.asarray(lambda1, float)
    V = np.asarray(values, float)
    I = np.eye(V.shape[-1]) if V.ndim == 3 else 1.0
    Y = V - I
    S = np.tensordot(lam, Y, axes=(0, 0)) / float(lam @ lam)
    A = np.stack([np.ones_like(lam), lam], 1)
    coef = np.tensordot(np.linalg.pinv(A), V, axes=(1, 0))
    Sd = np.asarray(dilute_slope, float)
    dev = float(np.linalg.norm(S - Sd) / np.linalg.norm(Sd))
    per_vf = float(np.mean(np.diagonal(S)) if np.ndim(S) == 2 else S)
    if d is not None:
        per_vf /= unit_ball_volume(d)
    return EinsteinFit(S, coef[0], coef[1], Sd, dev, per_vf)


def viscosity_reduction_check(kappa: float, lambda1: float, Bact1, E, *, ell: float | None = None,
                              eta: float = 0.5, threshold: float = 1.0):
    """First-order test of ``E : B_tot(E) < |E|^2``.

    Uses ``B_tot = (1 + (d+2)|B| lambda1 / 2) E + kappa lambda1 B_act1(E)``.
    ``Bact1`` is the (d, d) matrix at ``E`` or a callable.  The activity is
    feasible when ``kappa ell^(eta - d) <= threshold`` (always, without ``ell``).

    Returns
    -------
    reduces : bool
    margin : float
        ``|E|^2 - E : B_tot(E)``.
    feasible : bool
    """
    E = np.asarray(E, float)
    d = E.shape[0]
    B1 = Bact1(E) if callable(Bact1) else np.asarray(Bact1, float)
    EE = float((E * E).sum())
    margin = -0.5 * (d + 2) * unit_ball_volume(d) * lambda1 * EE - kappa * lambda1 * float((E * B1).sum())
    feasible = True if ell is None else kappa * ell ** (eta - d) <= threshold * (1 + 1e-12)
    return bool(margin > 0), float(margin), bool(feasible)


def kappa_threshold(ell: float, d: int, eta: float = 0.5, threshold: float = 1.0) -> float:
    """Largest activity with ``kappa ell^(eta - d) <= threshold``."""
    return threshold * ell ** (d - eta)


@dataclass
class DiluteReport:
    d: int
    E: np.ndarray
    Bpas1: np.ndarray
    Bact1: np.ndarray
    shear_scalar: float
    alpha: float
    alpha_residual: float
    kappa: float
    lambda1: float
    Btot: np.ndarray
    margin: float
    reduces: bool
    feasible: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        from .tensors import BASIS_CONVENTION

        out = {
            "basis": BASIS_CONVENTION,
            "d": self.d,
            "E": self.E.tolist(),
            "Bpas1": self.Bpas1.tolist(),
            "Bact1": self.Bact1.tolist(),
            "shear_scalar": self.shear_scalar,
            "alpha": self.alpha,
            "alpha_residual": self.alpha_residual,
            "kappa": self.kappa,
            "lambda1": self.lambda1,
            "Btot_first_order": self.Btot.tolist(),
            "reduction_margin": self.margin,
            "reduces": self.reduces,
            "kappa_feasible": self.feasible,
        }
        out.update(self.extra)
        return out


def dilute_report(model: SwimForceModel, E, kappa: float, lambda1: float, *, ell: float | None = None,
                  eta: float = 0.5, threshold: float = 1.0, **quad) -> DiluteReport:
    """Dilute predictions for one model and strain."""
    E = np.asarray(E, float)
    d = E.shape[0]
    B1 = model_Bact1(model, E, **quad)
    alpha, res = alpha_decomposition(B1, model.propulsion(E) if model.strength(E, model.base_direction(E)) != 0
                                     else model.base_direction(E))
    reduces, margin, feasible = viscosity_reduction_check(kappa, lambda1, B1, E, ell=ell, eta=eta,
                                                          threshold=threshold)
    Bp = dilute_Bpas1(d)
    Btot = from_coords((np.eye(len(Bp)) + lambda1 * Bp) @ to_coords(E), d) + kappa * lambda1 * B1
    return DiluteReport(d, E, Bp, B1, float((E * B1).sum()), alpha, res, kappa, lambda1, Btot,
                        margin, reduces, feasible)
