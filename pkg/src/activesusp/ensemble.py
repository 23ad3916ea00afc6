"""Hardcore particle configurations on a torus and their multi-point intensities.

Configurations are sampled by Matérn type-II thinning: a Poisson proposal
in a window, each point carrying a uniform mark, and every point deleted
if a conflicting point (closer than ``2 r + 2 ell``) has a smaller mark.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .tensors import unit_ball_volume, wrap


class InfeasibleDensityError(ValueError):
    """Raised when the thinning scheme cannot reach half the requested intensity."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """Spherical particles on the torus ``[0, L)^d``.

    Attributes
    ----------
    d : int
        Space dimension, 2 or 3.
    L : float
        Side of the periodic box.
    ell : float
        Hardcore parameter; surfaces are at least ``2 ell`` apart.
    centers : ndarray, shape (n, d)
        Particle centers, stored in ``[0, L)``.
    radii : ndarray, shape (n,)
    seed : int or None
        Seed the configuration was drawn with (provenance only).
    """

    d: int
    L: float
    ell: float
    centers: np.ndarray
    radii: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ValueError("box side L must be positive")
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.d)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(r) != len(c):
            raise ValueError("centers and radii have different lengths")
        if np.any(r <= 0):
            raise ValueError("all radii must be positive")
        c = np.mod(c, self.L)
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    def __len__(self) -> int:
        return len(self.radii)

    @classmethod
    def empty(cls, d: int, L: float, ell: float = 0.0, seed: int | None = None):
        return cls(d, L, ell, np.zeros((0, d)), np.zeros(0), seed)

    @classmethod
    def single(cls, d: int, L: float, radius: float = 1.0, center=None):
        """One particle, centered in the box unless ``center`` is given."""
        c = np.full(d, 0.5 * L) if center is None else np.asarray(center, float)
        return cls(d, L, 0.0, c[None, :], np.array([radius]), None)

    @property
    def number_density(self) -> float:
        return len(self) / self.L**self.d

    def displacements(self) -> np.ndarray:
        """Minimal-image center differences, shape (n, n, d)."""
        return wrap(self.centers[None, :, :] - self.centers[:, None, :], self.L)

    def min_surface_distance(self) -> float:
        """Smallest periodic surface-to-surface distance (brute force)."""
        if len(self) < 2:
            return math.inf
        dist = np.linalg.norm(self.displacements(), axis=-1)
        gap = dist - self.radii[:, None] - self.radii[None, :]
        np.fill_diagonal(gap, np.inf)
        return float(gap.min())

    def satisfies_hardcore(self, rtol: float = 1e-12) -> bool:
        return self.min_surface_distance() >= 2.0 * self.ell * (1.0 - rtol)

    def translated(self, shift) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.d, self.L, self.ell, self.centers + np.asarray(shift, float),
            self.radii, self.seed,
        )

    def scaled(self, factor: float) -> "ParticleEnsemble":
        """Dilate all lengths (box, centers, radii, hardcore) by ``factor``."""
        return ParticleEnsemble(
            self.d, self.L * factor, self.ell * factor, self.centers * factor,
            self.radii * factor, self.seed,
        )

    def tiled(self, reps: int) -> "ParticleEnsemble":
        """Periodic copy of this cell repeated ``reps`` times per direction."""
        shifts = np.array(list(product(range(reps), repeat=self.d)), dtype=float) * self.L
        c = (self.centers[None, :, :] + shifts[:, None, :]).reshape(-1, self.d)
        r = np.tile(self.radii, len(shifts))
        return ParticleEnsemble(self.d, self.L * reps, self.ell, c, r, self.seed)


def volume_fraction(ensemble: ParticleEnsemble) -> float:
    """Particle volume per unit box volume."""
    vol = unit_ball_volume(ensemble.d) * float(np.sum(ensemble.radii**ensemble.d))
    return vol / ensemble.L**ensemble.d


def sample_hardcore(
    d: int,
    L: float,
    target_lambda1: float,
    ell: float,
    seed: int,
    *,
    radius: float = 1.0,
    margin: float = 4.0,
) -> ParticleEnsemble:
    """Matérn-II hardcore configuration of equal spheres.

    Proposals are drawn in the retracted window ``[margin/2, L - margin/2)^d``
    with an intensity chosen so that the expected torus-averaged number
    density equals ``target_lambda1``.

    Raises
    ------
    InfeasibleDensityError
        If even an infinite proposal intensity would yield less than half
        of the requested density.
    """
    if not L > margin:
        raise ValueError(f"box side L={L} must exceed the retraction margin {margin}")
    if target_lambda1 < 0 or ell < 0:
        raise ValueError("target_lambda1 and ell must be nonnegative")
    rng = np.random.default_rng(seed)
    if target_lambda1 == 0:
        return ParticleEnsemble.empty(d, L, ell, seed)

    side = L - margin
    window_fraction = (side / L) ** d
    excl = 2.0 * radius + 2.0 * ell
    V = unit_ball_volume(d) * excl**d
    wanted = target_lambda1 / window_fraction
    pairs_possible = excl < 0.5 * L * math.sqrt(d)
    if pairs_possible and 1.0 / V < 0.5 * wanted:
        raise InfeasibleDensityError(
            f"Matérn-II thinning saturates at {window_fraction / V:.4g} particles per "
            f"unit volume, below half of the target {target_lambda1:.4g}"
        )
    rho = -math.log1p(-wanted * V) / V if wanted * V < 1.0 else 5.0 / V

    n_prop = rng.poisson(rho * side**d)
    pts = margin / 2 + side * rng.random((n_prop, d))
    marks = rng.random(n_prop)
    if n_prop > 1:
        tree = cKDTree(pts, boxsize=L)
        pairs = tree.query_pairs(min(excl, 0.5 * L * math.sqrt(d) + 1e-9), output_type="ndarray")
        if len(pairs):
            dist = np.linalg.norm(wrap(pts[pairs[:, 0]] - pts[pairs[:, 1]], L), axis=1)
            pairs = pairs[dist < excl]
            loser = np.where(marks[pairs[:, 0]] > marks[pairs[:, 1]], pairs[:, 0], pairs[:, 1])
            keep = np.ones(n_prop, bool)
            keep[loser] = False
            pts = pts[keep]
    return ParticleEnsemble(d, L, ell, pts, np.full(len(pts), float(radius)), seed)


# --------------------------------------------------------------------- io

def ensemble_to_text(ens: ParticleEnsemble) -> str:
    seed = "none" if ens.seed is None else str(int(ens.seed))
    lines = [f"{ens.d} {ens.L!r} {ens.ell!r} {seed}"]
    for n, (c, r) in enumerate(zip(ens.centers, ens.radii)):
        lines.append(" ".join([str(n)] + [repr(float(v)) for v in c] + [repr(float(r))]))
    return "\n".join(lines) + "\n"


def ensemble_from_text(text: str) -> ParticleEnsemble:
    rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    d, L, ell, seed = rows[0]
    d = int(d)
    seed = None if seed == "none" else int(seed)
    body = np.array([[float(v) for v in row[1:]] for row in rows[1:]]).reshape(-1, d + 1)
    return ParticleEnsemble(d, float(L), float(ell), body[:, :d], body[:, d], seed)


def save_ensemble(path, ens: ParticleEnsemble) -> None:
    Path(path).write_text(ensemble_to_text(ens))


def load_ensemble(path) -> ParticleEnsemble:
    return ensemble_from_text(Path(path).read_text())


# ------------------------------------------------------------ intensities

@dataclass
class IntensityReport:
    lambda1: float
    lambda1_se: float
    volume_fraction: float
    lambda2: float
    lambda2_se: float
    lambda2_lag: np.ndarray
    lambda3: float
    lambda3_se: float
    g2_r: np.ndarray
    g2: np.ndarray
    g2_se: np.ndarray
    window: float
    n_realizations: int
    lambda2_by_lag: np.ndarray = field(repr=False, default=None)

    @property
    def h2(self) -> np.ndarray:
        return self.g2 - self.lambda1**2


def _se(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, float)
    if len(samples) < 2:
        return np.zeros(samples.shape[1:])
    return samples.std(axis=0, ddof=1) / math.sqrt(len(samples))


def pair_window_density(ens: ParticleEnsemble, window: float, lags: np.ndarray) -> np.ndarray:
    """Shift-averaged count of ordered pairs in a window and its lagged copy.

    Returns, for every lag ``x``, the average over window positions ``y`` of
    ``#{n != m : x_n in Q(y), x_m in Q(y + x)}`` divided by ``window^(2d)``,
    where ``Q`` is a cube of side ``window``.
    """
    lags = np.atleast_2d(lags)
    out = np.zeros(len(lags))
    if len(ens) < 2:
        return out
    reach = (window + np.abs(lags).max()) * math.sqrt(ens.d)
    tree = cKDTree(ens.centers, boxsize=ens.L)
    pairs = tree.query_pairs(min(reach, 0.5 * ens.L * math.sqrt(ens.d) + 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        return out
    pairs = np.concatenate([pairs, pairs[:, ::-1]])
    delta = wrap(ens.centers[pairs[:, 1]] - ens.centers[pairs[:, 0]], ens.L)
    for i, x in enumerate(lags):
        ov = np.clip(window - np.abs(wrap(delta - x, ens.L)), 0.0, None).prod(axis=1)
        out[i] = ov.sum()
    return out / (ens.L**ens.d * window ** (2 * ens.d))


def triple_window_density(ens: ParticleEnsemble, window: float, lag_pairs: np.ndarray) -> np.ndarray:
    """Three-point analogue of :func:`pair_window_density` over lag pairs."""
    lag_pairs = np.asarray(lag_pairs, float).reshape(-1, 2, ens.d)
    out = np.zeros(len(lag_pairs))
    if len(ens) < 3:
        return out
    tree = cKDTree(ens.centers, boxsize=ens.L)
    rad = window * math.sqrt(ens.d)
    for i, (x1, x2) in enumerate(lag_pairs):
        total = 0.0
        for n0, c0 in enumerate(ens.centers):
            c1 = np.mod(c0 + x1, ens.L)
            c2 = np.mod(c0 + x2, ens.L)
            n1s = np.array([j for j in tree.query_ball_point(c1, rad) if j != n0], dtype=int)
            n2s = np.array([j for j in tree.query_ball_point(c2, rad) if j != n0], dtype=int)
            if len(n1s) == 0 or len(n2s) == 0:
                continue
            a = wrap(ens.centers[n1s] - c0 - x1, ens.L)
            b = wrap(ens.centers[n2s] - c0 - x2, ens.L)
            A = a[:, None, :]
            B = b[None, :, :]
            hi = np.maximum(np.maximum(A, B), 0.0)
            lo = np.minimum(np.minimum(A, B), 0.0)
            ov = np.clip(window - (hi - lo), 0.0, None).prod(axis=-1)
            ov[n1s[:, None] == n2s[None, :]] = 0.0
            total += ov.sum()
        out[i] = total
    return out / (ens.L**ens.d * window ** (3 * ens.d))


def default_lags(d: int, window: float, L: float) -> np.ndarray:
    reach = min(0.25 * L, 4.0 * window)
    ticks = np.arange(0.0, reach + 1e-12, 0.5 * window)
    ticks = np.unique(np.concatenate([-ticks, ticks]))
    return np.array(list(product(ticks, repeat=d)))


def estimate_intensities(
    ensembles,
    window: float,
    lags=None,
    lag_pairs=None,
    *,
    n_lag_pairs: int = 16,
    g2_bins: int = 40,
    g2_rmax: float | None = None,
    seed: int = 0,
) -> IntensityReport:
    """Empirical one-, two- and three-point intensities of a list of ensembles.

    ``lambda2`` and ``lambda3`` are suprema over the supplied lags (lag
    pairs for ``lambda3``) of the window-averaged pair and triple
    densities; standard errors are across realizations at the maximizer.
    """
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("need at least one ensemble")
    d, L = ensembles[0].d, ensembles[0].L
    if any(e.d != d or e.L != L for e in ensembles):
        raise ValueError("all ensembles must share dimension and box size")
    if not 0 < window <= 0.25 * L:
        raise ValueError(f"window must lie in (0, L/4], got {window}")
    lags = default_lags(d, window, L) if lags is None else np.atleast_2d(np.asarray(lags, float))
    if lags.shape[1] != d:
        raise ValueError("lags must have d components")
    if np.any(np.abs(lags) > 0.5 * L):
        raise ValueError("lag grid wraps more than half the torus")
    rng = np.random.default_rng(seed)
    if lag_pairs is None:
        lag_pairs = rng.uniform(-2.0 * window, 2.0 * window, size=(n_lag_pairs, 2, d))
    lag_pairs = np.asarray(lag_pairs, float).reshape(-1, 2, d)
    if np.any(np.abs(lag_pairs) > 0.5 * L):
        raise ValueError("lag pairs wrap more than half the torus")

    counts = np.array([len(e) / L**d for e in ensembles])
    lam2 = np.array([pair_window_density(e, window, lags) for e in ensembles])
    lam3 = np.array([triple_window_density(e, window, lag_pairs) for e in ensembles])
    m2 = lam2.mean(axis=0)
    m3 = lam3.mean(axis=0)
    i2, i3 = int(np.argmax(m2)), int(np.argmax(m3))

    rmax = 0.5 * L if g2_rmax is None else float(g2_rmax)
    edges = np.linspace(0.0, rmax, g2_bins + 1)
    shell = unit_ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)
    g2s = []
    for e in ensembles:
        if len(e) < 2:
            g2s.append(np.zeros(g2_bins))
            continue
        tree = cKDTree(e.centers, boxsize=L)
        pairs = tree.query_pairs(rmax, output_type="ndarray")
        dist = np.linalg.norm(wrap(e.centers[pairs[:, 0]] - e.centers[pairs[:, 1]], L), axis=1)
        hist = np.histogram(dist, bins=edges)[0] * 2.0
        g2s.append(hist / (L**d * shell))
    g2s = np.array(g2s)

    mean_vol = np.mean([volume_fraction(e) for e in ensembles])
    return IntensityReport(
        lambda1=float(counts.mean()),
        lambda1_se=float(_se(counts)),
        volume_fraction=float(mean_vol),
        lambda2=float(m2[i2]),
        lambda2_se=float(_se(lam2[:, i2])),
        lambda2_lag=lags[i2],
        lambda3=float(m3[i3]) if len(m3) else 0.0,
        lambda3_se=float(_se(lam3[:, i3])) if len(m3) else 0.0,
        g2_r=0.5 * (edges[1:] + edges[:-1]),
        g2=g2s.mean(axis=0),
        g2_se=_se(g2s),
        window=float(window),
        n_realizations=len(ensembles),
        lambda2_by_lag=m2,
    )
