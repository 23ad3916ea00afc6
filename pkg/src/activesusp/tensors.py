"""Trace-free symmetric matrices and their orthonormal coordinates.

The space of symmetric trace-free ``d x d`` matrices has dimension
``m = d(d+1)/2 - 1``.  All tensors acting on strain rates are stored as
``m x m`` matrices in the Frobenius-orthonormal basis returned by
:func:`trace_free_basis`: off-diagonal unit shears first, then the
normalized diagonal modes ``diag(1, -1, 0)/sqrt(2)``-style.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

BASIS_CONVENTION = (
    "Frobenius-orthonormal basis of symmetric trace-free matrices: "
    "off-diagonal shears (e_i e_j + e_j e_i)/sqrt(2) for i<j in lexicographic order, "
    "then diagonal modes diag(1,..,1,-k,0,..)/sqrt(k(k+1)) for k=1..d-1"
)


@lru_cache(maxsize=None)
def _basis(d: int) -> np.ndarray:
    mats = []
    for i in range(d):
        for j in range(i + 1, d):
            M = np.zeros((d, d))
            M[i, j] = M[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(M)
    for k in range(1, d):
        v = np.zeros(d)
        v[:k] = 1.0
        v[k] = -float(k)
        mats.append(np.diag(v / np.linalg.norm(v)))
    out = np.array(mats)
    out.setflags(write=False)
    return out


def trace_free_basis(d: int) -> np.ndarray:
    """Return the orthonormal basis as an array of shape ``(m, d, d)``."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return _basis(d)


def dim_trace_free(d: int) -> int:
    return d * (d + 1) // 2 - 1


def deviatoric(M: np.ndarray) -> np.ndarray:
    """Symmetric trace-free part of a square matrix (last two axes)."""
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    S = 0.5 * (M + np.swapaxes(M, -1, -2))
    tr = np.trace(S, axis1=-2, axis2=-1)
    return S - tr[..., None, None] * np.eye(d) / d


def to_coords(E: np.ndarray) -> np.ndarray:
    """Coordinates of (the deviatoric part of) ``E`` in the orthonormal basis."""
    E = np.asarray(E, dtype=float)
    Phi = trace_free_basis(E.shape[-1])
    return np.einsum("aij,...ij->...a", Phi, E)


def from_coords(c: np.ndarray, d: int) -> np.ndarray:
    Phi = trace_free_basis(d)
    return np.einsum("aij,...a->...ij", Phi, np.asarray(c, dtype=float))


def shear(d: int, s: float = 1.0, i: int = 0, j: int = 1) -> np.ndarray:
    """Simple shear strain rate ``s/2 (e_i e_j + e_j e_i)``."""
    E = np.zeros((d, d))
    E[i, j] = E[j, i] = 0.5 * s
    return E


def is_trace_free_symmetric(E: np.ndarray, atol: float = 1e-12) -> bool:
    E = np.asarray(E, dtype=float)
    scale = max(1.0, float(np.abs(E).max(initial=0.0)))
    return bool(
        np.allclose(E, E.T, atol=atol * scale) and abs(np.trace(E)) <= atol * scale
    )


def unit_ball_volume(d: int) -> float:
    return {2: np.pi, 3: 4.0 * np.pi / 3.0}[d]


def wrap(dx: np.ndarray, L: float) -> np.ndarray:
    """Minimal-image displacement on a torus of side ``L``."""
    return (np.asarray(dx) + 0.5 * L) % L - 0.5 * L
