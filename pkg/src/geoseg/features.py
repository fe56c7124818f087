"""Handcrafted per-point shape descriptors from local covariance eigen-analysis.

Columns are (linearity, planarity, scattering, verticality), each in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .cloud import PointCloud, knn_table

FEATURE_NAMES = ("linearity", "planarity", "scattering", "verticality")

# relative eigen-gap below which the cross-product eigenvectors are not trusted
_GAP_TOL = 1e-6


@dataclass(frozen=True)
class GeomFeatureSet:
    features: np.ndarray  # n x 4
    k_geo: int

    def __len__(self):
        return len(self.features)


def _sym_eigvals(A: np.ndarray) -> np.ndarray:
    """Closed-form (trigonometric) eigenvalues of stacked symmetric 3x3 matrices.

    Returns m x 3, sorted descending.
    """
    a00, a11, a22 = A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]
    a01, a02, a12 = A[:, 0, 1], A[:, 0, 2], A[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    p1 = a01 ** 2 + a02 ** 2 + a12 ** 2
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    out = np.repeat(q[:, None], 3, axis=1)
    ok = p > 0
    if ok.any():
        B = (A[ok] - q[ok, None, None] * np.eye(3)) / p[ok, None, None]
        r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        l1 = q[ok] + 2.0 * p[ok] * np.cos(phi)
        l3 = q[ok] + 2.0 * p[ok] * np.cos(phi + 2.0 * np.pi / 3.0)
        l2 = 3.0 * q[ok] - l1 - l3
        out[ok] = np.stack([l1, l2, l3], axis=1)
    return -np.sort(-out, axis=1)


def _eigvec_for(A: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Unit null vector of (A - lam I) from the largest row cross product."""
    M = A - lam[:, None, None] * np.eye(3)
    c0 = np.cross(M[:, 0], M[:, 1])
    c1 = np.cross(M[:, 0], M[:, 2])
    c2 = np.cross(M[:, 1], M[:, 2])
    cs = np.stack([c0, c1, c2], axis=1)
    norms = np.linalg.norm(cs, axis=2)
    best = np.argmax(norms, axis=1)
    v = cs[np.arange(len(A)), best]
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _jacobi_eigh(A: np.ndarray, sweeps: int = 12):
    """Cyclic Jacobi rotations on stacked symmetric 3x3 matrices."""
    A = A.copy()
    m = len(A)
    V = np.repeat(np.eye(3)[None], m, axis=0)
    rows = np.arange(m)
    for _ in range(sweeps):
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[:, p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            app, aqq = A[:, p, p], A[:, q, q]
            theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            R = np.repeat(np.eye(3)[None], m, axis=0)
            R[rows, p, p] = c
            R[rows, q, q] = c
            R[rows, p, q] = s
            R[rows, q, p] = -s
            A = np.einsum("mji,mjk,mkl->mil", R, A, R)
            V = V @ R
    vals = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return vals, V


def sym_eigh3(A: np.ndarray):
    """Eigen-decomposition of stacked symmetric 3x3 matrices.

    Returns (m x 3 eigenvalues descending and clamped at 0, m x 3 x 3
    eigenvectors as columns).
    """
    A = np.asarray(A, dtype=np.float64)
    m = len(A)
    vals = _sym_eigvals(A)
    vecs = np.repeat(np.eye(3)[None], m, axis=0)
    scale = np.maximum(np.abs(vals).max(axis=1), 1e-300)
    gap12 = (vals[:, 0] - vals[:, 1]) / scale
    gap23 = (vals[:, 1] - vals[:, 2]) / scale
    zero = np.abs(vals).max(axis=1) == 0
    good = (gap12 > _GAP_TOL) & (gap23 > _GAP_TOL) & ~zero
    if good.any():
        v1 = _eigvec_for(A[good], vals[good, 0])
        v3 = _eigvec_for(A[good], vals[good, 2])
        v2 = np.cross(v3, v1)
        v2 /= np.linalg.norm(v2, axis=1, keepdims=True)
        vecs[good] = np.stack([v1, v2, v3], axis=2)
    hard = ~good & ~zero
    if hard.any():
        jv, jV = _jacobi_eigh(A[hard])
        vals[hard] = jv
        vecs[hard] = jV
    return np.maximum(vals, 0.0), vecs


def features_from_covariance(cov: np.ndarray) -> np.ndarray:
    vals, vecs = sym_eigh3(cov)
    l1, l2, l3 = vals[:, 0], vals[:, 1], vals[:, 2]
    out = np.zeros((len(cov), 4))
    nz = l1 > 0
    out[nz, 0] = (l1[nz] - l2[nz]) / l1[nz]
    out[nz, 1] = (l2[nz] - l3[nz]) / l1[nz]
    out[nz, 2] = l3[nz] / l1[nz]
    # horizontal magnitude keeps the descriptor invariant to rotation about z
    horiz = np.linalg.norm(vecs[:, :2, :], axis=1)  # m x 3 (per eigenvector)
    vert = np.abs(vecs[:, 2, :])
    vh = np.sum(vals * horiz, axis=1)
    vz = np.sum(vals * vert, axis=1)
    norm = np.hypot(vh, vz)
    ok = norm > 0
    out[ok, 3] = vz[ok] / norm[ok]
    return np.clip(out, 0.0, 1.0)


def compute_geometric_features(
    cloud: Union[PointCloud, np.ndarray], k_geo: int = 10
) -> GeomFeatureSet:
    """Linearity, planarity, scattering and verticality of each point's k_geo-neighbourhood."""
    coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if k_geo < 3:
        raise ValueError(f"k_geo must be at least 3, got {k_geo}")
    if len(coords) < k_geo:
        raise ValueError(f"need at least k_geo={k_geo} points, got {len(coords)}")
    idx, _ = knn_table(coords, k_geo)
    nb = coords[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / k_geo
    return GeomFeatureSet(features_from_covariance(cov), k_geo)
