"""Geometry on the Grassmannian G(m, r).

A point is stored as an ``m x r`` array with orthonormal columns; any two
bases related by an ``r x r`` rotation describe the same subspace. Tangent
vectors at ``U`` are ``m x r`` arrays ``D`` with ``U.T @ D == 0``.

All functions accept a single basis. Batched variants used by the optimizer
live in :mod:`grassfusion.objective`.
"""

from typing import NamedTuple

import numpy as np

from .exceptions import ContractViolation, DegenerateInputError, ShapeError

ORTHO_DRIFT_TOL = 1e-10
TANGENT_TOL = 1e-8


class PrincipalAngles(NamedTuple):
    cosines: np.ndarray
    angles: np.ndarray


def orthonormalize(matrix, rtol=1e-12):
    """Modified Gram-Schmidt orthonormalization.

    The first output column is the first input column normalized, which
    proxy initialization relies on.

    Raises:
        DegenerateInputError: if a column is (numerically) in the span of
            the preceding ones.
    """
    A = np.array(matrix, dtype=float, copy=True)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-d array, got shape {A.shape}")
    m, r = A.shape
    if r < 1 or r > m:
        raise ShapeError(f"need 1 <= r <= m, got m={m}, r={r}")
    scale = max(np.linalg.norm(A, axis=0).max(), np.finfo(float).tiny)
    Q = np.empty_like(A)
    for j in range(r):
        v = A[:, j]
        # two passes keep the loss of orthogonality at machine precision
        for _ in range(2):
            v = v - Q[:, :j] @ (Q[:, :j].T @ v)
        nv = np.linalg.norm(v)
        if nv <= rtol * scale * m:
            raise DegenerateInputError(f"column {j} is linearly dependent on columns 0..{j - 1}")
        Q[:, j] = v / nv
    return Q


def _check_pair(U, V):
    if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape:
        raise ShapeError(f"bases must share shape (m, r); got {U.shape} and {V.shape}")


def principal_angles(U, V):
    """Principal angles between span(U) and span(V)."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    _check_pair(U, V)
    s = np.linalg.svd(U.T @ V, compute_uv=False)
    cosines = np.clip(s, 0.0, 1.0)
    return PrincipalAngles(cosines, np.arccos(cosines))


def geodesic_distance(U, V):
    """Arc-length distance: the 2-norm of the principal angles."""
    return float(np.sqrt(np.sum(principal_angles(U, V).angles ** 2)))


def chordal_residual(X0, U):
    """``1 - sigma_1(X0^T U)^2``.

    Zero exactly when span(X0) and span(U) share a line. ``X0`` may have a
    different number of columns than ``U``; only the row counts must agree.
    """
    X0 = np.asarray(X0, dtype=float)
    U = np.asarray(U, dtype=float)
    if X0.ndim != 2 or U.ndim != 2 or X0.shape[0] != U.shape[0]:
        raise ShapeError(f"row mismatch: X0 {X0.shape}, U {U.shape}")
    s1 = min(np.linalg.svd(X0.T @ U, compute_uv=False)[0], 1.0)
    return float(1.0 - s1 * s1)


def project_tangent(U, G):
    """Horizontal projection ``(I - U U^T) G``."""
    U = np.asarray(U, dtype=float)
    G = np.asarray(G, dtype=float)
    if U.shape != G.shape:
        raise ShapeError(f"shape mismatch: U {U.shape}, G {G.shape}")
    return G - U @ (U.T @ G)


def orthonormality_drift(U):
    r = U.shape[-1]
    return np.linalg.norm(np.swapaxes(U, -1, -2) @ U - np.eye(r), axis=(-2, -1))


def geodesic_step(U, direction, eta):
    """Follow the geodesic from ``U`` along tangent ``direction`` for time ``eta``.

    With ``direction = Gamma diag(s) E^T`` (thin SVD) the endpoint is
    ``U E cos(eta s) E^T + Gamma sin(eta s) E^T``. The result is
    re-orthonormalized when its columns drift by more than 1e-10.
    """
    U = np.asarray(U, dtype=float)
    D = np.asarray(direction, dtype=float)
    if U.shape != D.shape:
        raise ShapeError(f"shape mismatch: U {U.shape}, direction {D.shape}")
    leak = np.linalg.norm(U.T @ D)
    if leak > TANGENT_TOL * max(1.0, np.linalg.norm(D)):
        raise ContractViolation(f"direction is not tangent at U (|U^T D| = {leak:.3e})")
    Gamma, s, Et = np.linalg.svd(D, full_matrices=False)
    out = (U @ Et.T * np.cos(eta * s) + Gamma * np.sin(eta * s)) @ Et
    if orthonormality_drift(out) > ORTHO_DRIFT_TOL:
        out = np.linalg.qr(out)[0]
    return out


def _svd_2x2(M):
    # rotation form M = Rot(phi) diag(sx, sy) Rot(theta), then sign-fix sy
    a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
    e, f, g, h = (a + d) / 2, (a - d) / 2, (c + b) / 2, (c - b) / 2
    q, r = np.hypot(e, h), np.hypot(f, g)
    sx, sy = q + r, q - r
    a1, a2 = np.arctan2(g, f), np.arctan2(h, e)
    theta, phi = (a2 - a1) / 2, (a2 + a1) / 2
    sign = np.where(sy < 0, -1.0, 1.0)
    cp, sp, ct, st = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta)
    A = np.stack([np.stack([cp, -sp * sign], -1), np.stack([sp, cp * sign], -1)], -2)
    Bt = np.stack([np.stack([ct, -st], -1), np.stack([st, ct], -1)], -2)
    return A, np.stack([sx, np.abs(sy)], -1), Bt


def batched_svd(M, compute_uv=True):
    """SVD over the leading axes of a stack of small square matrices.

    Closed forms for 1x1 and 2x2 blocks, LAPACK otherwise. Singular values
    are non-increasing along the last axis.
    """
    r = M.shape[-1]
    if r == 1:
        s = np.abs(M[..., 0, :])
        if not compute_uv:
            return s
        return np.where(M < 0, -1.0, 1.0), s, np.ones_like(M)
    if r == 2 and M.shape[-2] == 2:
        A, s, Bt = _svd_2x2(M)
        return (A, s, Bt) if compute_uv else s
    return np.linalg.svd(M, compute_uv=compute_uv)
