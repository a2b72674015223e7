"""From optimized proxies to cluster labels.

Pairwise arc-length distances between proxies are turned into a Gaussian
affinity and clustered spectrally. Labels are 0-based integers.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .exceptions import ParameterError, ShapeError
from .objective import _geodesic_terms

K_MAX = 10


def distance_matrix(proxies):
    """``D[i, j] = d_g(U_i, U_j)`` for a ``(n, m, r)`` stack or a ProxyEnsemble."""
    proxies = getattr(proxies, "proxies", proxies)
    d2, _ = _geodesic_terms(np.asarray(proxies, dtype=float), False)
    D = np.sqrt(np.maximum(d2, 0.0))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def median_bandwidth(D):
    off = D[~np.eye(D.shape[0], dtype=bool)]
    off = off[off > 0]
    return float(np.median(off)) if off.size else 1.0


def affinity(D, bandwidth=None):
    """Gaussian kernel ``exp(-D^2 / (2 s^2))`` with unit diagonal.

    ``bandwidth=None`` picks the median positive off-diagonal distance.
    """
    D = np.asarray(D, dtype=float)
    s = median_bandwidth(D) if bandwidth is None else float(bandwidth)
    if s <= 0:
        raise ParameterError(f"bandwidth must be positive, got {s}")
    A = np.exp(-(D**2) / (2.0 * s * s))
    np.fill_diagonal(A, 1.0)
    return A


def _normalized_laplacian(A):
    deg = A.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    L = np.eye(A.shape[0]) - dinv[:, None] * A * dinv[None, :]
    return 0.5 * (L + L.T)


def estimate_k_eigengap(A, k_max=K_MAX):
    """Number of clusters at the largest gap in the normalized-Laplacian spectrum."""
    n = A.shape[0]
    if n < 2:
        return 1
    ev = np.linalg.eigvalsh(_normalized_laplacian(np.asarray(A, dtype=float)))
    upper = min(n, k_max)
    if upper < 2:
        return 1
    # gaps[k - 1] = ev[k] - ev[k - 1] for candidate counts k = 1 .. upper - 1
    gaps = np.diff(ev)[: upper - 1]
    return int(np.argmax(gaps)) + 1


def spectral_cluster(A, k=None, seed=0, k_max=K_MAX):
    """Normalized spectral clustering (Ng-Jordan-Weiss).

    Embeds points with the ``k`` lowest eigenvectors of
    ``I - D^-1/2 A D^-1/2``, normalizes rows and runs k-means with 10
    restarts. ``k=None`` estimates the count from the eigengap.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ShapeError(f"affinity must be square, got {A.shape}")
    if k is None:
        k = estimate_k_eigengap(A, k_max)
    if k < 1 or k > n:
        raise ParameterError(f"cannot form {k} clusters from {n} points")
    if k == 1:
        return np.zeros(n, dtype=int)
    _, vecs = np.linalg.eigh(_normalized_laplacian(A))
    emb = vecs[:, :k]
    emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-300)
    km = KMeans(n_clusters=k, n_init=10, max_iter=300, random_state=seed)
    raw = km.fit_predict(emb)
    # relabel by first appearance so labels are compact and order-stable
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty(k, dtype=int)
    remap[np.unique(raw)[order]] = np.arange(order.size)
    return remap[raw]


def clustering_error(yhat, y):
    """Fraction of points mislabeled under the best matching of label sets."""
    yhat = np.asarray(yhat)
    y = np.asarray(y)
    if yhat.shape != y.shape or yhat.ndim != 1:
        raise ShapeError(f"label vectors differ in shape: {yhat.shape} vs {y.shape}")
    if y.size == 0:
        return 0.0
    a, ai = np.unique(yhat, return_inverse=True)
    b, bi = np.unique(y, return_inverse=True)
    conf = np.zeros((a.size, b.size), dtype=int)
    np.add.at(conf, (ai, bi), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return (y.size - conf[rows, cols].sum()) / y.size
