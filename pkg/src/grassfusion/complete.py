"""Completion, subspace identification and the end-to-end pipeline.

Once proxies are clustered, each cluster is completed at rank ``r`` by
alternating least squares, its column space is read off by SVD, and columns
that did not take part in the optimization are assigned to the nearest
recovered subspace by their relative residual on observed rows.
"""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import least_squares

from .cluster import affinity, distance_matrix, spectral_cluster
from .exceptions import (
    DegenerateInputError,
    ParameterError,
    ShapeError,
    StageError,
    UnderdeterminedError,
)
from .objective import ObservedVector, ProxyEnsemble, optimize
from .synth import MaskedMatrix


class LRMCResult(NamedTuple):
    completed: np.ndarray
    basis: np.ndarray
    residuals: list


@dataclass(frozen=True)
class SubspaceEstimate:
    basis: np.ndarray
    cluster_id: int = 0

    @property
    def r(self):
        return self.basis.shape[1]


def _batched_lstsq(F, mask, values):
    """Solve ``min |F[mask_j] z - values_j[mask_j]|`` for every column j.

    ``F`` is ``p x r``; ``mask``/``values`` are ``p x q``. Uses the
    pseudo-inverse of each normal matrix, so rank-deficient systems get the
    minimum-norm solution.
    """
    W = mask.astype(float)
    gram = np.einsum("pj,pa,pb->jab", W, F, F, optimize=True)
    rhs = F.T @ (W * values)
    return np.einsum("jab,bj->aj", np.linalg.pinv(gram, hermitian=True), rhs, optimize=True)


def lrmc_als(cluster, r, tol=1e-12, max_iters=2000, seed=0, init="svd"):
    """Rank-``r`` completion of a masked matrix by alternating least squares.

    Factors ``A`` (m x r) and ``B`` (r x n) are updated in turn, each by exact
    least squares on the observed entries, so the observed squared residual
    never increases. Stops when its relative change falls below ``tol``. If
    the sweeps stall above the noise floor, a damped Gauss-Newton pass on
    the same residual finishes the fit.

    ``init="svd"`` starts from the top-r left singular vectors of the
    zero-filled matrix; ``init="random"`` draws ``A`` from ``seed``.

    Returns:
        LRMCResult with the ``A @ B`` estimate, an orthonormal basis of its
        column space, and the residual history (one entry per sweep).
    """
    values, mask = cluster.values, cluster.mask
    m, n = values.shape
    counts = mask.sum(axis=0)
    short = np.flatnonzero(counts <= r)
    if short.size:
        raise UnderdeterminedError(f"column {short[0]} has {counts[short[0]]} observations, need more than r={r}")
    if init == "svd":
        lead = np.linalg.svd(values, full_matrices=False)[0][:, :r]
        A = lead + 1e-3 * np.random.default_rng(seed).standard_normal((m, r))
    elif init == "random":
        A = np.random.default_rng(seed).standard_normal((m, r))
    else:
        raise ParameterError(f"unknown init {init!r}")
    scale = float(np.sum(values[mask] ** 2)) or 1.0
    residuals = []
    for _ in range(max_iters):
        B = _batched_lstsq(A, mask, values)
        A = _batched_lstsq(B.T, mask.T, values.T).T
        res = float(np.sum((mask * (A @ B - values)) ** 2))
        residuals.append(res)
        if res <= 1e-30 * scale:
            break
        if len(residuals) > 1 and residuals[-2] - res <= tol * residuals[-2]:
            break
    if residuals[-1] > 1e-24 * scale:
        A, B = _polish(A, B, mask, values, residuals)
    completed = A @ B
    return LRMCResult(completed, identify_subspace(completed, r).basis, residuals)


def _polish(A, B, mask, values, residuals):
    # ALS can crawl for thousands of sweeps on sparse patterns; a
    # Levenberg-Marquardt pass on the same factored residual finishes the
    # job. Kept only if it lowers the residual, so the history stays monotone.
    m, r = A.shape
    n = B.shape[1]
    i, j = np.nonzero(mask)
    target = values[i, j]
    rows = np.arange(i.size)

    def split(z):
        return z[: m * r].reshape(m, r), z[m * r :].reshape(r, n)

    def fun(z):
        Az, Bz = split(z)
        return np.einsum("pr,rp->p", Az[i], Bz[:, j]) - target

    def jac(z):
        Az, Bz = split(z)
        J = np.zeros((i.size, (m + n) * r))
        for a in range(r):
            J[rows, i * r + a] = Bz[a, j]
            J[rows, m * r + a * n + j] = Az[i, a]
        return J

    method = "lm" if i.size >= (m + n) * r else "trf"
    sol = least_squares(fun, np.r_[A.ravel(), B.ravel()], jac=jac, method=method,
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    res = float(np.sum(sol.fun**2))
    if res < residuals[-1]:
        residuals.append(res)
        return split(sol.x)
    return A, B


def identify_subspace(completed, r, cluster_id=0):
    """Top-r left singular vectors of a completed cluster."""
    completed = np.asarray(completed, dtype=float)
    if completed.ndim == 1:
        completed = completed[:, None]
    if completed.shape[1] < 1:
        raise ShapeError("need at least one column")
    U, s, _ = np.linalg.svd(completed, full_matrices=True)
    if r > completed.shape[0]:
        raise ParameterError(f"r={r} exceeds the ambient dimension {completed.shape[0]}")
    if s.size < r or s[r - 1] <= 1e-12 * max(s[0], 1e-300):
        warnings.warn(f"completed block has rank below {r}; trailing directions are arbitrary", stacklevel=2)
    return SubspaceEstimate(U[:, :r], cluster_id)


def project_coefficients(x, sub):
    """Least-squares coefficients of ``x`` on the observed rows of ``sub``."""
    Uo = sub.basis[x.omega]
    if x.omega.size <= sub.r:
        raise UnderdeterminedError(f"{x.omega.size} observations, need more than r={sub.r}")
    sv = np.linalg.svd(Uo, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateInputError("basis restricted to the observed rows is rank deficient")
    return np.linalg.lstsq(Uo, x.values, rcond=None)[0]


def complete_point(theta, sub):
    return sub.basis @ np.asarray(theta, dtype=float)


def assignment_residuals(x, subs):
    """Relative observed residual of ``x`` against each subspace."""
    norm = np.linalg.norm(x.values)
    out = np.empty(len(subs))
    for k, sub in enumerate(subs):
        theta = project_coefficients(x, sub)
        resid = np.linalg.norm(x.values - sub.basis[x.omega] @ theta)
        out[k] = resid / norm if norm > 0 else 0.0
    return out


def assign_point(x, subs, residual_threshold=0.3):
    """Cluster id of the best-fitting subspace, or ``None`` if none fits.

    Ties go to the earliest subspace in ``subs``.
    """
    if not subs:
        raise ParameterError("no subspace estimates to assign to")
    res = assignment_residuals(x, subs)
    best = int(np.argmin(res))
    if res[best] > residual_threshold:
        return None
    return subs[best].cluster_id


def sketch_select(X, n_prime, m_prime, seed=0):
    """Keep the ``m_prime`` best-observed rows and ``n_prime`` random columns.

    Returns ``(sub_matrix, rows, cols)`` with both index arrays sorted.
    """
    m, n = X.shape
    if not (1 <= n_prime <= n and 1 <= m_prime <= m):
        raise ParameterError(f"need 1 <= n'={n_prime} <= {n} and 1 <= m'={m_prime} <= {m}")
    counts = X.mask.sum(axis=1)
    rows = np.sort(np.argsort(-counts, kind="stable")[:m_prime])
    cols = np.sort(np.random.default_rng(seed).choice(n, size=n_prime, replace=False))
    return MaskedMatrix(X.values[np.ix_(rows, cols)], X.mask[np.ix_(rows, cols)]), rows, cols


@dataclass
class PipelineConfig:
    eta0: float = 1.0
    beta: float = 0.5
    gamma: float = 1e-4
    grad_tol: float = 1e-6
    max_iters: int = 10000
    max_backtracks: int = 50
    k: Optional[int] = None
    bandwidth: Optional[float] = None
    n_prime: Optional[int] = None
    m_prime: Optional[int] = None
    residual_threshold: float = 0.3
    refine: bool = False
    als_tol: float = 1e-12
    als_max_iters: int = 2000
    seed: int = 0


@dataclass
class PipelineResult:
    """``labels`` uses -1 for columns that fit no recovered subspace.

    ``completed`` keeps observed entries and fills the rest (NaN for
    unassigned columns); ``fitted`` is the raw low-rank estimate.
    """

    labels: np.ndarray
    completed: np.ndarray
    fitted: np.ndarray
    subspaces: list
    trace: object
    unassigned: np.ndarray
    solved_columns: np.ndarray
    extra_traces: list = field(default_factory=list)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _fuse_and_cluster(X, cols, rows, r, lam, cfg):
    sub = MaskedMatrix(X.values[np.ix_(rows, cols)], X.mask[np.ix_(rows, cols)])
    ens = _stage("init", ProxyEnsemble.from_masked, sub.values, sub.mask, r, lam, cfg.seed)
    ens, trace = _stage(
        "optimize", optimize, ens, eta0=cfg.eta0, beta=cfg.beta, gamma=cfg.gamma,
        grad_tol=cfg.grad_tol, max_iters=cfg.max_iters, max_backtracks=cfg.max_backtracks,
    )
    A = _stage("affinity", lambda: affinity(distance_matrix(ens), cfg.bandwidth))
    k = None if cfg.k is None else min(cfg.k, len(cols))
    labels = _stage("cluster", spectral_cluster, A, k, cfg.seed)
    return labels, trace


def _complete_clusters(X, cols, labels, r, cfg, first_id, fitted, subspaces):
    for c in np.unique(labels):
        members = cols[labels == c]
        res = _stage("complete", lrmc_als, X.columns(members), r, cfg.als_tol, cfg.als_max_iters, cfg.seed)
        fitted[:, members] = res.completed
        subspaces.append(SubspaceEstimate(res.basis, first_id + int(c)))


def hrmc_pipeline(X, r, lam=1e-5, config=None):
    """Cluster, complete and identify subspaces of a masked matrix.

    Steps: optional sketch, proxy fusion, spectral clustering of the proxies,
    rank-r completion per cluster, SVD subspace estimates, then residual
    assignment and completion of every column not used in the fusion.
    With ``config.refine`` the columns left unassigned are fused again on
    their own and receive fresh cluster ids.
    """
    cfg = config or PipelineConfig()
    if not isinstance(X, MaskedMatrix):
        raise ParameterError("X must be a MaskedMatrix")
    m, n = X.shape
    if m == 0 or n == 0 or r < 1:
        raise ParameterError("empty matrix or r < 1")
    if cfg.n_prime is not None or cfg.m_prime is not None:
        _, rows, cols = sketch_select(X, cfg.n_prime or n, cfg.m_prime or m, cfg.seed)
    else:
        rows, cols = np.arange(m), np.arange(n)

    labels = np.full(n, -1)
    fitted = np.full((m, n), np.nan)
    subspaces = []
    lab_s, trace = _fuse_and_cluster(X, cols, rows, r, lam, cfg)
    labels[cols] = lab_s
    _complete_clusters(X, cols, lab_s, r, cfg, 0, fitted, subspaces)

    rest = np.setdiff1d(np.arange(n), cols)
    unassigned = _assign_columns(X, rest, subspaces, cfg.residual_threshold, labels, fitted)

    extra = []
    if cfg.refine and unassigned.size > r + 1:
        first_id = max(s.cluster_id for s in subspaces) + 1
        lab_u, trace_u = _fuse_and_cluster(X, unassigned, np.arange(m), r, lam, cfg)
        extra.append(trace_u)
        labels[unassigned] = first_id + lab_u
        _complete_clusters(X, unassigned, lab_u, r, cfg, first_id, fitted, subspaces)
        unassigned = np.array([], dtype=int)

    completed = np.where(X.mask, X.values, fitted)
    return PipelineResult(labels, completed, fitted, subspaces, trace, unassigned, cols, extra)


def _assign_columns(X, idx, subspaces, threshold, labels, fitted):
    left = []
    for j in idx:
        x = ObservedVector.from_column(X.values[:, j], X.mask[:, j])
        if x.omega.size <= min(s.r for s in subspaces):
            left.append(j)
            continue
        label = _stage("assign", assign_point, x, subspaces, threshold)
        if label is None:
            left.append(j)
            continue
        sub = next(s for s in subspaces if s.cluster_id == label)
        labels[j] = label
        fitted[:, j] = complete_point(project_coefficients(x, sub), sub)
    return np.asarray(left, dtype=int)


def observed_residuals(X, fitted):
    """Per-column ``|fitted - x| / |x|`` over observed rows."""
    diff = np.where(X.mask, fitted - X.values, 0.0)
    num = np.linalg.norm(np.nan_to_num(diff, nan=np.inf), axis=0)
    den = np.linalg.norm(X.values, axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def rank_sweep(X, r_max, lam=1e-5, config=None, fit_threshold=1e-3):
    """Peel off columns explained at rank 1, then rank 2, ... up to ``r_max``.

    At each rank the remaining columns go through :func:`hrmc_pipeline`; a
    column counts as explained when its relative observed residual is at
    most ``fit_threshold`` and its cluster has more than ``r`` members
    (a cluster of at most ``r`` columns is fit by any rank-r model).

    Returns:
        list of ``(r, explained_column_indices)`` and, as the last entry,
        ``(None, unexplained_indices)``.
    """
    if r_max < 1:
        raise ParameterError("r_max must be >= 1")
    cfg = config or PipelineConfig()
    remaining = np.arange(X.shape[1])
    out = []
    for r in range(1, r_max + 1):
        usable = remaining[X.mask[:, remaining].sum(axis=0) > r]
        if usable.size <= r:
            break
        sub = X.columns(usable)
        result = hrmc_pipeline(sub, r, lam, cfg)
        res = observed_residuals(sub, result.fitted)
        sizes = np.bincount(result.labels[result.labels >= 0], minlength=1)
        big = np.array([lab >= 0 and sizes[lab] > r for lab in result.labels])
        explained = usable[(res <= fit_threshold) & big]
        out.append((r, explained))
        remaining = np.setdiff1d(remaining, explained)
        if remaining.size == 0:
            break
    out.append((None, remaining))
    return out
