"""Fusion objective over n proxy subspaces and its Riemannian descent.

Each partially observed column ``x_i`` gets a proxy subspace ``U_i``. The
cost is

    sum_i d_c^2(x_i, U_i) + lam/2 * sum_{i,j} d_g^2(U_i, U_j)

where ``d_c^2`` measures how far ``U_i`` is from containing some completion
of ``x_i`` and ``d_g`` is the arc-length distance between proxies. All
proxies move together along their negative gradients using exact geodesic
steps and Armijo backtracking.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DegenerateInputError, LineSearchStalled, ParameterError, ShapeError
from .manifold import ORTHO_DRIFT_TOL, batched_svd, orthonormality_drift, orthonormalize

# arccos(s)/sqrt(1-s^2) is replaced by its limit 1 above this cosine
SIGMA_LIMIT = 1.0 - 1e-9


@dataclass(frozen=True)
class ObservedVector:
    """Observed entries ``values`` at 0-based sorted rows ``omega`` of an m-vector."""

    values: np.ndarray
    omega: np.ndarray
    m: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        omega = np.asarray(self.omega, dtype=int).ravel()
        if values.shape != omega.shape:
            raise ShapeError(f"{values.size} values for {omega.size} indices")
        if omega.size and (np.any(np.diff(omega) <= 0) or omega[0] < 0 or omega[-1] >= self.m):
            raise ShapeError("omega must be strictly increasing indices in [0, m)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_column(cls, column, mask):
        column = np.asarray(column, dtype=float)
        idx = np.flatnonzero(mask)
        return cls(column[idx], idx, column.size)

    def padded(self):
        """The observed values scattered into a length-m zero vector."""
        out = np.zeros(self.m)
        out[self.omega] = self.values
        return out

    @property
    def is_zero(self):
        return self.values.size == 0 or not np.any(self.values)


def build_completion_basis(x):
    """Orthonormal basis of every scalar multiple of every completion of ``x``.

    Columns are the normalized zero-padded observation followed by the
    canonical vectors of the unobserved rows; the identity when nothing
    nonzero was observed.
    """
    if x.is_zero:
        return np.eye(x.m)
    unobserved = np.setdiff1d(np.arange(x.m), x.omega)
    X0 = np.zeros((x.m, unobserved.size + 1))
    X0[:, 0] = x.padded() / np.linalg.norm(x.values)
    X0[unobserved, np.arange(1, unobserved.size + 1)] = 1.0
    return X0


def init_proxy(x, r, seed=None):
    """Random r-plane through the zero-padded observation.

    Draws a Gaussian ``m x r`` matrix, overwrites its first column with the
    padded observation and orthonormalizes, so the chordal term starts at 0.
    """
    if r > x.m or r < 1:
        raise ParameterError(f"need 1 <= r <= m, got r={r}, m={x.m}")
    rng = np.random.default_rng(seed)
    while True:
        A = rng.standard_normal((x.m, r))
        if not x.is_zero:
            A[:, 0] = x.padded()
        try:
            return orthonormalize(A)
        except DegenerateInputError:
            continue


@dataclass(frozen=True)
class ProxyEnsemble:
    """Optimization state: stacked proxies plus the data they are tied to.

    ``proxies`` has shape ``(n, m, r)``. The completion bases are kept in
    compact form: ``X0 X0^T = diag(unobserved) + xhat xhat^T`` where ``xhat``
    is the normalized padded observation (zero for an all-zero column, whose
    rows are then all flagged unobserved so that ``X0 = I``).
    """

    proxies: np.ndarray
    lam: float
    xhat: np.ndarray
    unobserved: np.ndarray

    def __post_init__(self):
        n, m, r = self.proxies.shape
        if n < 1 or r < 1 or r > m:
            raise ShapeError(f"bad proxy stack shape {self.proxies.shape}")
        if self.xhat.shape != (n, m) or self.unobserved.shape != (n, m):
            raise ShapeError("observation arrays do not match the proxy stack")
        if self.lam < 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")

    @classmethod
    def from_observations(cls, observations, r, lam, seed=None):
        rng = np.random.default_rng(seed)
        m = observations[0].m
        n = len(observations)
        xhat = np.zeros((n, m))
        unobserved = np.ones((n, m))
        proxies = np.empty((n, m, r))
        for i, x in enumerate(observations):
            if x.m != m:
                raise ShapeError(f"observation {i} has m={x.m}, expected {m}")
            if not x.is_zero:
                xhat[i, x.omega] = x.values / np.linalg.norm(x.values)
                unobserved[i, x.omega] = 0.0
            proxies[i] = init_proxy(x, r, rng)
        return cls(proxies, float(lam), xhat, unobserved)

    @classmethod
    def from_masked(cls, values, mask, r, lam, seed=None):
        """Build from an ``m x n`` data matrix and its boolean observation mask."""
        values = np.asarray(values, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        obs = [ObservedVector.from_column(values[:, j], mask[:, j]) for j in range(values.shape[1])]
        return cls.from_observations(obs, r, lam, seed)

    @property
    def n(self):
        return self.proxies.shape[0]

    @property
    def m(self):
        return self.proxies.shape[1]

    @property
    def r(self):
        return self.proxies.shape[2]

    def with_proxies(self, proxies):
        return replace(self, proxies=proxies)

    def completion_basis(self, i):
        """Explicit ``X0`` for column ``i``."""
        if not np.any(self.xhat[i]):
            return np.eye(self.m)
        rows = np.flatnonzero(self.unobserved[i])
        X0 = np.zeros((self.m, rows.size + 1))
        X0[:, 0] = self.xhat[i]
        X0[rows, np.arange(1, rows.size + 1)] = 1.0
        return X0


@dataclass(frozen=True)
class GradientStack:
    tangents: np.ndarray
    norm: float


# -- single-pair gradients, written with the singular vectors directly ----


def chordal_gradient(X0, U):
    """Riemannian gradient of ``1 - sigma_1(X0^T U)^2`` at ``U``.

    ``-2 sigma_1 (I - U U^T) v w^T`` with ``v, w`` the leading singular
    vectors of ``X0 X0^T U``. Returns zeros once the residual is <= 1e-12.
    """
    X0 = np.asarray(X0, dtype=float)
    U = np.asarray(U, dtype=float)
    if X0.shape[0] != U.shape[0]:
        raise ShapeError(f"row mismatch: X0 {X0.shape}, U {U.shape}")
    s1 = min(np.linalg.svd(X0.T @ U, compute_uv=False)[0], 1.0)
    if 1.0 - s1 * s1 <= 1e-12:
        return np.zeros_like(U)
    V, _, Wt = np.linalg.svd(X0 @ (X0.T @ U), full_matrices=False)
    vw = np.outer(V[:, 0], Wt[0])
    return -2.0 * s1 * (vw - U @ (U.T @ vw))


def _arc_weight(s):
    """``2 arccos(s) / sqrt(1 - s^2)`` with the analytic limit 2 at s -> 1."""
    s = np.clip(s, 0.0, 1.0)
    out = np.full_like(s, 2.0)
    far = s < SIGMA_LIMIT
    out[far] = 2.0 * np.arccos(s[far]) / np.sqrt(1.0 - s[far] ** 2)
    return out


def geodesic_gradient(Ui, Uj):
    """Riemannian gradient of ``d_g^2(Ui, Uj)`` with respect to ``Ui``."""
    Ui = np.asarray(Ui, dtype=float)
    Uj = np.asarray(Uj, dtype=float)
    if Ui.shape != Uj.shape:
        raise ShapeError(f"shape mismatch: {Ui.shape} vs {Uj.shape}")
    sig = np.linalg.svd(Ui.T @ Uj, compute_uv=False)
    V, _, Wt = np.linalg.svd(Uj @ (Uj.T @ Ui), full_matrices=False)
    G = (V * _arc_weight(sig)) @ Wt
    return -(G - Ui @ (Ui.T @ G))


# -- batched evaluation over an ensemble ---------------------------------


def _chordal_terms(ens, with_grad):
    U = ens.proxies
    PU = ens.unobserved[:, :, None] * U
    Ut = np.swapaxes(U, 1, 2)
    c = (ens.xhat[:, None, :] @ U)[:, 0, :]
    gram = Ut @ PU + c[:, :, None] * c[:, None, :]
    w, V = np.linalg.eigh(gram)
    resid = 1.0 - np.clip(w[:, -1], 0.0, 1.0)
    if not with_grad:
        return resid, None
    b = V[:, :, -1]
    # X0 X0^T U b, then the rank-one Euclidean gradient and its projection
    y = (PU @ b[:, :, None])[:, :, 0] + ens.xhat * np.sum(c * b, axis=1)[:, None]
    G = -2.0 * y[:, :, None] * b[:, None, :]
    G -= U @ (Ut @ G)
    G[resid <= 1e-12] = 0.0
    return resid, G


def _pair_products(U):
    """All ``U_i^T U_j`` as an ``(n, n, r, r)`` array from a single Gram matrix."""
    n, m, r = U.shape
    flat = np.swapaxes(U, 0, 1).reshape(m, n * r)
    return (flat.T @ flat).reshape(n, r, n, r).transpose(0, 2, 1, 3), flat


def _geodesic_terms(proxies, with_grad):
    """Squared distances ``d2`` (n x n) and, optionally, the stacked
    Riemannian gradients of ``sum_j d_g^2(U_i, U_j)``."""
    U = proxies
    n, m, r = U.shape
    iu, ju = np.triu_indices(n, 1)
    prods, flat = _pair_products(U)
    M = prods[iu, ju]
    d2 = np.zeros((n, n))
    if not with_grad:
        s = batched_svd(M, compute_uv=False)
        d2[iu, ju] = np.sum(np.arccos(np.clip(s, 0.0, 1.0)) ** 2, axis=-1)
        return d2 + d2.T, None
    A, s, Bt = batched_svd(M)
    d2[iu, ju] = np.sum(np.arccos(np.clip(s, 0.0, 1.0)) ** 2, axis=-1)
    w = _arc_weight(s)
    # C_ij = sum_l w_l b_l a_l^T; the Euclidean pull on U_i is -sum_j U_j C_ij
    # and the mirrored pair (j, i) uses C_ij^T
    Cp = np.swapaxes(Bt, 1, 2) * w[:, None, :] @ np.swapaxes(A, 1, 2)
    C = np.zeros((n, n, r, r))
    C[iu, ju] = Cp
    C[ju, iu] = np.swapaxes(Cp, 1, 2)
    T = (flat @ C.transpose(1, 2, 0, 3).reshape(n * r, n * r)).reshape(m, n, r).transpose(1, 0, 2)
    G = U @ (np.swapaxes(U, 1, 2) @ T) - T
    return d2 + d2.T, G


@dataclass(frozen=True)
class Evaluation:
    objective: float
    chordal_sum: float
    geodesic_sum: float


def evaluate(ens):
    """Objective value with its two components (geodesic sum over ordered pairs)."""
    resid, _ = _chordal_terms(ens, False)
    d2, _ = _geodesic_terms(ens.proxies, False)
    cs, gs = float(resid.sum()), float(d2.sum())
    return Evaluation(cs + 0.5 * ens.lam * gs, cs, gs)


def objective_value(ens):
    return evaluate(ens).objective


def total_gradient(ens):
    """Stacked Riemannian gradient over the product of Grassmannians.

    Entry ``i`` is ``chordal_gradient(X0_i, U_i) + lam * sum_j
    geodesic_gradient(U_i, U_j)``: the pair (i, j) appears twice in the
    ordered double sum, which cancels the 1/2 in front of it.
    """
    _, Gc = _chordal_terms(ens, True)
    if ens.n > 1 and ens.lam != 0.0:
        _, Gg = _geodesic_terms(ens.proxies, True)
        tangents = Gc + ens.lam * Gg
    else:
        tangents = Gc
    return GradientStack(tangents, float(np.linalg.norm(tangents)))


def geodesic_step_all(proxies, directions, eta):
    """Batched :func:`grassfusion.manifold.geodesic_step` (no tangency check)."""
    Gamma, s, Et = np.linalg.svd(directions, full_matrices=False)
    UE = proxies @ np.swapaxes(Et, 1, 2)
    out = (UE * np.cos(eta * s)[:, None, :] + Gamma * np.sin(eta * s)[:, None, :]) @ Et
    drift = orthonormality_drift(out)
    bad = drift > ORTHO_DRIFT_TOL
    if np.any(bad):
        out[bad] = np.linalg.qr(out[bad])[0]
    return out


def armijo_step(ens, grad, eta0=1.0, beta=0.5, gamma=1e-4, max_backtracks=50, f0=None):
    """Backtracking along ``-grad`` until sufficient decrease.

    Accepts the first ``eta = beta**nu * eta0`` with
    ``f(ens) - f(step(eta)) >= gamma * eta * |grad|^2``.

    Returns:
        ``(new_ensemble, eta, nu, evaluation_at_new_ensemble)``

    Raises:
        LineSearchStalled: no admissible ``nu <= max_backtracks``.
    """
    if not eta0 > 0:
        raise ParameterError(f"eta0 must be positive, got {eta0}")
    if not (0 < beta < 1 and 0 < gamma < 1):
        raise ParameterError("beta and gamma must lie in (0, 1)")
    if f0 is None:
        f0 = objective_value(ens)
    if grad.norm == 0.0:
        return ens, eta0, 0, evaluate(ens)
    g2 = grad.norm**2
    eta = eta0
    for nu in range(max_backtracks + 1):
        trial = ens.with_proxies(geodesic_step_all(ens.proxies, -grad.tangents, eta))
        ev = evaluate(trial)
        if f0 - ev.objective >= gamma * eta * g2:
            return trial, eta, nu, ev
        eta *= beta
    raise LineSearchStalled(f"no sufficient decrease after {max_backtracks} backtracks")


@dataclass
class OptimizationTrace:
    """Per-iteration history. Row 0 is the starting point (``eta = 0``)."""

    objective: list = field(default_factory=list)
    chordal_sum: list = field(default_factory=list)
    geodesic_sum: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    reason: str = ""

    def append(self, ev, grad_norm, eta):
        self.objective.append(ev.objective)
        self.chordal_sum.append(ev.chordal_sum)
        self.geodesic_sum.append(ev.geodesic_sum)
        self.grad_norm.append(grad_norm)
        self.eta.append(eta)

    @property
    def iterations(self):
        return max(len(self.objective) - 1, 0)

    def rows(self):
        return list(zip(range(len(self.objective)), self.objective, self.chordal_sum,
                        self.geodesic_sum, self.grad_norm, self.eta))


def optimize(
    ens,
    eta0=1.0,
    beta=0.5,
    gamma=1e-4,
    grad_tol=1e-6,
    max_iters=10000,
    max_backtracks=50,
    rel_tol=1e-10,
    patience=20,
    callback=None,
):
    """Riemannian gradient descent with Armijo steps on all proxies at once.

    Stops when the gradient norm drops to ``grad_tol``, the line search
    stalls, the relative decrease stays below ``rel_tol`` for ``patience``
    consecutive iterations, or after ``max_iters`` steps. ``callback(k, ens)``
    is invoked after every accepted step.

    Returns:
        ``(final_ensemble, trace)``; ``trace.reason`` names the stopping rule.
    """
    trace = OptimizationTrace()
    ev = evaluate(ens)
    flat = 0
    for k in range(max_iters + 1):
        grad = total_gradient(ens)
        if k == 0:
            trace.append(ev, grad.norm, 0.0)
        else:
            trace.grad_norm[-1] = grad.norm
        if grad.norm <= grad_tol:
            trace.reason = "gradient"
            break
        if k == max_iters:
            trace.reason = "max_iters"
            break
        try:
            ens, eta, _, new_ev = armijo_step(ens, grad, eta0, beta, gamma, max_backtracks, ev.objective)
        except LineSearchStalled:
            trace.reason = "stalled"
            break
        decrease = ev.objective - new_ev.objective
        flat = flat + 1 if decrease < rel_tol * max(abs(ev.objective), np.finfo(float).tiny) else 0
        ev = new_ev
        trace.append(ev, np.nan, eta)
        if callback is not None:
            callback(k + 1, ens)
        if flat >= patience:
            trace.grad_norm[-1] = total_gradient(ens).norm
            trace.reason = "flat"
            break
    return ens, trace
