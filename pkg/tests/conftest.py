import numpy as np
import pytest
from scipy.stats import ortho_group

from grassfusion.manifold import geodesic_step, principal_angles


def random_stiefel(rng, m, r):
    return np.linalg.qr(rng.standard_normal((m, r)))[0]


def random_rotation(rng, r):
    if r == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    return ortho_group.rvs(r, random_state=rng)


def horizontal_basis(U):
    """Frobenius-orthonormal basis of the tangent space at ``U``."""
    m, r = U.shape
    Q = np.linalg.qr(U, mode="complete")[0][:, r:]
    out = []
    for a in range(m - r):
        for b in range(r):
            D = np.zeros((m, r))
            D[:, b] = Q[:, a]
            out.append(D)
    return out


def fd_gradient(f, U, h=1e-6):
    """Retraction-based central-difference Riemannian gradient of ``f`` at ``U``."""
    G = np.zeros_like(U)
    for D in horizontal_basis(U):
        fp = f(geodesic_step(U, D, h))
        fm = f(geodesic_step(U, D, -h))
        G += (fp - fm) / (2 * h) * D
    return G


def max_angle(A, B):
    """Largest principal angle via its sine, accurate near zero."""
    s = np.linalg.norm(B - A @ (A.T @ B), 2)
    return float(np.arcsin(min(s, 1.0)))


def angles_within(U, V, lo, hi):
    a = principal_angles(U, V).angles
    return bool(np.all((a > lo) & (a < hi)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
