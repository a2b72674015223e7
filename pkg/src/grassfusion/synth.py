"""Synthetic union-of-subspaces data and Bernoulli sampling masks.

Every random draw comes from its own named stream derived from
``(seed, label)`` through a counter-based Philox generator, so the bases,
coefficients, mask and noise never depend on the order of calls.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, ParameterError
from .manifold import orthonormalize


def stream(seed, label):
    """Independent generator for the named stream ``label`` under ``seed``."""
    key = zlib.crc32(label.encode())
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))


@dataclass(frozen=True)
class MaskedMatrix:
    """An ``m x n`` matrix with boolean mask (True = observed).

    Values at unobserved positions are never read; they are zeroed on
    construction so that nothing leaks through by accident.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 2:
            raise ParameterError(f"values {values.shape} and mask {mask.shape} must be equal 2-d shapes")
        object.__setattr__(self, "values", np.where(mask, values, 0.0))
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.values.shape

    def columns(self, idx):
        return MaskedMatrix(self.values[:, idx], self.mask[:, idx])

    def rows(self, idx):
        return MaskedMatrix(self.values[idx], self.mask[idx])


@dataclass(frozen=True)
class GroundTruth:
    bases: list
    coefficients: list
    labels: np.ndarray
    full_matrix: np.ndarray

    @property
    def k(self):
        return len(self.bases)


def generate_union(m, r, k, n_per_cluster, seed=0):
    """Columns drawn from ``k`` random r-dimensional subspaces of R^m.

    ``n_per_cluster`` is an int or a length-k sequence. Bases are
    orthonormalized Gaussian matrices, coefficients are standard normal, and
    columns are grouped by cluster in label order (labels 0..k-1).
    """
    if not (m >= r >= 1 and k >= 1):
        raise ParameterError(f"need m >= r >= 1 and k >= 1, got m={m}, r={r}, k={k}")
    sizes = np.broadcast_to(np.asarray(n_per_cluster, dtype=int), (k,))
    if np.any(sizes < 1):
        raise ParameterError("every cluster needs at least one column")
    rng_b = stream(seed, "bases")
    rng_c = stream(seed, "coefficients")
    bases, coefs = [], []
    for _ in range(k):
        while True:
            try:
                bases.append(orthonormalize(rng_b.standard_normal((m, r))))
                break
            except DegenerateInputError:
                continue
    for nk in sizes:
        coefs.append(rng_c.standard_normal((r, int(nk))))
    full = np.hstack([U @ T for U, T in zip(bases, coefs)])
    labels = np.repeat(np.arange(k), sizes)
    return GroundTruth(bases, coefs, labels, full)


def apply_mask(X, p, seed=0):
    """Observe each entry independently with probability ``p``."""
    if not 0 < p <= 1:
        raise ParameterError(f"sampling rate must lie in (0, 1], got {p}")
    X = np.asarray(X, dtype=float)
    mask = stream(seed, "mask").random(X.shape) < p
    return MaskedMatrix(X, mask)


def add_noise(X, sigma, seed=0):
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    X = np.asarray(X, dtype=float)
    if sigma == 0:
        return X.copy()
    return X + sigma * stream(seed, "noise").standard_normal(X.shape)


def sampling_limit(r, m, n):
    """Information-theoretic sampling rate ``(r + 1) / min(m, n)``."""
    if min(r, m, n) <= 0:
        raise ParameterError("r, m and n must be positive")
    return (r + 1) / min(m, n)
