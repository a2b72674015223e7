"""Recover a 5x5 rank-one matrix from 11 of its 25 entries."""
import numpy as np

from grassfusion import MaskedMatrix, lrmc_als

rng = np.random.default_rng(0)
M = np.outer(rng.standard_normal(5), rng.standard_normal(5))
mask = np.zeros((5, 5), bool)
mask[[0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0], [0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 4]] = True

res = lrmc_als(MaskedMatrix(M, mask), 1)
print("observed pattern:")
print(mask.astype(int))
print(f"relative error {np.linalg.norm(res.completed - M) / np.linalg.norm(M):.1e}")
print(f"{len(res.residuals)} residual evaluations, last {res.residuals[-1]:.1e}")
