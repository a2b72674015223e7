"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line when it
finishes (also repeated in the pytest terminal summary) and then asserts
the criterion at its stated tolerance and runtime budget. Run alone with::

    pytest tests/test_acceptance.py -v -s
"""

import itertools
import time
from functools import lru_cache

import numpy as np
import pytest

from grassfusion.cluster import clustering_error
from grassfusion.complete import PipelineConfig, hrmc_pipeline, lrmc_als
from grassfusion.manifold import chordal_residual, geodesic_step, orthonormality_drift, principal_angles
from grassfusion.objective import ObservedVector, ProxyEnsemble, build_completion_basis, objective_value, optimize, total_gradient
from grassfusion.synth import MaskedMatrix, apply_mask, generate_union

from conftest import angles_within, fd_gradient, random_stiefel

RESULTS = {}


def report(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS[number] = line
    with capsys.disabled():
        print("\n" + line, flush=True)
    return ok


# -- 1. manifold correctness ----------------------------------------------


def test_criterion_01_manifold(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        r = int(rng.integers(1, 5))
        m = int(rng.integers(r, 13))
        U = random_stiefel(rng, m, r)
        D = rng.standard_normal((m, r)) * rng.uniform(0.01, 10)
        D -= U @ (U.T @ D)
        worst = max(worst, orthonormality_drift(geodesic_step(U, D, rng.uniform(-5, 5))))
    circle = 0.0
    for _ in range(200):
        phi, eta, speed = rng.uniform(0, 2 * np.pi), rng.uniform(-10, 10), rng.uniform(0.01, 3)
        U = np.array([[np.cos(phi)], [np.sin(phi)]])
        D = speed * np.array([[-np.sin(phi)], [np.cos(phi)]])
        ref = np.array([[np.cos(phi + speed * eta)], [np.sin(phi + speed * eta)]])
        circle = max(circle, np.abs(geodesic_step(U, D, eta) - ref).max())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and circle <= 1e-12 and elapsed < 5
    report(capsys, 1, ok, f"(drift {worst:.1e} <= 1e-8, great circle {circle:.1e} <= 1e-12, {elapsed:.1f}s < 5s)")
    assert ok


# -- 2. gradient fidelity -------------------------------------------------


def fd_instance(rng):
    while True:
        r = int(rng.integers(1, 4))
        m = int(rng.integers(2 * r + 1, 11))
        n = int(rng.integers(2, 5))
        X = rng.standard_normal((m, n))
        mask = rng.random((m, n)) < 0.6
        mask[0] = True
        ens = ProxyEnsemble.from_masked(X, mask, r, rng.uniform(0.1, 1.0), seed=0)
        P = np.stack([random_stiefel(rng, m, r) for _ in range(n)])
        if all(angles_within(P[i], P[j], 0.05, np.pi / 2 - 0.05) for i, j in itertools.combinations(range(n), 2)):
            return ens.with_proxies(P)


def test_criterion_02_gradient(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        ens = fd_instance(rng)
        G = total_gradient(ens).tangents
        Gfd = np.zeros_like(G)
        for i in range(ens.n):
            def f(V, i=i):
                P = ens.proxies.copy()
                P[i] = V
                return objective_value(ens.with_proxies(P))
            Gfd[i] = fd_gradient(f, ens.proxies[i])
        worst = max(worst, np.linalg.norm(G - Gfd) / np.linalg.norm(Gfd))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30
    report(capsys, 2, ok, f"(worst relative error {worst:.1e} <= 1e-4, {elapsed:.1f}s < 30s)")
    assert ok


# -- 3. descent guarantee -------------------------------------------------


def test_criterion_03_descent(capsys):
    start = time.perf_counter()
    good, reasons, worst_grad = 0, [], 0.0
    for s in range(10):
        rng = np.random.default_rng(s)
        m, r = int(rng.integers(6, 11)), int(rng.integers(1, 3))
        gt = generate_union(m, r, 2, 3, seed=s)
        X = apply_mask(gt.full_matrix, 0.7, seed=s)
        ens = ProxyEnsemble.from_masked(X.values, X.mask, r, 1e-2, seed=s)
        # the iteration cap is lifted so the optimizer's own tests decide
        _, trace = optimize(ens, max_iters=100_000)
        monotone = bool(np.all(np.diff(trace.objective) <= 0))
        converged = trace.grad_norm[-1] <= 1e-5 or trace.reason == "stalled"
        good += monotone and converged
        reasons.append(trace.reason)
        worst_grad = max(worst_grad, trace.grad_norm[-1])
    elapsed = time.perf_counter() - start
    ok = good == 10 and elapsed < 120
    detail = f"({good}/10 monotone and converged; stops {sorted(set(reasons))}, final |grad| <= {worst_grad:.1e}; {elapsed:.0f}s < 120s)"
    report(capsys, 3, ok, detail)
    assert ok


# -- 4. chordal oracle ----------------------------------------------------


def test_criterion_04_chordal(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    t = np.linspace(0, np.pi, 10_000, endpoint=False)
    circle = np.stack([np.cos(t), np.sin(t)])
    worst = 0.0
    for _ in range(100):
        omega = np.sort(rng.choice(3, 2, replace=False))
        x = ObservedVector(rng.standard_normal(2), omega, 3)
        X0 = build_completion_basis(x)
        U = random_stiefel(rng, 3, 1)
        brute = 1 - np.max((U.T @ (X0 @ circle)) ** 2)
        worst = max(worst, abs(chordal_residual(X0, U) - brute))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed < 10
    report(capsys, 4, ok, f"(worst gap to brute force {worst:.1e} <= 1e-3, {elapsed:.1f}s < 10s)")
    assert ok


# -- 5. clustering-error oracle -------------------------------------------


def brute_force_error(yhat, y):
    a, b = np.unique(yhat), np.unique(y)
    targets = list(b) + [None] * max(0, a.size - b.size)
    best = y.size
    for perm in itertools.permutations(targets, a.size):
        mapping = dict(zip(a, perm))
        best = min(best, sum(mapping[u] != v for u, v in zip(yhat, y)))
    return best / y.size


def test_criterion_05_clustering_error(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    agree = 0
    for _ in range(100):
        y = rng.integers(0, int(rng.integers(1, 6)), 30)
        yhat = rng.integers(0, int(rng.integers(1, 6)), 30)
        agree += clustering_error(yhat, y) == brute_force_error(yhat, y)
    elapsed = time.perf_counter() - start
    ok = agree == 100 and elapsed < 5
    report(capsys, 5, ok, f"({agree}/100 exact matches, {elapsed:.1f}s < 5s)")
    assert ok


# -- 6, 7, 8. scaled synthetic runs ---------------------------------------

SEEDS = range(5)


@lru_cache(maxsize=None)
def family_run(p, seed):
    """K=2, m=50, r=2, 30 points per cluster, lam=1e-5, default optimizer."""
    gt = generate_union(50, 2, 2, 30, seed)
    X = apply_mask(gt.full_matrix, p, seed)
    start = time.perf_counter()
    res = hrmc_pipeline(X, 2, 1e-5, PipelineConfig(k=2, seed=seed))
    elapsed = time.perf_counter() - start
    missing = ~X.mask
    err = clustering_error(res.labels, gt.labels)
    completion = np.linalg.norm((res.completed - gt.full_matrix)[missing]) / np.linalg.norm(gt.full_matrix[missing])
    angle = max(min(principal_angles(s.basis, B).angles.max() for s in res.subspaces) for B in gt.bases)
    return dict(error=err, completion=completion, angle=angle, trace=res.trace, time=elapsed)


def signature(trace):
    """Geodesic sum falls while the chordal sum rises, then the chordal sum collapses."""
    chord = np.asarray(trace.chordal_sum)
    geo = np.asarray(trace.geodesic_sum)
    peak = int(np.argmax(chord))
    late = chord[int(0.8 * trace.iterations)]
    return bool(geo[peak] < geo[0] and late <= 0.1 * chord[peak])


@pytest.mark.slow
def test_criterion_06_fusion_dynamics(capsys):
    runs = [family_run(0.5, s) for s in SEEDS]
    errors = [r["error"] for r in runs]
    shapes = [signature(r["trace"]) for r in runs]
    total = sum(r["time"] for r in runs)
    ok = np.mean(errors) <= 0.05 and all(shapes) and total <= 600
    detail = (f"(mean error {np.mean(errors):.3f} <= 0.05, per seed {np.round(errors, 3).tolist()}; "
              f"trace signature on {sum(shapes)}/5 seeds; {total:.0f}s <= 600s)")
    report(capsys, 6, ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_07_error_falls_with_p(capsys):
    ps = (0.3, 0.5, 0.7, 0.9)
    means, total = [], 0.0
    for p in ps:
        runs = [family_run(p, s) for s in SEEDS]
        means.append(float(np.mean([r["error"] for r in runs])))
        total += sum(r["time"] for r in runs)
    monotone = all(b <= a + 0.02 for a, b in zip(means, means[1:]))
    ok = monotone and means[-1] <= 0.02 and total <= 2400
    detail = (f"(mean error by p {dict(zip(ps, np.round(means, 3).tolist()))}; non-increasing within 0.02: "
              f"{monotone}; p=0.9 error {means[-1]:.3f} <= 0.02; {total:.0f}s <= 2400s)")
    report(capsys, 7, ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_08_completion(capsys):
    runs = {s: family_run(0.5, s) for s in SEEDS}
    perfect = [s for s, r in runs.items() if r["error"] == 0]
    bad = [s for s in perfect if runs[s]["completion"] > 1e-3 or runs[s]["angle"] > 0.05]
    ok = not bad
    worst_c = max((runs[s]["completion"] for s in perfect), default=float("nan"))
    worst_a = max((runs[s]["angle"] for s in perfect), default=float("nan"))
    detail = (f"(seeds with zero clustering error {perfect}; worst completion error {worst_c:.1e} <= 1e-3, "
              f"worst principal angle {worst_a:.1e} <= 0.05 rad)")
    report(capsys, 8, ok, detail)
    assert ok


# -- 9. sketch and assign -------------------------------------------------


@pytest.mark.slow
def test_criterion_09_sketch_assign(capsys):
    start = time.perf_counter()
    accuracies = {}
    sketch_errors = {}
    for seed in SEEDS:
        gt = generate_union(50, 2, 2, 100, seed)
        X = apply_mask(gt.full_matrix, 0.7, seed)
        res = hrmc_pipeline(X, 2, 1e-5, PipelineConfig(k=2, n_prime=60, seed=seed))
        cols = res.solved_columns
        sketch_errors[seed] = float(clustering_error(res.labels[cols], gt.labels[cols]))
        if sketch_errors[seed] != 0:
            continue
        to_truth = {res.labels[c]: gt.labels[c] for c in cols}
        rest = np.setdiff1d(np.arange(200), cols)
        hits = [to_truth.get(res.labels[j], -1) == gt.labels[j] for j in rest]
        accuracies[seed] = float(np.mean(hits))
    elapsed = time.perf_counter() - start
    ok = bool(accuracies) and min(accuracies.values()) >= 0.95 and elapsed <= 900
    detail = (f"(sketch clustering error by seed {dict((k, round(v, 3)) for k, v in sketch_errors.items())}; "
              f"held-out accuracy on perfect sketches {accuracies} >= 0.95; {elapsed:.0f}s <= 900s)")
    report(capsys, 9, ok, detail)
    assert ok


# -- 10. rank-1 completion ------------------------------------------------


def generic_mask(rng, count):
    """5x5 pattern with ``count`` entries, >= 2 per column, connected."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    while True:
        mask = np.zeros(25, bool)
        mask[rng.choice(25, count, replace=False)] = True
        mask = mask.reshape(5, 5)
        if mask.sum(axis=0).min() < 2 or mask.sum(axis=1).min() < 1:
            continue
        graph = np.block([[np.zeros((5, 5)), mask], [mask.T, np.zeros((5, 5))]])
        if connected_components(csr_matrix(graph))[0] == 1:
            return mask


def test_criterion_10_lrmc(capsys):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        M = np.outer(rng.standard_normal(5), rng.standard_normal(5))
        mask = generic_mask(rng, int(rng.integers(10, 15)))
        res = lrmc_als(MaskedMatrix(M, mask), 1, seed=seed)
        worst = max(worst, np.linalg.norm(res.completed - M) / np.linalg.norm(M))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    report(capsys, 10, ok, f"(worst relative error {worst:.1e} <= 1e-6 over 20 seeds, {elapsed:.1f}s < 10s)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
