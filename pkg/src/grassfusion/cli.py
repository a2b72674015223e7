"""Command-line experiment driver.

Subcommands::

    grassfusion synth-sweep CONFIG   sweep sampling rates and seeds on synthetic data
    grassfusion run-file CONFIG      same sweep on a CSV matrix (rows = features)
    grassfusion trace CONFIG         one run, full optimization trace
    grassfusion limits M N R         print the sampling limit (r + 1) / min(m, n)

Configuration files hold one ``key = value`` per line; ``#`` starts a
comment. Unknown keys are rejected. See ``CONFIG_KEYS`` for the full list.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 every run
failed.
"""

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .cluster import clustering_error
from .complete import PipelineConfig, hrmc_pipeline
from .exceptions import ConfigError, DataError
from .manifold import principal_angles
from .synth import MaskedMatrix, add_noise, apply_mask, generate_union, sampling_limit

log = logging.getLogger("grassfusion")

TRACE_COLUMNS = ("iteration", "objective", "chordal_sum", "geodesic_sum", "grad_norm", "eta")
CURVE_COLUMNS = ("p", "mean_error", "std_error", "p_star")


@dataclass
class ExperimentConfig:
    mode: str = "synthetic"
    m: int = 50
    r: int = 2
    subspaces: int = 2
    n_per_cluster: int = 30
    noise: float = 0.0
    path: Optional[str] = None
    labels_path: Optional[str] = None
    p: tuple = (0.5,)
    seeds: tuple = (0,)
    lam: float = 1e-5
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
    out: str = "results"

    def pipeline_config(self, seed):
        return PipelineConfig(
            eta0=self.eta0, beta=self.beta, gamma=self.gamma, grad_tol=self.grad_tol,
            max_iters=self.max_iters, max_backtracks=self.max_backtracks, k=self.k,
            bandwidth=self.bandwidth, n_prime=self.n_prime, m_prime=self.m_prime,
            residual_threshold=self.residual_threshold, refine=self.refine, seed=seed,
        )


def _int_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _auto(parse):
    def inner(text):
        return None if text.strip().lower() in ("auto", "none", "") else parse(text)
    return inner


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive(v):
    return v > 0


# key -> (parser, validity check, description of the admissible range)
CONFIG_KEYS = {
    "mode": (str, lambda v: v in ("synthetic", "file"), "synthetic or file"),
    "m": (int, lambda v: v >= 1, ">= 1"),
    "r": (int, lambda v: v >= 1, ">= 1"),
    "subspaces": (int, lambda v: v >= 1, ">= 1"),
    "n_per_cluster": (int, lambda v: v >= 1, ">= 1"),
    "noise": (float, lambda v: v >= 0, ">= 0"),
    "path": (str, lambda v: True, "a file path"),
    "labels_path": (str, lambda v: True, "a file path"),
    "p": (_float_list, lambda v: all(0 < x <= 1 for x in v), "values in (0, 1]"),
    "seeds": (_int_list, lambda v: all(s >= 0 for s in v), "non-negative integers"),
    "lam": (float, lambda v: v >= 0, ">= 0"),
    "eta0": (float, _positive, "> 0"),
    "beta": (float, lambda v: 0 < v < 1, "in (0, 1)"),
    "gamma": (float, lambda v: 0 < v < 1, "in (0, 1)"),
    "grad_tol": (float, lambda v: v >= 0, ">= 0"),
    "max_iters": (int, lambda v: v >= 0, ">= 0"),
    "max_backtracks": (int, lambda v: v >= 1, ">= 1"),
    "k": (_auto(int), lambda v: v is None or v >= 1, "auto or >= 1"),
    "bandwidth": (_auto(float), lambda v: v is None or v > 0, "auto or > 0"),
    "n_prime": (_auto(int), lambda v: v is None or v >= 1, "auto or >= 1"),
    "m_prime": (_auto(int), lambda v: v is None or v >= 1, "auto or >= 1"),
    "residual_threshold": (float, lambda v: v >= 0, ">= 0"),
    "refine": (_bool, lambda v: True, "true or false"),
    "out": (str, lambda v: True, "a directory"),
}


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: malformed configuration: {exc}") from exc
    values = {}
    for key, raw in parser["config"].items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        parse, ok, allowed = CONFIG_KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: {key}: cannot parse {raw!r} ({exc})") from exc
        if not ok(value):
            raise ConfigError(f"{source}: {key}: {raw!r} out of range, expected {allowed}")
        values[key] = value
    cfg = ExperimentConfig(**values)
    if cfg.mode == "synthetic" and cfg.r > cfg.m:
        raise ConfigError(f"{source}: r: {cfg.r} exceeds m={cfg.m}")
    if cfg.mode == "file":
        if not cfg.path:
            raise ConfigError(f"{source}: path: required when mode = file")
        base = os.path.dirname(os.path.abspath(source)) if os.path.exists(source) else ""
        cfg.path = os.path.join(base, cfg.path)
        if cfg.labels_path:
            cfg.labels_path = os.path.join(base, cfg.labels_path)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from exc
    return parse_config(text, source=str(path))


def load_masked_matrix(path):
    """Read a features x samples CSV; empty cells and ``NaN`` are missing."""
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                rows.append((lineno, row))
    except OSError as exc:
        raise DataError(f"{path}: cannot read: {exc.strerror}") from exc
    if not rows:
        raise DataError(f"{path}: no data")
    width = len(rows[0][1])
    values = np.zeros((len(rows), width))
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                continue
            try:
                values[i, j] = float(cell)
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}, column {j + 1}: not a number: {cell!r}") from exc
            if not math.isfinite(values[i, j]):
                raise DataError(f"{path}: row {lineno}, column {j + 1}: non-finite value {cell!r}")
            mask[i, j] = True
    log.info("loaded %s: %d features x %d samples, %.3f observed", path, *values.shape, mask.mean())
    return MaskedMatrix(values, mask)


def _load_labels(path, n):
    try:
        with open(path, encoding="utf-8") as fh:
            labels = np.array([int(tok) for tok in fh.read().replace(",", " ").split()])
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read labels: {exc}") from exc
    if labels.size != n:
        raise DataError(f"{path}: {labels.size} labels for {n} samples")
    return labels


@dataclass
class RunRecord:
    p: float
    seed: int
    clustering_error: float = math.nan
    completion_error: float = math.nan
    max_angle: float = math.nan
    iterations: int = 0
    reason: str = ""
    wall_time: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class RunReport:
    config: ExperimentConfig
    p_star: float
    records: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def curve(self):
        """``[(p, mean, std)]`` over successful runs, in configured order."""
        out = []
        for p in self.config.p:
            errs = [rec.clustering_error for (q, _), rec in self.records.items()
                    if q == p and not rec.failed and not math.isnan(rec.clustering_error)]
            if errs:
                out.append((p, float(np.mean(errs)), float(np.std(errs))))
            else:
                out.append((p, math.nan, math.nan))
        return out

    @property
    def n_failed(self):
        return sum(rec.failed for rec in self.records.values())


class _Instance:
    """Data for one configured experiment: full matrix (if known), mask, labels."""

    def __init__(self, cfg):
        self.cfg = cfg
        if cfg.mode == "file":
            self.base = load_masked_matrix(cfg.path)
            n = self.base.shape[1]
            self.labels = _load_labels(cfg.labels_path, n) if cfg.labels_path else None
        else:
            self.base = None
            self.labels = None

    @property
    def shape(self):
        if self.base is not None:
            return self.base.shape
        return self.cfg.m, self.cfg.subspaces * self.cfg.n_per_cluster

    def draw(self, p, seed):
        """``(observed MaskedMatrix, ground-truth matrix or None, truth mask, labels, bases)``."""
        cfg = self.cfg
        if self.base is None:
            gt = generate_union(cfg.m, cfg.r, cfg.subspaces, cfg.n_per_cluster, seed)
            full = add_noise(gt.full_matrix, cfg.noise, seed)
            X = apply_mask(full, p, seed)
            return X, gt.full_matrix, np.ones(full.shape, bool), gt.labels, gt.bases
        # file mode: optionally thin the observed entries; held-back entries are scored
        if p >= 1:
            return self.base, None, None, self.labels, None
        thin = apply_mask(self.base.values, p, seed)
        X = MaskedMatrix(self.base.values, self.base.mask & thin.mask)
        return X, self.base.values, self.base.mask, self.labels, None


def _score(rec, result, X, truth, truth_mask, labels, bases):
    if labels is not None:
        rec.clustering_error = clustering_error(result.labels, labels)
    if truth is not None:
        held = truth_mask & ~X.mask
        if held.any():
            est = result.completed[held]
            ref = truth[held]
            if np.all(np.isfinite(est)):
                rec.completion_error = float(np.linalg.norm(est - ref) / max(np.linalg.norm(ref), 1e-300))
            else:
                rec.completion_error = math.inf
        else:
            rec.completion_error = 0.0
    if bases is not None and result.subspaces:
        worst = 0.0
        for B in bases:
            if B.shape[1] != result.subspaces[0].r:
                continue
            best = min(principal_angles(s.basis, B).angles.max() for s in result.subspaces)
            worst = max(worst, best)
        rec.max_angle = float(worst)


def _one_run(instance, p, seed):
    cfg = instance.cfg
    rec = RunRecord(p, seed)
    start = time.perf_counter()
    trace = None
    try:
        X, truth, truth_mask, labels, bases = instance.draw(p, seed)
        result = hrmc_pipeline(X, cfg.r, cfg.lam, cfg.pipeline_config(seed))
        trace = result.trace
        rec.iterations = trace.iterations
        rec.reason = trace.reason
        _score(rec, result, X, truth, truth_mask, labels, bases)
    except Exception as exc:  # a failed run must not end the sweep
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("run p=%g seed=%d failed: %s", p, seed, rec.error)
    rec.wall_time = time.perf_counter() - start
    log.info("p=%g seed=%d error=%s iterations=%d (%s) %.1fs",
             p, seed, rec.clustering_error, rec.iterations, rec.reason or "failed", rec.wall_time)
    return rec, trace


def run_experiment(cfg, threads=1):
    """Run every configured ``(p, seed)`` pair and collect a RunReport.

    Runs are independent; with ``threads > 1`` they execute concurrently and
    the report is assembled by key, so the result does not depend on order.
    """
    instance = _Instance(cfg)
    m, n = instance.shape
    report = RunReport(cfg, sampling_limit(cfg.r, m, n))
    jobs = [(p, s) for p in cfg.p for s in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(lambda job: _one_run(instance, *job), jobs))
    else:
        done = [_one_run(instance, *job) for job in jobs]
    for job, (rec, trace) in zip(jobs, done):
        report.records[job] = rec
        if trace is not None:
            report.traces[job] = trace
    return report


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc


def trace_filename(p, seed):
    return f"trace_p{p:g}_seed{seed}.csv"


def emit_outputs(report, out_dir):
    """Write ``curve.csv``, one trace CSV per run and ``summary.json``.

    Returns the list of written paths. CSV content depends only on the
    report values, so identical configurations give identical files.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out_dir}: {exc.strerror}") from exc
    written = []
    curve = os.path.join(out_dir, "curve.csv")
    _write_csv(curve, CURVE_COLUMNS, [(p, mu, sd, report.p_star) for p, mu, sd in report.curve()])
    written.append(curve)
    for (p, seed), trace in sorted(report.traces.items()):
        path = os.path.join(out_dir, trace_filename(p, seed))
        _write_csv(path, TRACE_COLUMNS, trace.rows())
        written.append(path)
    summary = {
        "config": asdict(report.config),
        "seeds": list(report.config.seeds),
        "p_star": report.p_star,
        "curve": [{"p": p, "mean_error": mu, "std_error": sd} for p, mu, sd in report.curve()],
        "runs": [asdict(rec) for _, rec in sorted(report.records.items())],
        "failed": report.n_failed,
    }
    path = os.path.join(out_dir, "summary.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, default=str)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    written.append(path)
    return written


def _build_parser():
    ap = argparse.ArgumentParser(prog="grassfusion", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="run this seed only, overriding the config")
    common.add_argument("--out", help="output directory, overriding the config")
    common.add_argument("--threads", type=int, default=1, help="concurrent runs (default 1)")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("synth-sweep", "sweep on synthetic data"),
                       ("run-file", "sweep on a CSV matrix"),
                       ("trace", "single run with full trace")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("config")
    sp = sub.add_parser("limits", parents=[common], help="print the sampling limit")
    sp.add_argument("m", type=int)
    sp.add_argument("n", type=int)
    sp.add_argument("r", type=int)
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "limits":
            if min(args.m, args.n, args.r) < 1:
                raise ConfigError("m, n and r must be positive")
            print(repr(sampling_limit(args.r, args.m, args.n)))
            return 0
        cfg = load_config(args.config)
        expected = "file" if args.command == "run-file" else None
        if args.command == "synth-sweep":
            expected = "synthetic"
        if expected and cfg.mode != expected:
            raise ConfigError(f"{args.config}: mode: {args.command} needs mode = {expected}, got {cfg.mode}")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,))
        if args.out:
            cfg = replace(cfg, out=args.out)
        if args.command == "trace":
            cfg = replace(cfg, p=cfg.p[:1], seeds=cfg.seeds[:1])
        report = run_experiment(cfg, threads=args.threads)
        paths = emit_outputs(report, cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3
    if not args.quiet:
        for p, mu, sd in report.curve():
            print(f"p={p:g} mean_error={mu:.4f} std={sd:.4f} p_star={report.p_star:.4f}")
        print(f"wrote {len(paths)} files to {cfg.out}")
    if report.records and report.n_failed == len(report.records):
        print("all runs failed", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
