"""Monte Carlo harness: MSE heat map over (n, r), paired error distributions,
and coverage of the global estimator's predicted bound.

Every work item draws from streams derived from ``(seed, label, indices)``
and results are gathered by index, so outputs do not depend on the number
of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import distributions, estimators
from . import rng as rngmod
from .distributions import Distribution
from .errors import NoRootInInterval, SmoothMLEError, ValidationError
from .smoothing import SmoothedModel

ESTIMATORS = ("smoothed_mle", "unsmoothed_mle", "mean", "median", "median_of_means",
              "global_mle")
HEATMAP_HEADER = ("n", "r", "mse", "mean_abs_err", "q90", "q95", "trials", "failures")
ERRORS_HEADER = ("estimator", "trial", "error")
COVERAGE_HEADER = ("factor", "coverage", "trials")
COVERAGE_FACTORS = (1.0, 1.1, 1.2, 1.5)
CHUNK = 250


def default_r_grid(points: int = 8, lo: float = 1e-3, hi: float = 1.0) -> list[float]:
    return [float(v) for v in np.geomspace(lo, hi, points)]


@dataclass
class ExperimentConfig:
    dist: Any = "spiked_laplace"
    lambda_true: float = 0.0
    n_grid: Sequence[int] = (200, 1000, 5000)
    r_grid: Sequence[float] = field(default_factory=default_r_grid)
    delta: float = 0.05
    trials: int = 400
    estimators: Sequence[str] = ("smoothed_mle", "unsmoothed_mle", "mean", "median_of_means")
    seed: int = 0
    out_path: str | None = None
    workers: int = 1
    factors: Sequence[float] = COVERAGE_FACTORS

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ValidationError("trials must be >= 1")
        if not self.n_grid or not self.r_grid:
            raise ValidationError("n_grid and r_grid must be nonempty")
        if any(int(n) < 1 for n in self.n_grid):
            raise ValidationError("sample sizes must be >= 1")
        if any(not float(r) > 0 for r in self.r_grid):
            raise ValidationError("r_grid must be strictly positive")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValidationError(f"unknown estimators {bad}; expected a subset of {ESTIMATORS}")
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.r_grid = tuple(float(r) for r in self.r_grid)
        self.trials = int(self.trials)
        self.workers = max(1, int(self.workers))

    def distribution(self) -> Distribution:
        return resolve_dist(self.dist)


def resolve_dist(spec) -> Distribution:
    if isinstance(spec, Distribution):
        return spec
    if isinstance(spec, str):
        return distributions.make_fixture(spec)
    return distributions.from_json(spec)


@dataclass
class CellResult:
    n: int
    r: float
    mse: float
    mean_abs_err: float
    quantile_err: dict
    trials: int
    failures: int


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _map(func, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(func, jobs))
    return [func(j) for j in jobs]


def _chunks(trials):
    return [(i, min(i + CHUNK, trials)) for i in range(0, trials, CHUNK)]


def _base_samples(f, seed, n, trial, lam):
    return f.sample(n, rngmod.stream(seed, "samples", n, trial)) + lam


# ---------------------------------------------------------------------------
# heat map
# ---------------------------------------------------------------------------


def _heatmap_job(args):
    f, lam, n, r, t0, t1, seed = args
    prof = estimators.ProfileMLE.for_model(SmoothedModel(f, r))
    errs = np.full(t1 - t0, np.nan)
    for i, t in enumerate(range(t0, t1)):
        x = _base_samples(f, seed, n, t, lam)
        z = rngmod.stream(seed, "noise", n, r, t).standard_normal(n)
        try:
            errs[i] = prof.estimate(x + r * z) - lam
        except (SmoothMLEError, FloatingPointError):
            pass
    return errs


def summarize(n, r, errs) -> CellResult:
    ok = errs[np.isfinite(errs)]
    fails = int(errs.size - ok.size)
    if ok.size == 0:
        nan = float("nan")
        return CellResult(n, r, nan, nan, {0.9: nan, 0.95: nan}, int(errs.size), fails)
    a = np.abs(ok)
    return CellResult(n, r, float(np.mean(ok * ok)), float(np.mean(a)),
                      {0.9: float(np.quantile(a, 0.9)), 0.95: float(np.quantile(a, 0.95))},
                      int(errs.size), fails)


def run_mse_heatmap(cfg: ExperimentConfig) -> list[CellResult]:
    """One cell per ``(n, r)``: MSE of the full-line smoothed MLE.

    Base samples depend on ``(seed, n, trial)`` only, so every radius in a
    column sees the same data; the smoothing noise is drawn per
    ``(seed, n, r, trial)``.
    """
    f = cfg.distribution()
    jobs, index = [], []
    for n in cfg.n_grid:
        for r in cfg.r_grid:
            for t0, t1 in _chunks(cfg.trials):
                jobs.append((f, cfg.lambda_true, n, r, t0, t1, cfg.seed))
                index.append((n, r))
    parts = _map(_heatmap_job, jobs, cfg.workers)
    cells = []
    for n in cfg.n_grid:
        for r in cfg.r_grid:
            errs = np.concatenate([p for p, key in zip(parts, index) if key == (n, r)])
            cells.append(summarize(n, r, errs))
    if cfg.out_path is not None:
        write_heatmap_csv(cells, cfg.out_path)
    return cells


def write_heatmap_csv(cells, path=None) -> str:
    rows = [(c.n, c.r, c.mse, c.mean_abs_err, c.quantile_err[0.9], c.quantile_err[0.95],
             c.trials, c.failures) for c in cells]
    return _write_csv(path, HEATMAP_HEADER, rows)


def best_r_by_n(cells) -> dict:
    """``n -> r`` with the smallest MSE."""
    out = {}
    for c in cells:
        if not math.isfinite(c.mse):
            continue
        if c.n not in out or c.mse < out[c.n][1]:
            out[c.n] = (c.r, c.mse)
    return {n: v[0] for n, v in out.items()}


# ---------------------------------------------------------------------------
# paired error distributions
# ---------------------------------------------------------------------------


def _errors_job(args):
    f, lam, n, r, names, delta, t0, t1, seed = args
    model = SmoothedModel(f, r)
    prof_s = estimators.ProfileMLE.for_model(model) if "smoothed_mle" in names else None
    prof_u = None
    if "unsmoothed_mle" in names:
        try:
            prof_u = estimators.ProfileMLE.for_base(f)
        except SmoothMLEError as exc:
            # e.g. a model with an atom: every trial of this estimator fails
            prof_u = exc
    out = {name: np.full(t1 - t0, np.nan) for name in names}
    flags = {name: 0 for name in names}
    for i, t in enumerate(range(t0, t1)):
        x = _base_samples(f, seed, n, t, lam)
        z = rngmod.stream(seed, "noise", n, r, t).standard_normal(n)
        for name in names:
            try:
                if name == "smoothed_mle":
                    est = prof_s.estimate(x + r * z)
                elif name == "unsmoothed_mle":
                    if isinstance(prof_u, Exception):
                        raise prof_u
                    est = estimators.baseline_estimate(name, f, x, delta, profile=prof_u)
                elif name == "global_mle":
                    # Algorithm 2 draws its own perturbation from the trial stream
                    est = estimators.global_mle(
                        f, x, delta, rngmod.stream(seed, "alg2-noise", n, t)).lambda_hat
                else:
                    est = estimators.baseline_estimate(name, f, x, delta)
            except NoRootInInterval as exc:
                flags[name] += 1
                if exc.result is None:
                    continue
                est = exc.result.lambda_hat
            except SmoothMLEError:
                flags[name] += 1
                continue
            out[name][i] = est - lam
    return out, flags


def run_error_distribution(cfg: ExperimentConfig, r: float | None = None) -> dict:
    """``estimator -> array of errors`` over ``cfg.trials`` paired trials.

    Uses ``cfg.n_grid[0]`` samples and the smoothing radius ``r`` (default
    ``cfg.r_grid[0]``).  All estimators in a trial see the same base
    samples; the smoothed MLE adds ``r`` times a shared noise draw.
    ``result["failures"]`` counts flagged or failed trials per estimator.
    """
    f = cfg.distribution()
    n = cfg.n_grid[0]
    r = float(cfg.r_grid[0] if r is None else r)
    names = tuple(cfg.estimators)
    jobs = [(f, cfg.lambda_true, n, r, names, cfg.delta, t0, t1, cfg.seed)
            for t0, t1 in _chunks(cfg.trials)]
    parts = _map(_errors_job, jobs, cfg.workers)
    errors = {name: np.concatenate([p[0][name] for p in parts]) for name in names}
    failures = {name: sum(p[1][name] for p in parts) for name in names}
    if cfg.out_path is not None:
        write_errors_csv(errors, cfg.out_path)
    return {"errors": errors, "failures": failures, "n": n, "r": r}


def write_errors_csv(errors: dict, path=None) -> str:
    rows = [(name, t, v) for name, errs in errors.items() for t, v in enumerate(errs)]
    return _write_csv(path, ERRORS_HEADER, rows)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------


def _coverage_job(args):
    f, lam, n, delta, t0, t1, seed = args
    ratio = np.full(t1 - t0, np.nan)
    flagged = 0
    for i, t in enumerate(range(t0, t1)):
        x = _base_samples(f, seed, n, t, lam)
        try:
            res = estimators.global_mle(f, x, delta, rngmod.stream(seed, "alg2-noise", n, t))
        except NoRootInInterval as exc:
            flagged += 1
            res = exc.result
            if res is None:
                continue
        except SmoothMLEError:
            flagged += 1
            continue
        ratio[i] = abs(res.lambda_hat - lam) / res.predicted_bound
    return ratio, flagged


def run_coverage(cfg: ExperimentConfig) -> dict:
    """Fraction of trials with ``|err| <= factor * predicted_bound`` for each factor.

    Failed trials count as not covered.
    """
    f = cfg.distribution()
    n = cfg.n_grid[0]
    jobs = [(f, cfg.lambda_true, n, cfg.delta, t0, t1, cfg.seed)
            for t0, t1 in _chunks(cfg.trials)]
    parts = _map(_coverage_job, jobs, cfg.workers)
    ratio = np.concatenate([p[0] for p in parts])
    flagged = sum(p[1] for p in parts)
    table = {}
    for fac in cfg.factors:
        with np.errstate(invalid="ignore"):
            hit = np.sum(ratio <= fac)
        table[float(fac)] = float(hit) / ratio.size
    if cfg.out_path is not None:
        write_coverage_csv(table, ratio.size, cfg.out_path)
    return {"coverage": table, "trials": int(ratio.size), "failures": int(flagged),
            "ratios": ratio}


def write_coverage_csv(table: dict, trials: int, path=None) -> str:
    rows = [(fac, cov, trials) for fac, cov in table.items()]
    return _write_csv(path, COVERAGE_HEADER, rows)
