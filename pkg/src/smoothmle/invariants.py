"""Property suite behind ``smoothmle check-invariants``.

Each check returns a :class:`Check` with a verdict and the measured numbers.
Monte Carlo checks take a ``scale`` factor on their trial counts (1.0 is
the full size; smaller values give a quick smoke run).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import estimators as est
from . import experiments as exps
from . import lowerbound as lb
from . import rng as rngmod
from .distributions import FIXTURE_NAMES, Distribution, GridPart, make_fixture
from .smoothing import SmoothedModel

RADII = (0.01, 0.05, 0.1, 0.5, 1.0)
CONTINUOUS = tuple(n for n in FIXTURE_NAMES if make_fixture(n).is_continuous)
SYMMETRIC = ("gaussian", "laplace", "dirac_mixture")


@dataclass
class Check:
    module: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    data: dict = field(default_factory=dict)


_FIXTURES: dict = {}
_MODELS: dict = {}


def fixture(name: str) -> Distribution:
    if name not in _FIXTURES:
        _FIXTURES[name] = make_fixture(name)
    return _FIXTURES[name]


def model(name: str, r: float) -> SmoothedModel:
    key = (name, r)
    if key not in _MODELS:
        _MODELS[key] = SmoothedModel(fixture(name), r)
    return _MODELS[key]


def _trials(n, scale):
    return max(1, int(round(n * scale)))


def scan_grid(m: SmoothedModel, points: int = 1000) -> np.ndarray:
    """``points`` equispaced locations covering the bulk of ``f_r``."""
    f = m.base
    lo = float(f.quantile(1e-4)) - 4.0 * m.r
    hi = float(f.quantile(1 - 1e-4)) + 4.0 * m.r
    return np.linspace(lo, hi, points)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def _support_grid(f: Distribution) -> np.ndarray:
    pieces = []
    for p in f.parts:
        if isinstance(p, GridPart):
            pieces.append(p.nodes)
            continue
        c = getattr(p, "mean", getattr(p, "loc", 0.0))
        s = p.scale_hint()
        span = 40.0 * s if hasattr(p, "sigma") else 60.0 * s
        pieces.append(c + np.linspace(-span, span, 400_001))
    return np.unique(np.concatenate(pieces))


def check_total_mass():
    worst = 0.0
    for name in CONTINUOUS:
        f = fixture(name)
        x = _support_grid(f)
        mass = float(np.trapezoid(f.pdf(x), x))
        worst = max(worst, abs(mass - 1.0))
    return worst <= 1e-6, f"max |mass - 1| = {worst:.3g}"


def check_quantile_roundtrip():
    p = np.arange(1, 100) / 100.0
    worst = 0.0
    for name in CONTINUOUS:
        f = fixture(name)
        worst = max(worst, float(np.max(np.abs(f.cdf(f.quantile(p)) - p))))
    return worst <= 1e-6, f"max |cdf(quantile(p)) - p| = {worst:.3g}"


def check_sampling(scale=1.0):
    n = _trials(10 ** 6, scale)
    p = np.arange(1, 10) / 10.0
    worst = 0.0
    for name in CONTINUOUS:
        f = fixture(name)
        x = np.sort(f.sample(n, rngmod.stream(0, "inv-sampling", FIXTURE_NAMES.index(name))))
        q = f.quantile(p)
        emp = np.searchsorted(x, q, side="right") / n
        worst = max(worst, float(np.max(np.abs(emp - p))))
    tol = 0.005 / math.sqrt(min(scale, 1.0))
    return worst <= tol, f"max decile deviation {worst:.3g} (n = {n}, tol {tol:.3g})"


def check_iqr():
    bad = [n for n in FIXTURE_NAMES
           if fixture(n).iqr() != fixture(n).quantile(0.75) - fixture(n).quantile(0.25)]
    return not bad, "exact" if not bad else f"mismatch: {bad}"


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


def _all_models():
    for name in FIXTURE_NAMES:
        for r in RADII:
            yield name, r, model(name, r)


def check_fisher_upper():
    worst = max(m.fisher_info() * r * r for _, r, m in _all_models())
    return worst <= 1 + 1e-9, f"max I_r r^2 = {worst:.12g}"


def check_fisher_lower():
    worst = min(m.fisher_info() * (fixture(n).iqr() + r) ** 2 for n, r, m in _all_models())
    return worst >= 0.01, f"min I_r (IQR + r)^2 = {worst:.4g}"


def check_score_deriv_floor():
    worst = min(float(np.min(m.eval_score_deriv(scan_grid(m)))) * r * r
                for _, r, m in _all_models())
    return worst >= -(1 + 1e-3), f"min s_r' r^2 = {worst:.6g}"


def check_score_consistency():
    worst = 0.0
    for name, r, m in _all_models():
        if any(isinstance(p, GridPart) for p in m.base.parts):
            continue  # tabulated, not closed form
        x = scan_grid(m)
        h = r * 1e-4
        fd = (m.logpdf(x + h) - m.logpdf(x - h)) / (2 * h)
        s = m.eval_score(x)
        scale = np.maximum(np.abs(s), math.sqrt(m.fisher_info()))
        worst = max(worst, float(np.max(np.abs(fd - s) / scale)))
    return worst <= 1e-5, f"max relative gap {worst:.3g} (closed-form models)"


def check_expected_score_linearity():
    worst = 0.0
    for name, r, m in _all_models():
        I = m.fisher_info()
        for eps in (r / 64, r / 32, r / 16, r / 8):
            resid = abs(m.score_moment(eps, 1) + I * eps)
            worst = max(worst, resid / (math.sqrt(I) * eps * eps / (r * r)))
    return worst <= 10.0, f"max |E s(x+e) + I e| / (sqrt(I) e^2/r^2) = {worst:.4g}"


def check_second_moment_stability():
    worst = 0.0
    for name, r, m in _all_models():
        I = m.fisher_info()
        lg = math.sqrt(max(1.0, math.log(1.0 / (r * r * I))))
        for eps in (r / 64, r / 32, r / 16, r / 8):
            excess = m.score_moment(eps, 2) / I - 1.0
            worst = max(worst, excess / ((eps / r) * lg))
    return worst <= 10.0, f"max (M2/I - 1) / ((e/r) sqrt(log)) = {worst:.4g}"


def check_subgamma_moments():
    worst = 0.0
    for name, r, m in _all_models():
        I = m.fisher_info()
        for eps in (0.0, r / 8, r / 4, r / 2):
            m2 = m.score_moment(eps, 2)
            for k in (3, 4):
                lhs = m.score_moment(eps, k, absolute=True)
                rhs = math.factorial(k) / 2 * (15 / r) ** (k - 2) * max(m2, I)
                worst = max(worst, lhs / rhs)
    return worst <= 1.0, f"max lhs/rhs = {worst:.4g}"


def check_centered_moments():
    worst = 0.0
    for name, r, m in _all_models():
        I = m.fisher_info()
        for k in (3, 4):
            lhs = m.score_moment(0.0, k, absolute=True)
            rhs = (1.6 / r) ** (k - 2) * k ** (k / 2) * I
            worst = max(worst, lhs / rhs)
    return worst <= 1.0, f"max lhs/rhs = {worst:.4g}"


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def check_shift_equivariance(scale=1.0):
    cfg = est.EstimatorConfig(root_tol=1e-10)
    worst = 0.0
    for name in ("gaussian", "laplace", "spiked_laplace", "sawtooth_gaussian"):
        f = fixture(name)
        for t in range(_trials(20, scale)):
            x = f.sample(200, rngmod.stream(1, "inv-equiv", t))
            c = 3.75
            a = est.local_mle(f, 0.2, x, (-1, 1), rngmod.stream(2, "inv-equiv", t), cfg)
            b = est.local_mle(f, 0.2, x + c, (-1 + c, 1 + c), rngmod.stream(2, "inv-equiv", t), cfg)
            worst = max(worst, abs(b.lambda_hat - a.lambda_hat - c))
    tol = 4 * cfg.root_tol
    return worst <= tol, f"max |lam(x+c) - lam(x) - c| = {worst:.3g} (tol {tol:g})"


def check_root_validity(scale=1.0):
    cfg = est.EstimatorConfig(root_tol=1e-9)
    bad = 0
    total = 0
    for name in CONTINUOUS:
        f = fixture(name)
        m = est.smoothed_model(f, 0.1)
        for t in range(_trials(10, scale)):
            x = f.sample(300, rngmod.stream(3, "inv-root", t))
            xp = est.perturb_samples(x, 0.1, rngmod.stream(4, "inv-root", t))
            try:
                res = est.local_mle(f, 0.1, x, (-1, 1), None, cfg, model=m, perturbed=xp)
            except est.NoRootInInterval:
                continue
            total += 1
            lo = est.empirical_score(m, xp, res.lambda_hat - cfg.root_tol)
            hi = est.empirical_score(m, xp, res.lambda_hat + cfg.root_tol)
            if lo * hi > 0:
                bad += 1
    return bad == 0, f"{bad} of {total} roots without a sign change within root_tol"


def check_sign_property(scale=1.0):
    f = fixture("gaussian")
    n, delta, eps_max = 2000, 0.01, 0.25
    r = est.solve_min_smoothing(f, eps_max, delta, n, 1.0)
    m = est.smoothed_model(f, r)
    lead = est.error_bound(n, delta, m.fisher_info())[0]
    grid = np.linspace(1.3 * lead, eps_max, 25)[1:]
    grid = np.concatenate([grid, [1.3 * lead * (1 + 1e-9)]])
    trials = _trials(2000, scale)
    good = 0
    for t in range(trials):
        x = f.sample(n, rngmod.stream(5, "inv-sign", t))
        xp = est.perturb_samples(x, r, rngmod.stream(6, "inv-sign", t))
        below = est.empirical_score(m, xp, -grid)
        above = est.empirical_score(m, xp, grid)
        good += bool(np.all(below < 0) and np.all(above > 0))
    frac = good / trials
    return frac >= 0.98, f"fraction {frac:.4f} of {trials} trials (r = {r:.4g})"


def check_global_coverage(scale=1.0):
    trials = _trials(2000, scale)
    out = []
    ok = True
    for name in CONTINUOUS:
        cfg = exps.ExperimentConfig(dist=name, n_grid=(1000,), delta=0.05, trials=trials,
                                    seed=11, factors=(1.2,))
        cov = exps.run_coverage(cfg)["coverage"][1.2]
        ok &= (1 - cov) <= 2 * 0.05
        out.append(f"{name}={cov:.4f}")
    return ok, "coverage at 1.2x: " + ", ".join(out)


# ---------------------------------------------------------------------------
# lower bound
# ---------------------------------------------------------------------------


def check_divergence_symmetry():
    worst = 0.0
    for name in SYMMETRIC:
        for r in (0.1, 1.0):
            m = model(name, r)
            for s in (r / 16, r / 4):
                for fn in (lb.kl_divergence, lb.hellinger_sq):
                    a, b = fn(m, s), fn(m, -s)
                    worst = max(worst, abs(a - b) / max(a, 1e-300))
    return worst <= 1e-6, f"max relative asymmetry {worst:.3g}"


def check_hellinger_kl_order():
    worst = 0.0
    for name, r, m in _all_models():
        for s in (r / 16, r / 4):
            h2 = lb.hellinger_sq(m, s)
            kl = min(lb.kl_divergence(m, s), lb.kl_divergence(m, s, reverse=True))
            worst = max(worst, h2 / (0.5 * kl))
    return worst <= 1.0, f"max H^2 / (min KL / 2) = {worst:.4g}"


def check_kl_quadratic():
    worst = 0.0
    for name, r, m in _all_models():
        eps = r / 64
        ratio = lb.kl_divergence(m, 2 * eps) / eps ** 2 / (2 * m.fisher_info())
        worst = max(worst, abs(ratio - 1))
    return worst <= 0.05, f"max |KL(2e)/(2 I e^2) - 1| = {worst:.3g}"


def check_tv_oracle(scale=1.0):
    trials = max(1000, _trials(4000, scale))
    worst = 0.0
    for i, sigma in enumerate((0.5, 1.0, 2.0)):
        m = SmoothedModel(Distribution.dirac(), sigma)
        for n in (10, 100):
            for shift in (0.05, 0.2):
                e, se = lb.tv_product_mc(m, shift, n, trials, rngmod.derive_seed(7, "inv-tv", i, n))
                worst = max(worst, abs(e - lb.gaussian_tv_complement(shift, n, sigma)) / se)
    return worst <= 4.0, f"max |mc - exact| / stderr = {worst:.3g}"


def check_delta_floor():
    # kappa = 0.01 is the largest value the two-point lemma admits, hence the
    # smallest floor; the Gaussian KL and 1 - TV are closed forms
    worst = math.inf
    for n in (100, 1000):
        for L in (3.0, 6.0):
            eps = lb.indistinguishable_shift(n, math.exp(-L), 1.0)
            floor = lb.delta_floor(2 * eps * eps, n, 0.01, C=1.0)
            exact = lb.gaussian_tv_complement(2 * eps, n, 1.0)
            worst = min(worst, exact / floor)
    return worst >= 1.0, f"min (1 - TV) / delta_floor = {worst:.4g}"


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def check_paired_samples(scale=1.0):
    cfg = exps.ExperimentConfig(dist="gaussian", n_grid=(200,), r_grid=(0.05,),
                                trials=_trials(200, scale), seed=3,
                                estimators=("mean", "unsmoothed_mle"))
    res = exps.run_error_distribution(cfg)["errors"]
    prof = est.ProfileMLE.for_base(fixture("gaussian"))
    gap = float(np.max(np.abs(res["mean"] - res["unsmoothed_mle"])))
    return gap <= prof.h, f"max |mean - MLE| per trial = {gap:.3g} (grid step {prof.h:.3g})"


def check_heatmap_trend(scale=1.0):
    cfg = exps.ExperimentConfig(dist="spiked_laplace", n_grid=(200, 1000, 5000),
                                trials=_trials(400, scale), seed=1)
    best = exps.best_r_by_n(exps.run_mse_heatmap(cfg))
    grid = list(cfg.r_grid)
    idx = [grid.index(best[n]) for n in cfg.n_grid]
    ok = all(b <= a + 1 for a, b in zip(idx, idx[1:]))
    return ok, "best r by n: " + ", ".join(f"{n}->{best[n]:.4g}" for n in cfg.n_grid)


def check_csv_stability(scale=1.0):
    texts = []
    for workers in (1, 2, 1):
        cfg = exps.ExperimentConfig(dist="spiked_laplace", n_grid=(100, 300),
                                    r_grid=(0.01, 0.1), trials=_trials(300, scale),
                                    seed=5, workers=workers)
        texts.append(exps.write_heatmap_csv(exps.run_mse_heatmap(cfg)))
    return len(set(texts)) == 1, "identical bytes" if len(set(texts)) == 1 else "bytes differ"


CHECKS: list[tuple[str, str, Callable, bool]] = [
    ("distributions", "total mass", check_total_mass, False),
    ("distributions", "quantile/cdf round trip", check_quantile_roundtrip, False),
    ("distributions", "sampling consistency", check_sampling, True),
    ("distributions", "iqr definition", check_iqr, False),
    ("smoothing", "Fisher upper bound", check_fisher_upper, False),
    ("smoothing", "Fisher lower bound", check_fisher_lower, False),
    ("smoothing", "score-derivative floor", check_score_deriv_floor, False),
    ("smoothing", "score consistency", check_score_consistency, False),
    ("smoothing", "expected-score linearity", check_expected_score_linearity, False),
    ("smoothing", "second-moment stability", check_second_moment_stability, False),
    ("smoothing", "sub-Gamma moments", check_subgamma_moments, False),
    ("smoothing", "centered moment bound", check_centered_moments, False),
    ("estimators", "shift equivariance", check_shift_equivariance, True),
    ("estimators", "root validity", check_root_validity, True),
    ("estimators", "score sign property", check_sign_property, True),
    ("estimators", "global coverage", check_global_coverage, True),
    ("lowerbound", "divergence symmetry", check_divergence_symmetry, False),
    ("lowerbound", "Hellinger-KL ordering", check_hellinger_kl_order, False),
    ("lowerbound", "KL quadratic law", check_kl_quadratic, False),
    ("lowerbound", "TV Monte Carlo oracle", check_tv_oracle, True),
    ("lowerbound", "delta floor consistency", check_delta_floor, False),
    ("experiments", "paired samples", check_paired_samples, True),
    ("experiments", "heat-map trend", check_heatmap_trend, True),
    ("experiments", "CSV stability", check_csv_stability, True),
]


def run_all(scale: float = 1.0, only: str | None = None, progress=None) -> list[Check]:
    results = []
    for module, name, func, scaled in CHECKS:
        if only and only not in module and only not in name:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = func(scale) if scaled else func()
        except Exception as exc:  # a crash is a violation, not an abort
            passed, detail = False, f"error: {type(exc).__name__}: {exc}"
        chk = Check(module, name, bool(passed), detail, time.perf_counter() - t0)
        results.append(chk)
        if progress is not None:
            progress(chk)
    return results
