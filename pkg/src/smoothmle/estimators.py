"""Location estimators built on r-smoothed models.

* :func:`local_mle` perturbs the samples with ``N(0, r^2)`` noise and returns
  a root of the empirical score ``sum_i s_r(x'_i - lam)`` inside a given
  interval (bracket scan, then bisection).
* :func:`global_mle` first builds the interval from a sample quantile,
  picks ``r*`` from a closed-form rule and then runs :func:`local_mle`.
* :func:`solve_min_smoothing` finds the smallest radius meeting the
  local-convergence conditions.
* :class:`ProfileMLE` maximizes the full-line log-likelihood on a lattice;
  it backs the ``unsmoothed_mle`` baseline and the experiment harness.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

from .distributions import Distribution
from .errors import (AtomDensityUndefined, InvalidProbability, NoFeasibleSmoothing,
                     NoRootInInterval, SampleSizeTooSmall, ValidationError)
from .smoothing import SmoothedModel

ALPHA_GRID = np.arange(1, 1000) / 1000.0
RSTAR_GRID_RATIO = 1.05


@dataclass(frozen=True)
class EstimatorConfig:
    delta: float = 0.05
    gamma: float = 1.0
    eps_max: float | None = None
    r_override: float | None = None
    rstar_constants: tuple[float, float] = (1.0, 1.0)
    root_tol: float = 1e-9
    beta: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise InvalidProbability(f"delta must lie in (0, 1), got {self.delta}")
        if not self.root_tol > 0:
            raise ValidationError("root_tol must be positive")
        if not self.gamma >= 1.0:
            raise ValidationError("gamma must be >= 1")
        c1, c2 = self.rstar_constants
        if not (c1 > 0 and c2 > 0):
            raise ValidationError("r* constants must be positive")
        if not (self.beta > 0 and self.eta > 0):
            raise ValidationError("beta and eta must be positive")
        if self.r_override is not None and not self.r_override > 0:
            raise ValidationError("r_override must be positive")


@dataclass
class EstimateResult:
    lambda_hat: float
    interval: tuple[float, float]
    r_used: float
    fisher_r: float
    predicted_bound: float
    refinement_factor: float
    warnings: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.warnings)


# ---------------------------------------------------------------------------
# model cache
# ---------------------------------------------------------------------------

_MODEL_CACHE: OrderedDict = OrderedDict()
_MODEL_LOCK = threading.Lock()
_MODEL_CACHE_SIZE = 64


def smoothed_model(f: Distribution, r: float) -> SmoothedModel:
    """Shared :class:`SmoothedModel` for ``(f, r)`` (small LRU cache)."""
    key = (f, float(r))
    with _MODEL_LOCK:
        m = _MODEL_CACHE.get(key)
        if m is not None:
            _MODEL_CACHE.move_to_end(key)
            return m
    m = SmoothedModel(f, r)
    with _MODEL_LOCK:
        _MODEL_CACHE[key] = m
        while len(_MODEL_CACHE) > _MODEL_CACHE_SIZE:
            _MODEL_CACHE.popitem(last=False)
    return m


# ---------------------------------------------------------------------------
# Algorithm 1 pieces
# ---------------------------------------------------------------------------


class ZeroNoise:
    """Stand-in for a generator whose normal draws are all zero (test hook)."""

    def standard_normal(self, size=None):
        return np.zeros(size)


def perturb_samples(samples, r: float, rng) -> np.ndarray:
    """``x'_i = x_i + N(0, r^2)`` with independent draws."""
    if not r > 0:
        raise ValidationError("perturbation radius must be positive")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        return x.copy()
    return x + r * rng.standard_normal(x.size)


def empirical_score(m: SmoothedModel, perturbed, lambda_hat):
    """``sum_i s_r(x'_i - lam)``; vectorized over an array of ``lam``."""
    x = np.asarray(perturbed, dtype=float).ravel()
    lam = np.asarray(lambda_hat, dtype=float)
    if lam.ndim == 0:
        return float(np.sum(m.logpdf_score(x - float(lam))[1]))
    out = np.empty(lam.size)
    flat = lam.ravel()
    step = max(1, 2_000_000 // max(x.size, 1))
    for i in range(0, flat.size, step):
        blk = flat[i:i + step]
        out[i:i + blk.size] = m.logpdf_score(x[None, :] - blk[:, None])[1].sum(axis=1)
    return out.reshape(lam.shape)


def _bisect(func, lo, hi, flo, tol):
    # flo = func(lo); keeps the sign-change invariant on [lo, hi]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = func(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scan_points(interval, r) -> np.ndarray:
    lo, hi = interval
    npts = max(64, math.ceil((hi - lo) / (r / 8.0)))
    return np.linspace(lo, hi, npts)


def local_mle(f: Distribution, r: float, samples, interval, rng,
              cfg: EstimatorConfig | None = None, model: SmoothedModel | None = None,
              perturbed=None) -> EstimateResult:
    """Local smoothed MLE on ``interval``.

    Scans the empirical score on a uniform grid; among sign changes, the
    upward crossings (local likelihood maxima) are preferred, ties broken
    by the larger log-likelihood.  The chosen bracket is bisected to
    ``cfg.root_tol``.  Without any sign change :class:`NoRootInInterval`
    is raised carrying the flagged argmin of ``|score|``.
    """
    cfg = cfg or EstimatorConfig()
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValidationError("interval must satisfy lo < hi")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("local_mle needs at least one sample")
    m = model if model is not None else smoothed_model(f, r)
    if perturbed is None:
        perturbed = perturb_samples(x, m.r, rng)
    xp = np.asarray(perturbed, dtype=float)
    n = xp.size

    fisher = m.fisher_info()
    lead, factor = error_bound(n, cfg.delta, fisher, cfg)

    grid = scan_points((lo, hi), m.r)
    vals = empirical_score(m, xp, grid)
    sgn = np.sign(vals)
    exact = np.flatnonzero(sgn == 0)
    change = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)

    def result(lam, warns=()):
        return EstimateResult(float(lam), (lo, hi), m.r, fisher, lead, factor, list(warns))

    if change.size == 0 and exact.size == 0:
        k = int(np.argmin(np.abs(vals)))
        raise NoRootInInterval(
            f"empirical score has no sign change on [{lo}, {hi}]",
            result=result(grid[k], ["no sign change; argmin |score| fallback"]))

    up = change[vals[change] < 0]
    cands = up if up.size else change
    if exact.size and not up.size:
        return result(grid[exact[0]])
    if cands.size > 1:
        ll = np.array([np.sum(m.logpdf(xp - 0.5 * (grid[k] + grid[k + 1]))) for k in cands])
        k = int(cands[int(np.argmax(ll))])
    else:
        k = int(cands[0])
    lam = _bisect(lambda t: empirical_score(m, xp, t), grid[k], grid[k + 1], vals[k],
                  cfg.root_tol)
    return result(lam)


# ---------------------------------------------------------------------------
# Algorithm 2 pieces
# ---------------------------------------------------------------------------


def quantile_slack(n: int, delta: float) -> float:
    return math.sqrt(2.0 * math.log(4.0 / delta) / n)


def empirical_quantile(sorted_x: np.ndarray, alpha: float) -> float:
    """``inf{x : F_n(x) >= alpha}``."""
    n = sorted_x.size
    k = min(max(math.ceil(alpha * n - 1e-12) - 1, 0), n - 1)
    return float(sorted_x[k])


def quantile_interval(f: Distribution, samples, delta: float):
    """Initial confidence interval ``(lo, hi, alpha)`` from one sample quantile."""
    if not 0.0 < delta < 1.0:
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise SampleSizeTooSmall("no samples")
    s = quantile_slack(n, delta)
    ok = (ALPHA_GRID - s > 0) & (ALPHA_GRID + s < 1)
    if not ok.any():
        raise SampleSizeTooSmall(
            f"quantile slack {s:.4g} leaves no admissible alpha; need more samples")
    alphas = ALPHA_GRID[ok]
    upper = f.quantile(alphas + s)
    lower = f.quantile(alphas - s)
    width = upper - lower
    best = width.min()
    tie = np.flatnonzero(width <= best + 1e-12 * max(1.0, abs(best)))
    j = tie[np.argmin(np.abs(alphas[tie] - 0.5))]
    alpha = float(alphas[j])
    xa = empirical_quantile(x, alpha)
    return xa - float(upper[j]), xa - float(lower[j]), alpha


def choose_rstar(f: Distribution, n: int, delta: float,
                 cfg: EstimatorConfig | None = None) -> float:
    """``max(c1 (log(1/delta)/n)^(1/8), c2 2^-sqrt(log2(1/delta))) * IQR``."""
    cfg = cfg or EstimatorConfig(delta=delta)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0.0 < delta < 1.0:
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    c1, c2 = cfg.rstar_constants
    first = c1 * (math.log(1.0 / delta) / n) ** 0.125
    second = c2 * 2.0 ** (-math.sqrt(math.log2(1.0 / delta)))
    return max(first, second) * f.iqr()


def global_mle(f: Distribution, samples, delta: float, rng,
               cfg: EstimatorConfig | None = None) -> EstimateResult:
    """Two-stage estimate: quantile interval (delta/2), then local MLE (delta/2)."""
    cfg = cfg or EstimatorConfig(delta=delta)
    x = np.asarray(samples, dtype=float).ravel()
    lo, hi, _ = quantile_interval(f, x, delta)
    n = x.size
    r = cfg.r_override if cfg.r_override is not None else choose_rstar(f, n, delta, cfg)
    if not r > 0:
        raise ValidationError("r* is zero; the base distribution has zero IQR")
    local_cfg = _replace(cfg, delta=delta / 2.0)
    if hi - lo <= 0:
        hi = lo + cfg.root_tol
    try:
        res = local_mle(f, r, x, (lo, hi), rng, local_cfg)
    except NoRootInInterval as exc:
        _restate(exc.result, n, delta, cfg)
        raise
    _restate(res, n, delta, cfg)
    return res


def _restate(res, n, delta, cfg):
    if res is not None:
        res.predicted_bound, res.refinement_factor = error_bound(n, delta, res.fisher_r, cfg)


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


# ---------------------------------------------------------------------------
# minimal smoothing and error bounds
# ---------------------------------------------------------------------------

CONDITION_NAMES = (
    "r >= 2 eps_max",
    "r^2 sqrt(I_r) >= gamma eps_max",
    "log(1/delta)/n <= 1/gamma^2",
    "log(1/(r sqrt(I_r))) <= log(1/delta) / (gamma log log(1/delta))",
)


def smoothing_conditions(f: Distribution, r: float, eps_max: float, delta: float,
                         n: int, gamma: float, fisher: float | None = None):
    """The four local-convergence conditions at radius ``r`` as booleans."""
    if fisher is None:
        fisher = smoothed_model(f, r).fisher_info()
    L = math.log(1.0 / delta)
    rs = r * math.sqrt(fisher)
    c1 = r >= 2.0 * eps_max
    c2 = r * rs >= gamma * eps_max
    c3 = L / n <= 1.0 / gamma ** 2
    if L > 1.0:
        c4 = math.log(1.0 / rs) <= L / (gamma * math.log(L))
    else:
        c4 = False
    return (c1, c2, c3, c4)


def rstar_grid(f: Distribution, eps_max: float) -> np.ndarray:
    """Geometric radii ``scale * 1.05^k`` inside ``[2 eps_max, 10 (IQR + eps_max)]``.

    The lattice is anchored at the IQR, not at ``eps_max``, so the grids for
    different ``eps_max`` are nested.
    """
    iqr = f.iqr()
    anchor = iqr if iqr > 0 else 1.0
    lo, hi = 2.0 * eps_max, 10.0 * (iqr + eps_max)
    lr = math.log(RSTAR_GRID_RATIO)
    k0 = math.ceil(math.log(lo / anchor) / lr - 1e-9)
    k1 = math.floor(math.log(hi / anchor) / lr + 1e-9)
    return anchor * RSTAR_GRID_RATIO ** np.arange(k0, k1 + 1)


def solve_min_smoothing(f: Distribution, eps_max: float, delta: float, n: int,
                        gamma: float) -> float:
    if gamma < 1:
        raise ValidationError("gamma must be >= 1")
    if not eps_max > 0:
        raise ValidationError("eps_max must be positive")
    if not 0.0 < delta < 1.0:
        raise InvalidProbability(f"delta must lie in (0, 1), got {delta}")
    grid = rstar_grid(f, eps_max)
    if grid.size == 0:
        raise NoFeasibleSmoothing("empty radius grid", failed=list(CONDITION_NAMES[:1]))
    if math.log(1.0 / delta) / n > 1.0 / gamma ** 2:
        raise NoFeasibleSmoothing(
            "condition fails for every r: " + CONDITION_NAMES[2], failed=[CONDITION_NAMES[2]])
    checks = None
    for r in grid:
        checks = smoothing_conditions(f, float(r), eps_max, delta, n, gamma)
        if all(checks):
            return float(r)
    failed = [name for name, ok in zip(CONDITION_NAMES, checks) if not ok]
    raise NoFeasibleSmoothing(
        f"no radius up to {grid[-1]:.6g} satisfies all conditions; failing at the "
        f"largest r: {'; '.join(failed)}", failed=failed)


def error_bound(n: int, delta: float, fisher_r: float,
                cfg: EstimatorConfig | None = None) -> tuple[float, float]:
    """``(sqrt(2 log(1/delta) / (n I_r)), 1 + rho_r)``; the factor is diagnostic."""
    cfg = cfg or EstimatorConfig()
    if not (n > 0 and fisher_r > 0 and 0 < delta < 1):
        raise ValidationError("error_bound needs n > 0, I_r > 0, delta in (0, 1)")
    L2 = 2.0 * math.log(1.0 / delta)
    lead = math.sqrt(L2 / (n * fisher_r))
    g = cfg.gamma
    refined = math.sqrt(1.0 + cfg.eta / g) + cfg.beta * 15.0 / (2.0 * math.sqrt(g)) * (L2 / n) ** 0.25
    return lead, refined


# ---------------------------------------------------------------------------
# full-line maximum likelihood on a lattice
# ---------------------------------------------------------------------------


class ProfileMLE:
    """Grid argmax of ``sum_i logpdf(x_i - lam)`` over the whole line.

    The lattice has spacing ``h`` and spans the sample range padded by
    ``margin`` on both sides.  A coarse profile (spacing ``16 h``) is
    computed for all lattice points at once by FFT correlation of the
    linearly binned samples with a tabulated log-density; the best coarse
    peaks are then refined by exact evaluation on the fine lattice
    (discrete hill climb), so the returned value is an exact local maximum
    of the likelihood over ``h * Z``.
    """

    COARSE = 16
    PEAKS = 3
    PEAK_MARGIN = 4.0  # nats

    def __init__(self, logpdf: Callable, h: float, margin: float):
        if not (h > 0 and margin >= 0):
            raise ValidationError("lattice spacing must be positive")
        self.logpdf = logpdf
        self.h = float(h)
        self.hc = self.COARSE * self.h
        self.margin = float(margin)
        self._table = None
        self._spectra = {}

    @classmethod
    def for_model(cls, m: SmoothedModel):
        iqr = m.base.iqr()
        scale = min(m.r, iqr) if iqr > 0 else m.r
        return cls(m.logpdf, scale / 64.0, 4.0 * (iqr + m.r))

    @classmethod
    def for_base(cls, f: Distribution):
        if f.has_atom:
            raise AtomDensityUndefined("unsmoothed likelihood is undefined for a model with atoms")
        iqr = f.iqr()
        hints = [p.scale_hint() for p in f.parts]
        scale = min([iqr] + [v for v in hints if v > 0])
        return cls(f.logpdf, scale / 64.0, 4.0 * iqr)

    def _kernel(self, half: int) -> np.ndarray:
        # log-density on d * hc for |d| <= half; grown geometrically
        if self._table is None or self._table[0] < half:
            size = max(half, 2 * self._table[0]) if self._table else half
            d = np.arange(-size, size + 1) * self.hc
            vals = self.logpdf(d)
            self._table = (size, vals)
            self._spectra.clear()
        size, vals = self._table
        return vals[size - half:size + half + 1]

    def _spectrum(self, K: int, nfft: int):
        key = (K, nfft)
        spec = self._spectra.get(key)
        if spec is None:
            g = self._kernel(K)[::-1]
            spec = sfft.rfft(g, nfft)
            if len(self._spectra) > 32:
                self._spectra.clear()
            self._spectra[key] = spec
        return spec

    def coarse_profile(self, x: np.ndarray):
        """``(lam_grid, profile)`` on the coarse lattice."""
        hc = self.hc
        lo = math.floor((x.min() - self.margin) / hc)
        hi = math.ceil((x.max() + self.margin) / hc)
        K = hi - lo
        # bucket the size so kernel spectra are reused across calls
        Kp = 1 << max(int(K - 1).bit_length(), 4)
        Kp = min(Kp, ((K + (Kp >> 3) - 1) // (Kp >> 3)) * (Kp >> 3))
        pos = x / hc - lo
        j = np.floor(pos).astype(np.int64)
        t = pos - j
        H = np.bincount(j, weights=1.0 - t, minlength=Kp + 2)
        H[:Kp + 2] += np.bincount(j + 1, weights=t, minlength=Kp + 2)[:Kp + 2]
        H = H[:Kp + 1]
        nfft = sfft.next_fast_len(3 * Kp + 1, real=True)
        conv = sfft.irfft(sfft.rfft(H, nfft) * self._spectrum(Kp, nfft), nfft)
        prof = conv[Kp:Kp + K + 1]
        lam = (lo + np.arange(K + 1)) * hc
        return lam, prof

    def loglik(self, x: np.ndarray, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.empty(lam.size)
        for i, v in enumerate(lam):
            out[i] = np.sum(self.logpdf(x - v))
        return out

    def _climb(self, x, start: int, lo_k: int, hi_k: int):
        h = self.h
        ks = np.arange(max(start - 2, lo_k), min(start + 2, hi_k) + 1)
        ll = self.loglik(x, ks * h)
        for _ in range(10_000):
            i = int(np.argmax(ll))
            if 0 < i < ks.size - 1 or (i == 0 and ks[0] == lo_k) or (
                    i == ks.size - 1 and ks[-1] == hi_k):
                return int(ks[i]), float(ll[i])
            if i == 0:
                new = np.arange(max(ks[0] - 4, lo_k), ks[0])
                ks, ll = np.concatenate([new, ks]), np.concatenate([self.loglik(x, new * h), ll])
            else:
                new = np.arange(ks[-1] + 1, min(ks[-1] + 4, hi_k) + 1)
                ks, ll = np.concatenate([ks, new]), np.concatenate([ll, self.loglik(x, new * h)])
        i = int(np.argmax(ll))
        return int(ks[i]), float(ll[i])

    def estimate(self, samples) -> float:
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise ValidationError("no samples")
        lam, prof = self.coarse_profile(x)
        # local maxima of the coarse profile (plateau-safe), best first
        p = np.concatenate([[-np.inf], prof, [-np.inf]])
        peaks = np.flatnonzero((p[1:-1] >= p[:-2]) & (p[1:-1] > p[2:]))
        peaks = peaks[np.argsort(-prof[peaks], kind="stable")]
        peaks = peaks[prof[peaks] >= prof[peaks[0]] - self.PEAK_MARGIN][:self.PEAKS]
        h = self.h
        lo_k = math.ceil((x.min() - self.margin) / h)
        hi_k = math.floor((x.max() + self.margin) / h)
        best = None
        for pk in peaks:
            c = lam[pk]
            if 0 < pk < prof.size - 1:
                # vertex of the parabola through the three coarse values
                a, b, d = prof[pk - 1], prof[pk], prof[pk + 1]
                den = a - 2 * b + d
                if den < 0:
                    c += 0.5 * self.hc * (a - d) / den
            start = min(max(int(round(c / h)), lo_k), hi_k)
            k, ll = self._climb(x, start, lo_k, hi_k)
            if best is None or ll > best[1] or (ll == best[1] and k < best[0]):
                best = (k, ll)
        return best[0] * h


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

BASELINES = ("mean", "median", "median_of_means", "unsmoothed_mle")


def median_of_means(x: np.ndarray, delta: float) -> float:
    k = min(max(1, math.ceil(8.0 * math.log(1.0 / delta))), x.size)
    return float(np.median([b.mean() for b in np.array_split(x, k)]))


def baseline_estimate(kind: str, f: Distribution | None, samples, delta: float = 0.05,
                      profile: ProfileMLE | None = None) -> float:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("baseline estimators need at least one sample")
    if kind == "mean":
        return float(np.mean(x))
    if kind == "median":
        return float(np.median(x))
    if kind == "median_of_means":
        if not 0 < delta < 1:
            raise InvalidProbability("delta must lie in (0, 1)")
        return median_of_means(x, delta)
    if kind == "unsmoothed_mle":
        if f is None:
            raise ValidationError("unsmoothed_mle needs the model")
        prof = profile if profile is not None else ProfileMLE.for_base(f)
        return prof.estimate(x)
    raise ValidationError(f"unknown baseline {kind!r}; expected one of {', '.join(BASELINES)}")
