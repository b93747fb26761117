"""Two-point lower-bound machinery for ``p = f_r`` against ``q = f_r(. - shift)``.

Divergences are integrated against ``p`` with integrands written in terms of
``d = log q - log p`` so that nothing cancels:

    KL(p || q) = E_p[expm1(d) - d]          (pointwise >= 0)
    H^2(p, q)  = E_p[expm1(d / 2)^2] / 2
    E_q[g(d)]  = E_p[exp(d) g(d)]
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import rng as rngmod
from .errors import ShiftZero, ValidationError
from .smoothing import SmoothedModel

TV_BLOCK = 250
# log-ratio integrands carry roundoff of order 1e-16 |log f_r| / |d|, so the
# smoothing module's default tolerance is out of reach for tiny shifts
REL_TOL = 1e-9


def _log_ratio(m: SmoothedModel, shift: float):
    def d(x):
        return m.logpdf(x - shift) - m.logpdf(x)
    return d


def _kl_fwd(d):
    # expm1(d) - d, by series where the difference cancels
    small = np.abs(d) < 1e-2
    ds = np.where(small, d, 0.0)
    series = ds * ds * (0.5 + ds * (1 / 6 + ds * (1 / 24 + ds * (1 / 120 + ds / 720))))
    return np.where(small, series, np.expm1(d) - d)


def _kl_rev(d):
    # d exp(d) - expm1(d)
    small = np.abs(d) < 1e-2
    ds = np.where(small, d, 0.0)
    series = ds * ds * (0.5 + ds * (1 / 3 + ds * (1 / 8 + ds * (1 / 30 + ds / 144))))
    return np.where(small, series, np.exp(d) * d - np.expm1(d))


def _expect_p(m, shift, g):
    d = _log_ratio(m, shift)
    return m.expect(lambda x: g(d(x)), shifts=(shift,), rel_tol=REL_TOL)


def kl_divergence(m: SmoothedModel, shift: float, reverse: bool = False) -> float:
    """``KL(f_r || f_r(. - shift))``; ``reverse=True`` gives ``KL(q || p)``."""
    shift = float(shift)
    if shift == 0.0:
        return 0.0
    if reverse:
        # KL(q || p) = E_p[exp(d) d - expm1(d)]
        val = _expect_p(m, shift, _kl_rev)
    else:
        val = _expect_p(m, shift, _kl_fwd)
    return max(val, 0.0)


def hellinger_sq(m: SmoothedModel, shift: float) -> float:
    """``(1/2) int (sqrt p - sqrt q)^2``."""
    shift = float(shift)
    if shift == 0.0:
        return 0.0
    val = 0.5 * _expect_p(m, shift, lambda d: np.expm1(0.5 * d) ** 2)
    return min(max(val, 0.0), 1.0)


def loglik_moment(m: SmoothedModel, shift: float, k: int, under: str = "p") -> float:
    """``E[|gamma|^k]`` with ``gamma = log(q/p)``, under ``p`` or ``q``."""
    if k < 2:
        raise ValidationError("moment order must be >= 2")
    if under not in ("p", "q"):
        raise ValidationError("under must be 'p' or 'q'")
    shift = float(shift)
    if shift == 0.0:
        return 0.0
    if under == "p":
        return _expect_p(m, shift, lambda d: np.abs(d) ** k)
    return _expect_p(m, shift, lambda d: np.exp(d) * np.abs(d) ** k)


@dataclass
class Condition:
    index: int
    name: str
    ratio: float
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class LowerBoundReport:
    eps: float
    shift: float
    r: float
    kappa: float
    kl_pq: float
    kl_qp: float
    hellinger_sq: float
    gamma_moments: dict
    conditions: list
    kappa_needed: float
    fisher_r: float
    n: int | None = None
    C: float = 1.0
    delta_floor: float | None = None
    tv_complement_estimate: float | None = None
    tv_stderr: float | None = None

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def to_json(self) -> dict:
        out = asdict(self)
        out["gamma_moments"] = {k: v for k, v in self.gamma_moments.items()}
        return out


def _ratios(kl_pq, kl_qp, h2, mom, kappa, kmax):
    """Measured left/right ratios of the six conditions; pass iff ratio <= 1 + kappa."""
    rows = []
    rows.append((1, "H^2 <= (1+k) KL/4", h2 / (0.25 * kl_pq), {}))
    a = kl_pq / kl_qp
    rows.append((2, "KL(p||q)/KL(q||p) in [1/(1+k), 1+k]", max(a, 1.0 / a), {"kl_ratio": a}))
    rows.append((3, "E_p[g^2] <= (1+k) 2 KL", mom[("p", 2)] / (2.0 * kl_pq), {}))
    rows.append((4, "E_q[g^2] <= (1+k) 2 KL", mom[("q", 2)] / (2.0 * kl_pq), {}))
    for idx, under in ((5, "p"), (6, "q")):
        per_k = {}
        for k in range(3, kmax + 1):
            rhs = math.factorial(k) / 2.0 * 2.0 * kl_pq * kappa ** (k - 2)
            per_k[k] = mom[(under, k)] / rhs
        worst = max(per_k.values()) if per_k else 0.0
        rows.append((idx, f"E_{under}|g|^k <= (1+k) (k!/2) 2 KL k^(k-2)", worst,
                     {"ratio_by_order": per_k}))
    return rows


def _kappa_needed(kl_pq, kl_qp, h2, mom, kmax):
    def ok(kappa):
        return all(r[2] <= 1.0 + kappa for r in _ratios(kl_pq, kl_qp, h2, mom, kappa, kmax))

    lo, hi = 0.0, 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def delta_floor(kl: float, n: int, kappa: float, C: float = 1.0) -> float:
    """``2 exp(-(1 + C max(kappa, 1/sqrt(n KL), KL)) n KL / 4)`` (diagnostic)."""
    alpha = max(kappa, 1.0 / math.sqrt(n * kl), kl)
    return 2.0 * math.exp(-(1.0 + C * alpha) * n * kl / 4.0)


def check_newlb_conditions(m: SmoothedModel, eps: float, kappa: float, kmax: int = 4,
                           n: int | None = None, C: float = 1.0) -> LowerBoundReport:
    """Evaluate the six two-point conditions between ``f_r`` and ``f_r(. - 2 eps)``."""
    eps = float(eps)
    if eps == 0.0:
        raise ShiftZero("eps = 0 makes p and q identical; the conditions are degenerate")
    if not kappa > 0:
        raise ValidationError("kappa must be positive")
    if abs(eps) > 0.25 * m.r * (1 + 1e-12):
        raise ValidationError(f"eps must be <= r/4 = {m.r / 4}")
    if kmax < 3:
        raise ValidationError("kmax must be >= 3")
    shift = 2.0 * eps
    kl_pq = kl_divergence(m, shift)
    kl_qp = kl_divergence(m, shift, reverse=True)
    h2 = hellinger_sq(m, shift)
    mom = {}
    for under in ("p", "q"):
        for k in range(2, kmax + 1):
            mom[(under, k)] = loglik_moment(m, shift, k, under)
    rows = _ratios(kl_pq, kl_qp, h2, mom, kappa, kmax)
    conds = [Condition(i, name, float(ratio), bool(ratio <= 1.0 + kappa), detail)
             for i, name, ratio, detail in rows]
    rep = LowerBoundReport(
        eps=eps, shift=shift, r=m.r, kappa=float(kappa), kl_pq=kl_pq, kl_qp=kl_qp,
        hellinger_sq=h2, gamma_moments={f"{u}{k}": v for (u, k), v in mom.items()},
        conditions=conds, kappa_needed=_kappa_needed(kl_pq, kl_qp, h2, mom, kmax),
        fisher_r=m.fisher_info(), n=n, C=C)
    if n is not None:
        rep.delta_floor = delta_floor(kl_pq, n, kappa, C)
    return rep


# ---------------------------------------------------------------------------
# n-sample total variation by Monte Carlo
# ---------------------------------------------------------------------------


def _tv_block(m: SmoothedModel, shift: float, n: int, count: int, gen) -> np.ndarray:
    x = m.base.sample(count * n, gen).reshape(count, n)
    x = x + m.r * gen.standard_normal((count, n))
    if shift == 0.0:
        return np.ones(count)
    s = (m.logpdf(x - shift) - m.logpdf(x)).sum(axis=1)
    # min(1, exp(s)) without overflow
    return np.exp(np.minimum(s, 0.0))


def _tv_block_seeded(args):
    m, shift, n, count, seed, b = args
    return _tv_block(m, shift, n, count, rngmod.stream(seed, "tv-block", b))


def tv_product_mc(m: SmoothedModel, shift: float, n: int, trials: int, rng,
                  workers: int = 1):
    """Monte Carlo ``1 - TV(p^n, q^n) = E_{p^n}[min(1, prod q/p)]``.

    ``rng`` is a generator (sequential) or an integer seed; with a seed,
    blocks of trials draw from derived streams and may run on ``workers``
    processes without changing the result.  Returns ``(estimate, stderr)``.
    """
    if trials < 1000:
        raise ValidationError("tv_product_mc needs at least 1000 trials")
    if n < 1:
        raise ValidationError("n must be >= 1")
    shift = float(shift)
    if isinstance(rng, (int, np.integer)):
        sizes = [min(TV_BLOCK, trials - i) for i in range(0, trials, TV_BLOCK)]
        jobs = [(m, shift, n, c, int(rng), b) for b, c in enumerate(sizes)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(_tv_block_seeded, jobs))
        else:
            parts = [_tv_block_seeded(j) for j in jobs]
        vals = np.concatenate(parts)
    else:
        vals = np.concatenate([_tv_block(m, shift, n, min(TV_BLOCK, trials - i), rng)
                               for i in range(0, trials, TV_BLOCK)])
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return est, err


def gaussian_tv_complement(shift: float, n: int, sigma: float) -> float:
    """Closed form ``1 - TV(N(0,s^2)^n, N(shift,s^2)^n) = 2 Phi(-|shift| sqrt(n) / (2 s))``."""
    z = abs(shift) * math.sqrt(n) / (2.0 * sigma)
    return float(special.erfc(z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# indistinguishable shift
# ---------------------------------------------------------------------------


def indistinguishable_shift(n: int, delta: float, fisher_r: float) -> float:
    """Leading-order ``eps = sqrt(2 log(1/delta) / (n I_r))``; the two-point shift is ``2 eps``."""
    if not (n > 0 and fisher_r > 0 and 0 < delta < 1):
        raise ValidationError("need n > 0, I_r > 0, delta in (0, 1)")
    return math.sqrt(2.0 * math.log(1.0 / delta) / (n * fisher_r))


def shift_corrections(n: int, delta: float, fisher_r: float, r: float) -> dict:
    """Sizes of the three lower-order terms shrinking ``eps`` (unit constants, diagnostic)."""
    L = math.log(1.0 / delta)
    return {
        "sqrt(L/n)/(r^3 I^1.5)": math.sqrt(L / n) / (r ** 3 * fisher_r ** 1.5),
        "1/L": 1.0 / L,
        "L/n": L / n,
    }
