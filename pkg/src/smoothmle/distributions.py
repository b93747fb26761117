"""Base location models ``f`` and the fixture distributions.

A :class:`Distribution` is a finite mixture of *parts*.  Each part is one of

* :class:`GaussianPart` -- ``N(mean, sigma^2)``; ``sigma == 0`` is a Dirac atom,
* :class:`LaplacePart` -- density ``exp(-|x - loc| / scale) / (2 scale)``,
* :class:`GridPart` -- a piecewise-linear density on a uniform grid, zero
  outside the grid.

The reported ``kind`` is ``"mixture"`` for pure Gaussian/atom mixtures,
``"laplace"`` and ``"grid"`` for single parts of those types, and
``"hybrid"`` for anything else (e.g. the spiked Laplace fixture).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import (
    AtomDensityUndefined,
    InvalidDistribution,
    InvalidFixture,
    InvalidProbability,
    ValidationError,
)

LOG_2PI = math.log(2.0 * math.pi)
WEIGHT_TOL = 1e-12
GRID_MASS_TOL = 1e-6


def _norm_cdf(z):
    return special.ndtr(z)


# ---------------------------------------------------------------------------
# parts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPart:
    mean: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.sigma)) or self.sigma < 0:
            raise InvalidDistribution(f"bad Gaussian component {self}")

    @property
    def is_atom(self) -> bool:
        return self.sigma == 0.0

    def logpdf(self, x):
        if self.is_atom:
            raise AtomDensityUndefined("a Dirac atom has no density")
        z = (x - self.mean) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * LOG_2PI

    def score(self, x):
        if self.is_atom:
            raise AtomDensityUndefined("a Dirac atom has no density")
        return -(x - self.mean) / self.sigma**2

    def cdf(self, x):
        if self.is_atom:
            return (x >= self.mean).astype(float)
        return _norm_cdf((x - self.mean) / self.sigma)

    def quantile(self, p):
        if self.is_atom:
            return np.full_like(p, self.mean)
        return self.mean + self.sigma * special.ndtri(p)

    def sample(self, n, rng):
        if self.is_atom:
            return np.full(n, self.mean)
        return rng.normal(self.mean, self.sigma, size=n)

    def scale_hint(self):
        return self.sigma


@dataclass(frozen=True)
class LaplacePart:
    loc: float
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.loc) and math.isfinite(self.scale)) or self.scale <= 0:
            raise InvalidDistribution("laplace scale must be positive")

    def logpdf(self, x):
        return -np.abs(x - self.loc) / self.scale - math.log(2.0 * self.scale)

    def score(self, x):
        return -np.sign(x - self.loc) / self.scale

    def cdf(self, x):
        z = (x - self.loc) / self.scale
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)),
                        1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))

    def quantile(self, p):
        q = p - 0.5
        return self.loc - self.scale * np.sign(q) * np.log1p(-2.0 * np.abs(q))

    def sample(self, n, rng):
        return rng.laplace(self.loc, self.scale, size=n)

    def scale_hint(self):
        return self.scale


@dataclass(frozen=True, eq=False)
class GridPart:
    """Piecewise-linear density through ``(x0 + k*dx, density[k])``.

    The stored density is renormalised so its trapezoid integral is 1, which is
    the exact integral of the interpolant.
    """

    x0: float
    dx: float
    density: np.ndarray = field(repr=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.ndim != 1 or d.size < 2:
            raise InvalidDistribution("grid density needs at least two values")
        if not (self.dx > 0 and math.isfinite(self.dx) and math.isfinite(self.x0)):
            raise InvalidDistribution("grid dx must be positive")
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise InvalidDistribution("grid density values must be finite and >= 0")
        seg = 0.5 * self.dx * (d[:-1] + d[1:])
        mass = seg.sum()
        if mass <= 0:
            raise InvalidDistribution("grid density integrates to zero")
        d = d / mass
        d.setflags(write=False)
        cum = np.concatenate([[0.0], np.cumsum(seg / mass)])
        cum[-1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "_cum", cum)

    @property
    def nodes(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.density.size)

    @property
    def x_end(self) -> float:
        return self.x0 + self.dx * (self.density.size - 1)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x0) & (x <= self.x_end)
        val = np.interp(x, self.nodes, self.density)
        return np.where(inside, val, 0.0)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def score(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.floor((x - self.x0) / self.dx).astype(np.int64), 0,
                    self.density.size - 2)
        slope = (self.density[k + 1] - self.density[k]) / self.dx
        val = self.pdf(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(val > 0, slope / val, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.x0) / self.dx
        k = np.clip(np.floor(t).astype(np.int64), 0, self.density.size - 2)
        frac = np.clip(t - k, 0.0, 1.0)
        d0 = self.density[k]
        d1 = self.density[k + 1]
        within = self.dx * (d0 * frac + 0.5 * (d1 - d0) * frac * frac)
        val = self._cum[k] + within
        return np.clip(np.where(x < self.x0, 0.0, np.where(x >= self.x_end, 1.0, val)), 0.0, 1.0)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        # first node whose cumulative mass reaches p; the answer lies in the cell before it
        j = np.searchsorted(self._cum, p, side="left")
        k = np.clip(j - 1, 0, self.density.size - 2)
        c = p - self._cum[k]
        d0 = self.density[k]
        slope = (self.density[k + 1] - d0) / self.dx
        # solve d0*t + slope*t^2/2 = c for t in [0, dx]
        disc = np.sqrt(np.maximum(d0 * d0 + 2.0 * slope * c, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d0 + disc > 0, 2.0 * c / (d0 + disc), 0.0)
        return self.x0 + k * self.dx + np.clip(t, 0.0, self.dx)

    def sample(self, n, rng):
        return self.quantile(rng.random(n))

    def scale_hint(self):
        return self.dx


Part = GaussianPart | LaplacePart | GridPart


# ---------------------------------------------------------------------------
# the distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Distribution:
    """Immutable finite mixture of parts; safe to share between workers."""

    parts: tuple
    weights: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        w = tuple(float(v) for v in self.weights)
        if not parts or len(parts) != len(w):
            raise InvalidDistribution("need one weight per part")
        if any(not (v > 0) for v in w):
            raise InvalidDistribution("mixture weights must be > 0")
        if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
            raise InvalidDistribution(f"mixture weights sum to {math.fsum(w)!r}, not 1")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "weights", w)

    # -- constructors -----------------------------------------------------

    @classmethod
    def gaussian(cls, mean=0.0, sigma=1.0):
        return cls((GaussianPart(mean, sigma),), (1.0,))

    @classmethod
    def dirac(cls, loc=0.0):
        return cls((GaussianPart(loc, 0.0),), (1.0,))

    @classmethod
    def laplace(cls, scale=1.0, loc=0.0):
        return cls((LaplacePart(loc, scale),), (1.0,))

    @classmethod
    def mixture(cls, components: Sequence[tuple[float, float, float]]):
        """Gaussian mixture from ``(weight, mean, sigma)`` triples."""
        return cls(tuple(GaussianPart(m, s) for _, m, s in components),
                   tuple(w for w, _, _ in components))

    @classmethod
    def grid(cls, x0, dx, density):
        part = GridPart(x0, dx, density)
        raw = np.asarray(density, dtype=float)
        mass = 0.5 * dx * (raw[:-1] + raw[1:]).sum()
        if abs(mass - 1.0) > GRID_MASS_TOL:
            raise InvalidDistribution(f"grid density integrates to {mass:.9g}, not 1")
        return cls((part,), (1.0,))

    @classmethod
    def grid_normalized(cls, x0, dx, density):
        """Like :meth:`grid` but renormalises instead of rejecting."""
        return cls((GridPart(x0, dx, density),), (1.0,))

    # -- descriptors ------------------------------------------------------

    @property
    def kind(self) -> str:
        if all(isinstance(p, GaussianPart) for p in self.parts):
            return "mixture"
        if len(self.parts) == 1:
            return "laplace" if isinstance(self.parts[0], LaplacePart) else "grid"
        return "hybrid"

    @property
    def has_atom(self) -> bool:
        return any(isinstance(p, GaussianPart) and p.is_atom for p in self.parts)

    @property
    def is_continuous(self) -> bool:
        return not self.has_atom

    def feature_scale(self) -> float:
        """Narrowest length scale in the density (0 for atoms or kinks)."""
        scales = []
        for p in self.parts:
            if isinstance(p, LaplacePart):
                scales.append(0.0)
            else:
                scales.append(p.scale_hint())
        return min(scales)

    def _weights_array(self):
        return np.asarray(self.weights)

    # -- densities --------------------------------------------------------

    def pdf(self, x):
        """Density ``f(x)``.  Raises AtomDensityUndefined at an atom location."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, p in zip(self.weights, self.parts):
            if isinstance(p, GaussianPart) and p.is_atom:
                if np.any(x == p.mean):
                    raise AtomDensityUndefined(
                        f"density of the atom at {p.mean} is undefined")
                continue
            if isinstance(p, GridPart):
                out = out + w * p.pdf(x)
            else:
                out = out + w * np.exp(p.logpdf(x))
        return out

    def logpdf_and_score(self, x):
        """``(log f(x), f'(x)/f(x))`` for densities without atoms."""
        if self.has_atom:
            raise AtomDensityUndefined("model has a Dirac atom; its log-density is undefined")
        x = np.asarray(x, dtype=float)
        logs = []
        scores = []
        with np.errstate(divide="ignore"):
            for w, p in zip(self.weights, self.parts):
                logs.append(math.log(w) + p.logpdf(x))
                scores.append(p.score(x))
        logs = np.array(logs)
        total = special.logsumexp(logs, axis=0)
        with np.errstate(invalid="ignore"):
            resp = np.exp(logs - total)
        resp = np.nan_to_num(resp)
        return total, (resp * np.array(scores)).sum(axis=0)

    def logpdf(self, x):
        return self.logpdf_and_score(x)[0]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, p in zip(self.weights, self.parts):
            out = out + w * p.cdf(x)
        return np.clip(out, 0.0, 1.0)

    def quantile(self, p):
        """``inf{x : cdf(x) >= p}`` for ``p`` in (0, 1)."""
        scalar = np.ndim(p) == 0
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(~(p > 0) | ~(p < 1)):
            raise InvalidProbability("quantile level must lie strictly inside (0, 1)")
        if len(self.parts) == 1:
            q = self.parts[0].quantile(p)
        else:
            q = self._bisect_quantile(p)
        return float(q[0]) if scalar else q

    def _bisect_quantile(self, p):
        # For every part x < Q_j(p) implies F_j(x) < p, so the mixture
        # quantile is bracketed by the smallest and largest part quantiles.
        qs = np.array([part.quantile(p) for part in self.parts])
        hi = qs.max(axis=0)
        lo = qs.min(axis=0)
        lo = lo - 1e-9 * (1.0 + np.abs(lo))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            moved = (mid > lo) & (mid < hi)
            if not np.any(moved):
                break
            up = self.cdf(mid) >= p
            hi = np.where(up & moved, mid, hi)
            lo = np.where(~up & moved, mid, lo)
        return hi

    def iqr(self) -> float:
        return float(self.quantile(0.75) - self.quantile(0.25))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. draws: pick a part by weight, then draw from it."""
        n = int(n)
        if n < 1:
            raise ValidationError("n must be >= 1")
        if len(self.parts) == 1:
            return np.asarray(self.parts[0].sample(n, rng), dtype=float)
        which = rng.choice(len(self.parts), size=n, p=self._weights_array())
        out = np.empty(n)
        for j, part in enumerate(self.parts):
            idx = np.flatnonzero(which == j)
            if idx.size:
                out[idx] = part.sample(idx.size, rng)
        return out

    # -- serialisation ----------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "mixture":
            return {"type": "mixture", "components": [
                {"w": w, "mu": p.mean, "sigma": p.sigma}
                for w, p in zip(self.weights, self.parts)]}
        if self.kind == "laplace":
            p = self.parts[0]
            return {"type": "laplace", "scale": p.scale, "loc": p.loc}
        if self.kind == "grid":
            p = self.parts[0]
            return {"type": "grid", "x0": p.x0, "dx": p.dx, "pdf": p.density.tolist()}
        return {"type": "hybrid", "parts": [
            dict(_part_json(p), w=w) for w, p in zip(self.weights, self.parts)]}


def _part_json(p):
    if isinstance(p, GaussianPart):
        return {"type": "gaussian", "mu": p.mean, "sigma": p.sigma}
    if isinstance(p, LaplacePart):
        return {"type": "laplace", "loc": p.loc, "scale": p.scale}
    return {"type": "grid", "x0": p.x0, "dx": p.dx, "pdf": p.density.tolist()}


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

FIXTURE_NAMES = ("gaussian", "laplace", "dirac_mixture", "spiked_laplace",
                 "spiked_gaussian", "sawtooth_gaussian")

_FIXTURE_DEFAULTS: dict[str, dict[str, Any]] = {
    "gaussian": {},
    "laplace": {"scale": 1.0},
    "dirac_mixture": {"locs": (-1.0, 1.0)},
    "spiked_laplace": {"mass": 0.001, "loc": 4.0, "width": 0.002},
    "spiked_gaussian": {"mass": 0.001, "loc": 4.0, "width": 0.0},
    "sawtooth_gaussian": {"slope": 10.0, "tooth_width": 0.01, "half_width": 1.0,
                          "span": 12.0, "points_per_tooth": 16,
                          "clamp_budget": 0.01},
}


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def resolved(self) -> dict:
        if self.name not in _FIXTURE_DEFAULTS:
            raise InvalidFixture(f"unknown fixture {self.name!r}; "
                                 f"expected one of {', '.join(FIXTURE_NAMES)}")
        out = dict(_FIXTURE_DEFAULTS[self.name])
        unknown = set(self.params) - set(out)
        if unknown:
            raise InvalidFixture(f"unknown parameters for {self.name}: {sorted(unknown)}")
        out.update(self.params)
        return out


def make_fixture(spec: FixtureSpec | str, **params) -> Distribution:
    if isinstance(spec, str):
        spec = FixtureSpec(spec, params)
    prm = spec.resolved()
    name = spec.name
    if name == "gaussian":
        return Distribution.gaussian()
    if name == "laplace":
        return Distribution.laplace(prm["scale"])
    if name == "dirac_mixture":
        locs = tuple(float(v) for v in prm["locs"])
        return Distribution(tuple(GaussianPart(v, 0.0) for v in locs),
                            tuple(1.0 / len(locs) for _ in locs))
    if name in ("spiked_laplace", "spiked_gaussian"):
        mass, width = float(prm["mass"]), float(prm["width"])
        if not (0.0 <= mass < 1.0):
            raise InvalidFixture("spike mass must lie in [0, 1)")
        if width < 0 or (name == "spiked_laplace" and width <= 0):
            raise InvalidFixture("spike width must be positive")
        body = LaplacePart(0.0, 1.0) if name == "spiked_laplace" else GaussianPart(0.0, 1.0)
        if mass == 0.0:
            return Distribution((body,), (1.0,))
        return Distribution((body, GaussianPart(float(prm["loc"]), width)),
                            (1.0 - mass, mass))
    return _sawtooth(prm)


def _sawtooth(prm) -> Distribution:
    slope = float(prm["slope"])
    w = float(prm["tooth_width"])
    a = float(prm["half_width"])
    span = float(prm["span"])
    ppt = int(prm["points_per_tooth"])
    if w <= 0 or a <= 0 or span <= a or ppt < 2 or slope < 0:
        raise InvalidFixture("sawtooth needs positive tooth width / region and slope >= 0")
    dx = w / ppt
    n = int(round(2 * span / dx)) + 1
    x = -span + dx * np.arange(n)
    base = np.exp(-0.5 * x * x - 0.5 * LOG_2PI)
    # triangle wave, zero at -a, slope +-slope, period 2w
    u = x + a
    tri = 0.5 * w - np.abs(np.mod(u - 0.5 * w, 2 * w) - w)
    pert = np.where(np.abs(x) <= a, slope * tri, 0.0)
    dens = base + pert
    negative = np.clip(-dens, 0.0, None)
    clipped = 0.5 * dx * (negative[:-1] + negative[1:]).sum()
    if clipped > float(prm["clamp_budget"]):
        raise InvalidFixture(
            f"sawtooth drives {clipped:.3g} of mass below zero; exceeds clamping budget")
    dens = np.clip(dens, 0.0, None)
    return Distribution.grid_normalized(-span, dx, dens)


# ---------------------------------------------------------------------------
# JSON specs
# ---------------------------------------------------------------------------


def from_json(obj: Mapping[str, Any] | str) -> Distribution:
    """Build a distribution from the JSON spec schema (dict or JSON text)."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        kind = obj["type"]
    except (KeyError, TypeError):
        raise InvalidDistribution("distribution spec needs a 'type' field") from None
    try:
        if kind == "mixture":
            comps = [(float(c["w"]), float(c["mu"]), float(c["sigma"]))
                     for c in obj["components"]]
            return Distribution.mixture(comps)
        if kind == "laplace":
            return Distribution.laplace(float(obj["scale"]), float(obj.get("loc", 0.0)))
        if kind == "grid":
            return Distribution.grid(float(obj["x0"]), float(obj["dx"]), obj["pdf"])
        if kind == "fixture":
            params = {k: v for k, v in obj.items() if k not in ("type", "name")}
            return make_fixture(FixtureSpec(obj["name"], params))
        if kind == "hybrid":
            parts, weights = [], []
            for item in obj["parts"]:
                weights.append(float(item["w"]))
                t = item["type"]
                if t == "gaussian":
                    parts.append(GaussianPart(float(item["mu"]), float(item["sigma"])))
                elif t == "laplace":
                    parts.append(LaplacePart(float(item.get("loc", 0.0)), float(item["scale"])))
                elif t == "grid":
                    parts.append(GridPart(float(item["x0"]), float(item["dx"]), item["pdf"]))
                else:
                    raise InvalidDistribution(f"unknown part type {t!r}")
            return Distribution(tuple(parts), tuple(weights))
    except KeyError as exc:
        raise InvalidDistribution(f"distribution spec missing field {exc}") from None
    raise InvalidDistribution(f"unknown distribution type {kind!r}")


def load(path) -> Distribution:
    with open(path) as fh:
        return from_json(json.load(fh))
