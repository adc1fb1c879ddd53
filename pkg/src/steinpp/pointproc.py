"""Poisson and binomial point processes on the torus, a grid index, and a Mecke check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import logsumexp

from . import _kernels
from .config import TOL
from .geometry import ball_measure, lens_measure, torus_distance, wrap


class SamplerStuck(RuntimeError):
    pass


class NotAProbability(ValueError):
    pass


class NotEnoughPoints(ValueError):
    pass


KINDS = ("constant", "separable", "general")


@dataclass(frozen=True)
class IntensityMeasure:
    """Finite measure on the torus with a bounded density.

    ``kind`` selects the integration strategy: constant densities are exact,
    separable ones integrate factor by factor, general ones use tensor rules.
    """

    d: int
    total_mass: float
    lam_min: float
    lam_max: float
    kind: str = "constant"
    fn: Callable | None = field(default=None, repr=False, compare=False)
    factors: tuple | None = field(default=None, repr=False, compare=False)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.total_mass < 0:
            raise ValueError("total mass must be nonnegative")

    @classmethod
    def constant(cls, mass: float, d: int) -> "IntensityMeasure":
        return cls(d=d, total_mass=float(mass), lam_min=float(mass), lam_max=float(mass))

    @classmethod
    def separable(cls, factors: Sequence[Callable], bounds: Sequence[tuple], mass: float) -> "IntensityMeasure":
        """Density proportional to prod_a factors[a](x_a), normalized to ``mass``.

        ``bounds`` holds (min, max) of each factor on [0, 1).
        """
        ints = [integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)[0] for f in factors]
        c = mass / math.prod(ints)
        lo = c * math.prod(b[0] for b in bounds)
        hi = c * math.prod(b[1] for b in bounds)
        return cls(d=len(factors), total_mass=float(mass), lam_min=lo, lam_max=hi,
                   kind="separable", factors=tuple(factors), scale=c)

    @classmethod
    def cosine(cls, amp: float, d: int, mass: float) -> "IntensityMeasure":
        """mass * prod_a (1 + amp cos(2 pi x_a)); a smooth non-constant test density."""
        if not 0 <= amp < 1:
            raise ValueError("amplitude must lie in [0, 1)")

        def f(t):
            return 1.0 + amp * np.cos(2 * np.pi * np.asarray(t))

        return cls.separable([f] * d, [(1 - amp, 1 + amp)] * d, mass)

    @classmethod
    def general(cls, fn: Callable, lam_min: float, lam_max: float, d: int,
                total_mass: float | None = None) -> "IntensityMeasure":
        K = cls(d=d, total_mass=0.0, lam_min=lam_min, lam_max=lam_max, kind="general", fn=fn)
        quad = K._cube_integral()
        if total_mass is None:
            total_mass = quad
        elif abs(quad - total_mass) > TOL.total_mass_rel * max(abs(total_mass), 1e-300):
            raise ValueError(f"declared mass {total_mass} but density integrates to {quad}")
        return cls(d=d, total_mass=float(total_mass), lam_min=lam_min, lam_max=lam_max,
                   kind="general", fn=fn)

    def density(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "constant":
            return np.full(len(pts), self.lam_max)
        if self.kind == "separable":
            out = np.full(len(pts), self.scale)
            for a, f in enumerate(self.factors):
                out = out * f(pts[:, a])
            return out
        return np.asarray(self.fn(pts), dtype=float) * self.scale

    def scaled(self, c: float) -> "IntensityMeasure":
        if c < 0:
            raise ValueError("negative scale")
        if self.kind == "constant":
            return IntensityMeasure.constant(self.total_mass * c, self.d)
        return IntensityMeasure(d=self.d, total_mass=self.total_mass * c, lam_min=self.lam_min * c,
                                lam_max=self.lam_max * c, kind=self.kind, fn=self.fn,
                                factors=self.factors, scale=self.scale * c)

    def probability(self) -> "IntensityMeasure":
        if self.total_mass <= 0:
            raise NotAProbability("zero measure cannot be normalized")
        return self.scaled(1.0 / self.total_mass)

    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= TOL.probability_mass

    def ball_mass(self, x, r: float) -> float:
        return ball_measure(self, x, r)

    def _cube_integral(self, lo=None, hi=None) -> float:
        # periodic trapezoid on the full cube converges spectrally for smooth densities
        lo = np.zeros(self.d) if lo is None else np.asarray(lo, dtype=float)
        hi = np.ones(self.d) if hi is None else np.asarray(hi, dtype=float)
        full = np.all(lo == 0) and np.all(hi == 1)
        m = 8
        prev = None
        while m**self.d <= TOL.quad_max_nodes:
            if full:
                axes = [np.arange(m) / m] * self.d
                wts = [np.full(m, 1.0 / m)] * self.d
            else:
                t, w = leggauss(m)
                axes = [(a + b) / 2 + (b - a) / 2 * t for a, b in zip(lo, hi)]
                wts = [(b - a) / 2 * w for a, b in zip(lo, hi)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
            W = wts[0]
            for w in wts[1:]:
                W = np.multiply.outer(W, w)
            cur = float(np.sum(W.ravel() * self.density(grid)))
            if prev is not None and abs(cur - prev) <= 0.1 * TOL.total_mass_rel * abs(cur):
                return cur
            prev = cur
            m *= 2
        raise RuntimeError("density integral did not converge")

    def box_mass(self, lo, hi) -> float:
        """Mass of the axis-aligned box [lo, hi] inside the unit cube."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self.kind == "constant":
            return self.lam_max * float(np.prod(hi - lo))
        if self.kind == "separable":
            out = self.scale
            for f, a, b in zip(self.factors, lo, hi):
                out *= integrate.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
            return float(out)
        return self._cube_integral(lo, hi)

    def check_bounds(self, rng, samples: int = 1000) -> None:
        gen = as_generator(rng)
        vals = self.density(gen.random((samples, self.d)))
        tol = 1e-12 * max(1.0, self.lam_max)
        if np.any(vals < self.lam_min - tol) or np.any(vals > self.lam_max + tol):
            raise ValueError("density leaves its declared bounds")


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream path; equal specs give bit-identical draws."""

    seed: int
    stream: tuple = ()

    def __post_init__(self):
        s = self.stream if isinstance(self.stream, tuple) else (self.stream,)
        object.__setattr__(self, "stream", tuple(int(v) for v in s))

    def child(self, *keys: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream + tuple(keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) % 2**64, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngSpec):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngSpec or Generator, got {type(rng).__name__}")


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite multiset of torus points, stored in insertion order."""

    points: np.ndarray
    d: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.d)
        if pts.size and (np.any(pts < 0) or np.any(pts >= 1)):
            raise ValueError("coordinates must lie in [0, 1)")
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, d: int) -> "PointConfiguration":
        return cls(np.empty((0, d)), d)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PointConfiguration) and self.d == other.d
                and np.array_equal(self.points, other.points))

    def add(self, pts) -> "PointConfiguration":
        pts = pts.points if isinstance(pts, PointConfiguration) else np.asarray(pts, dtype=float)
        return PointConfiguration(np.concatenate([self.points, pts.reshape(-1, self.d)]), self.d)

    def restrict(self, center, r: float) -> "PointConfiguration":
        """Points in the closed ball B_r(center)."""
        if not len(self):
            return self
        return PointConfiguration(self.points[torus_distance(self.points, center) <= r], self.d)

    def _counts(self):
        from collections import Counter

        return Counter(map(tuple, self.points.tolist()))

    def difference(self, other: "PointConfiguration") -> "PointConfiguration":
        """Multiset difference self - other (exact coordinate matching)."""
        left = self._counts()
        left.subtract(other._counts())
        keep = []
        for p in self.points.tolist():
            t = tuple(p)
            if left[t] > 0:
                keep.append(p)
                left[t] -= 1
        return PointConfiguration(np.array(keep).reshape(-1, self.d), self.d)

    def symmetric_difference_size(self, other: "PointConfiguration") -> int:
        return len(self.difference(other)) + len(other.difference(self))

    def to_text(self) -> str:
        lines = [f"d={self.d} n={len(self)}"]
        lines += [" ".join(f"{c:.17g}" for c in p) for p in self.points]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PointConfiguration":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        head = dict(kv.split("=") for kv in rows[0].split())
        d, n = int(head["d"]), int(head["n"])
        pts = np.array([[float(v) for v in ln.split()] for ln in rows[1:]]).reshape(-1, d)
        if len(pts) != n:
            raise ValueError(f"header says {n} points, found {len(pts)}")
        return cls(pts, d)


def _uniform_shell(gen, m: int, center, r_in: float, r_out: float, d: int) -> np.ndarray:
    u = gen.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = (r_in**d + gen.random(m) * (r_out**d - r_in**d)) ** (1.0 / d)
    return wrap(np.asarray(center) + rad[:, None] * u)


def sample_points(K: IntensityMeasure, count: int, rng, center=None, r_out=None,
                  r_in: float = 0.0, exclude: Sequence[tuple] = ()) -> np.ndarray:
    """``count`` i.i.d. points from K restricted to a region, by rejection.

    The region is the shell r_in < |z - center| <= r_out (the whole torus when
    ``center`` is None, or everything beyond r_in when ``r_out`` is None), minus
    the closed balls in ``exclude`` given as (center, radius) pairs.
    """
    gen = as_generator(rng)
    d = K.d
    out = np.empty((0, d))
    if count <= 0:
        return out
    proposals = 0
    while len(out) < count:
        need = count - len(out)
        batch = max(16, int(need * 1.5) + 8)
        proposals += batch
        if proposals > TOL.sampler_max_proposals:
            raise SamplerStuck(f"more than {TOL.sampler_max_proposals} proposals")
        if center is None or r_out is None:
            cand = gen.random((batch, d))
            if center is not None and r_in > 0:
                cand = cand[torus_distance(cand, center) > r_in]
        else:
            cand = _uniform_shell(gen, batch, center, r_in, r_out, d)
        for c, r in exclude:
            cand = cand[torus_distance(cand, c) > r]
        if K.kind != "constant" and len(cand):
            acc = gen.random(len(cand)) * K.lam_max < K.density(cand)
            cand = cand[acc]
        out = np.concatenate([out, cand[:need]])
    return out


def sample_poisson(K: IntensityMeasure, rng) -> PointConfiguration:
    gen = as_generator(rng)
    n = gen.poisson(K.total_mass) if K.total_mass > 0 else 0
    return PointConfiguration(sample_points(K, n, gen), K.d)


def sample_binomial(n: int, Q: IntensityMeasure, rng) -> PointConfiguration:
    if not Q.is_probability():
        raise NotAProbability(f"total mass {Q.total_mass} is not 1")
    if n < 0:
        raise ValueError("negative count")
    return PointConfiguration(sample_points(Q, n, as_generator(rng)), Q.d)


class GridIndex:
    """Uniform cell grid over the torus for exact k-NN and range queries."""

    def __init__(self, points, cell: float | None = None):
        pts = np.ascontiguousarray(np.asarray(points, dtype=float))
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        self.points = pts
        n, d = pts.shape
        self.d = d
        if cell is None:
            # one expected point per cell
            m = int(max(n, 1) ** (1.0 / d))
        else:
            m = int(1.0 / cell) if cell > 0 else 1
        cap = int((4 * max(n, 1) + 64) ** (1.0 / d))
        self.m = max(1, min(m, cap))
        self.order, self.starts = _kernels.build_grid(pts, self.m)

    def knn(self, queries, k: int, skip_zero: bool = True) -> np.ndarray:
        """k-th nearest distance from each query.

        With ``skip_zero`` every point at distance exactly 0 is ignored, which
        removes the query point together with any duplicates of it.
        """
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        if k < 1:
            raise ValueError("k must be positive")
        out = self.knn_or_inf(q, k, skip_zero)
        if np.any(np.isinf(out)):
            raise NotEnoughPoints(f"fewer than {k} eligible neighbours")
        return out

    def knn_or_inf(self, queries, k: int, skip_zero: bool = True) -> np.ndarray:
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        return _kernels.knn_query(self.points, self.order, self.starts, self.m, q, k, skip_zero)

    def count(self, queries, r: float, strict: bool = False) -> np.ndarray:
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        return _kernels.count_within(self.points, self.order, self.starts, self.m, q, float(r), strict)

    def count_open(self, queries, radii) -> np.ndarray:
        """Points strictly inside each ball B(query_i, radii_i)."""
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        rad = np.ascontiguousarray(np.asarray(radii, dtype=float))
        return _kernels.count_within_radii(self.points, self.order, self.starts, self.m, q, rad)

    def pairs(self, r: float) -> np.ndarray:
        return _kernels.pairs_within(self.points, self.order, self.starts, self.m, float(r))


def knn_distance(x, omega: PointConfiguration, k: int, exclude_self: bool = True) -> float:
    """k-th smallest distance from x to the points of omega.

    ``exclude_self`` drops every point located exactly at x.
    """
    if len(omega) == 0:
        raise NotEnoughPoints("empty configuration")
    idx = GridIndex(omega.points)
    return float(idx.knn(np.asarray(x, dtype=float).reshape(1, -1), k, skip_zero=exclude_self)[0])


@dataclass
class CheckReport:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    z: float
    passed: bool
    reps: int


def _mean_se(vals) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    if len(vals) < 2:
        return float(vals.mean()) if len(vals) else 0.0, 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def mecke_check(K: IntensityMeasure, test: Callable, reps: int, rng) -> CheckReport:
    """Compare both sides of the univariate Mecke equation by Monte Carlo.

    ``test(points, omega)`` returns test values for each row of ``points``
    evaluated against the configuration ``omega``.
    """
    spec = rng if isinstance(rng, RngSpec) else RngSpec(int(as_generator(rng).integers(2**63)))
    lhs = np.zeros(reps)
    rhs = np.zeros(reps)
    if K.total_mass > 0:
        prob = K.probability()
        for i in range(reps):
            gen = spec.child(i).generator()
            eta = sample_poisson(K, gen)
            if len(eta):
                lhs[i] = float(np.sum(test(eta.points, eta)))
            x = sample_points(prob, 1, gen)
            eta2 = sample_poisson(K, gen)
            rhs[i] = K.total_mass * float(test(x, eta2.add(x))[0])
    ml, sl = _mean_se(lhs)
    mr, sr = _mean_se(rhs)
    se = math.hypot(sl, sr)
    z = (ml - mr) / se if se > 0 else (0.0 if ml == mr else math.inf)
    return CheckReport(ml, mr, sl, sr, z, abs(z) <= 4.0, reps)


def ball_count_test(r: float) -> Callable:
    """Test functional (x, omega) -> omega(B_r(x)), the point x included if present."""

    def test(points, omega):
        if len(omega) == 0:
            return np.zeros(len(points))
        return GridIndex(omega.points, cell=max(r, 1e-3)).count(points, r).astype(float)

    return test


@dataclass(frozen=True)
class Window:
    """Union of closed balls cut into concentric shells, with the exact mass of each cell.

    Cell (j, s) is the shell r_{s-1} < |z - c_j| <= r_s of ball j minus the
    balls before it; shell radii split each ball into equal volumes. At most
    two balls may overlap.
    """

    centers: tuple
    radii: tuple
    masses: np.ndarray  # (balls, shells)

    @classmethod
    def build(cls, K: IntensityMeasure, balls, shells: int = 1) -> "Window":
        centers = tuple(np.asarray(c, dtype=float) for c, _ in balls)
        radii = tuple(float(r) for _, r in balls)
        masses = np.zeros((len(balls), shells))
        for j, (c, r) in enumerate(zip(centers, radii)):
            overlaps = [i for i in range(j) if torus_distance(centers[i], c) < radii[i] + r]
            if len(overlaps) > 1 or (overlaps and j > 1):
                raise ValueError("only two mutually overlapping balls are supported")
            cum = [0.0]
            for rs in cls.shell_radii(r, shells, K.d)[1:]:
                m = ball_measure(K, c, rs)
                for i in overlaps:
                    m -= lens_measure(K, centers[i], radii[i], c, rs)
                cum.append(max(m, cum[-1]))
            masses[j] = np.diff(cum)
        return cls(centers, radii, masses)

    @staticmethod
    def shell_radii(r: float, shells: int, d: int) -> np.ndarray:
        return r * (np.arange(shells + 1) / shells) ** (1.0 / d)

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = np.zeros(len(pts), bool)
        for c, r in zip(self.centers, self.radii):
            inside |= torus_distance(pts, c) <= r
        return inside


def tilt_profiles(shells: int, thetas) -> np.ndarray:
    """Per-shell tilts: theta on the shells inside a cut, 1 outside, for every cut and theta."""
    rows = []
    for cut in range(1, shells + 1):
        for th in thetas:
            row = np.ones(shells)
            row[:cut] = th
            rows.append(row)
    return np.unique(np.array(rows), axis=0)


def sample_window(K: IntensityMeasure, window: Window, rng, theta=1.0,
                  m: int | None = None, outside_mass: float | None = None):
    """Process restricted to ``window`` under per-shell count tilts, with its log likelihood ratio.

    ``theta`` is a tilt factor, a sequence of factors, or an array of
    per-shell profiles (one row per component). Several components give an
    equal-weight mixture, whose likelihood ratio stays below their number.
    Poisson input (``m`` None): cell counts ~ Poisson(tilt * mass).
    Binomial input: ``m`` i.i.d. points of law K / outside_mass, where
    ``outside_mass`` is the mass of the region the points live in (the total
    by default, less an excluded ball for conditioned processes); a point
    falls in a cell with probability tilt * mass / outside_mass.
    Returns (points, log of target/proposal density ratio).
    """
    gen = as_generator(rng)
    shells = window.masses.shape[1]
    prof = np.asarray(theta, dtype=float)
    if prof.ndim < 2:
        prof = np.repeat(np.atleast_1d(prof)[:, None], shells, axis=1)
    if prof.shape[1] != shells:
        raise ValueError(f"profiles have {prof.shape[1]} shells, window has {shells}")
    if np.any(prof <= 0) or np.any(prof > 1):
        raise ValueError("tilts must lie in (0, 1]")
    tilt = prof[gen.integers(len(prof))] if len(prof) > 1 else prof[0]
    masses = window.masses
    if m is None:
        counts = gen.poisson(tilt[None, :] * masses)
        Ns = counts.sum(axis=0)
        # log of proposal/target density for each component
        log_q = ((1 - prof) * masses.sum(axis=0)).sum(axis=1) + np.log(prof) @ Ns
    else:
        total = K.total_mass if outside_mass is None else outside_mass
        probs = masses / total
        P = float(probs.sum())
        if P >= 1:
            raise ValueError("window carries the whole mass")
        flat = (tilt[None, :] * probs).ravel()
        draw = gen.multinomial(m, np.append(flat, max(1 - flat.sum(), 0.0)))
        counts = draw[:-1].reshape(masses.shape)
        Ns = counts.sum(axis=0)
        rest = m - int(Ns.sum())
        P_c = prof @ probs.sum(axis=0)
        log_q = np.log(prof) @ Ns + rest * (np.log1p(-P_c) - math.log1p(-P))
    log_lr = -float(logsumexp(log_q) - math.log(len(prof)))
    parts = []
    for j in range(masses.shape[0]):
        excl = [(window.centers[i], window.radii[i]) for i in range(j)]
        rs = Window.shell_radii(window.radii[j], shells, K.d)
        for s in range(shells):
            if counts[j, s]:
                parts.append(sample_points(K, int(counts[j, s]), gen, center=window.centers[j],
                                           r_in=rs[s], r_out=rs[s + 1], exclude=excl))
    pts = np.concatenate(parts) if parts else np.empty((0, K.d))
    return pts, log_lr
