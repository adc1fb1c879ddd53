"""Stabilizing functionals (f, g, stabilization region, truncation) and the marked processes they induce."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay
from scipy.special import gammaln

from .config import TOL
from .geometry import (
    R_ADMISSIBLE,
    Degenerate,
    LiftAmbiguous,
    ball_measure,
    circumsphere,
    radius_for_mass,
    torus_delta,
    torus_distance,
    unit_ball_volume,
)
from . import geometry
from .pointproc import GridIndex, IntensityMeasure, PointConfiguration

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def contains(self, other: "Ball") -> bool:
        if math.isinf(other.radius):
            return False
        return torus_distance(self.center, other.center) + other.radius <= self.radius

    def intersects(self, other: "Ball") -> bool:
        return torus_distance(self.center, other.center) <= self.radius + other.radius


@dataclass(frozen=True)
class Evaluation:
    g: bool
    mark: tuple
    region: Ball


@dataclass(eq=False)
class MarkedConfiguration:
    """Atoms (unit, mark) with the indices of the tuple that generated each one."""

    units: np.ndarray
    marks: np.ndarray
    provenance: np.ndarray
    d: int

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=float).reshape(-1, self.d)
        self.marks = np.asarray(self.marks, dtype=float).reshape(-1)
        prov = np.asarray(self.provenance, dtype=np.int64)
        width = prov.shape[-1] if prov.ndim == 2 else 1
        self.provenance = prov.reshape(len(self.marks), width)
        if not (len(self.units) == len(self.marks) == len(self.provenance)):
            raise ValueError("units, marks and provenance must align")

    @classmethod
    def empty(cls, d: int, arity: int = 1) -> "MarkedConfiguration":
        return cls(np.empty((0, d)), np.empty(0), np.empty((0, arity), dtype=np.int64), d)

    def __len__(self) -> int:
        return len(self.marks)

    def sorted(self) -> "MarkedConfiguration":
        if not len(self):
            return self
        order = np.lexsort(self.provenance.T[::-1])
        return MarkedConfiguration(self.units[order], self.marks[order], self.provenance[order], self.d)

    def select(self, mask) -> "MarkedConfiguration":
        return MarkedConfiguration(self.units[mask], self.marks[mask], self.provenance[mask], self.d)

    def restrict_marks(self, lo: float = -math.inf, hi: float = math.inf) -> "MarkedConfiguration":
        """Atoms with mark in (lo, hi]."""
        return self.select((self.marks > lo) & (self.marks <= hi))

    def count(self, lo: float = -math.inf, hi: float = math.inf, box=None) -> int:
        mask = (self.marks > lo) & (self.marks <= hi)
        if box is not None:
            blo, bhi = (np.asarray(v, dtype=float) for v in box)
            mask &= np.all((self.units >= blo) & (self.units < bhi), axis=1)
        return int(mask.sum())

    def max_mark(self) -> float:
        return float(self.marks.max()) if len(self) else -math.inf

    def keys(self) -> list[tuple]:
        return [tuple(p) for p in self.provenance.tolist()]

    def to_text(self) -> str:
        lines = []
        for u, m, p in zip(self.units, self.marks, self.provenance):
            lines.append(" ".join([*(f"{c:.17g}" for c in u), f"{m:.17g}", *(str(i) for i in p)]))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, d: int, arity: int) -> "MarkedConfiguration":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows:
            return cls.empty(d, arity)
        units = np.array([[float(v) for v in r[:d]] for r in rows])
        marks = np.array([float(r[d]) for r in rows])
        prov = np.array([[int(v) for v in r[d + 1:]] for r in rows], dtype=np.int64)
        return cls(units, marks, prov, d)


class StabilizingFunctional:
    """Base recipe: subclasses provide ``evaluate`` and ``truncation``.

    ``evaluate(tup, omega)`` sees omega as an (m, d) array that already holds
    the tuple's own points, and returns g, the mark and the stabilization ball.
    """

    arity: int = 1
    d: int = 2

    def evaluate(self, tup: np.ndarray, omega: np.ndarray) -> Evaluation:
        raise NotImplementedError

    def truncation(self, tup: np.ndarray) -> Ball:
        raise NotImplementedError

    def max_truncation_radius(self) -> float:
        raise NotImplementedError

    def tuple_diameter(self) -> float:
        """Upper bound on pairwise distances inside tuples that can have g = 1."""
        return 0.0

    def g(self, tup, omega) -> bool:
        return self.evaluate(np.atleast_2d(tup), np.atleast_2d(omega)).g

    def f(self, tup, omega) -> tuple:
        return self.evaluate(np.atleast_2d(tup), np.atleast_2d(omega)).mark

    def region(self, tup, omega) -> Ball:
        return self.evaluate(np.atleast_2d(tup), np.atleast_2d(omega)).region

    def gtilde(self, tup, omega) -> bool:
        tup = np.atleast_2d(tup)
        ev = self.evaluate(tup, np.atleast_2d(omega))
        return ev.g and self.truncation(tup).contains(ev.region)

    def xi(self, omega: PointConfiguration) -> MarkedConfiguration:
        return xi_bruteforce(self, omega)


def xi_bruteforce(F: StabilizingFunctional, omega: PointConfiguration) -> MarkedConfiguration:
    """Marked process by enumerating every unordered tuple of distinct indices."""
    pts = omega.points
    units, marks, prov = [], [], []
    for idx in itertools.combinations(range(len(pts)), F.arity):
        ev = F.evaluate(pts[list(idx)], pts)
        if ev.g:
            units.append(ev.mark[0])
            marks.append(ev.mark[1])
            prov.append(idx)
    if not marks:
        return MarkedConfiguration.empty(omega.d, F.arity)
    return MarkedConfiguration(np.array(units), np.array(marks), np.array(prov), omega.d).sorted()


def eval_xi(F: StabilizingFunctional, omega: PointConfiguration) -> MarkedConfiguration:
    return F.xi(omega)


# ---------------------------------------------------------------- k-NN balls


@dataclass(frozen=True)
class KnnParams:
    k: int
    n: float
    b0: float = 0.0
    b: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.n < 3:
            raise ValueError("n must be at least 3")

    @property
    def a_n(self) -> float:
        n, k = self.n, self.k
        return math.log(n) + (k - 1) * math.log(math.log(n)) - gammaln(k)

    @property
    def b_trunc(self) -> float:
        return math.log(self.n) if self.b is None else self.b


class KnnFunctional(StabilizingFunctional):
    """Exceedances of the scaled k-NN ball mass n K(B_{R_k(x)}(x)) - a_n over b0.

    ``K`` is the probability measure of the points; the underlying process
    has intensity n K. Ball masses beyond the admissible radius saturate at
    n K(torus), which only affects marks far outside the range of interest.
    """

    arity = 1

    def __init__(self, params: KnnParams, K: IntensityMeasure):
        if not K.is_probability():
            raise ValueError("K must be a probability measure")
        if params.b_trunc <= params.b0:
            raise ValueError("truncation level b must exceed b0")
        self.params = params
        self.K = K
        self.d = K.d
        self._const_r: dict[float, float] = {}

    def mass(self, x, r: float) -> float:
        n = self.params.n
        if not math.isfinite(r) or 2 * r >= 1:
            return n * self.K.total_mass
        if self.K.kind == "constant":
            return n * self.K.lam_max * unit_ball_volume(self.d) * r**self.d
        return n * ball_measure(self.K, x, r)

    def mark_of(self, x, r: float) -> float:
        return self.mass(x, r) - self.params.a_n

    def radius(self, x, u: float) -> float:
        """r_n(x, u): smallest radius whose ball has n K-mass a_n + u."""
        target = self.params.a_n + u
        if self.K.kind == "constant":
            if u not in self._const_r:
                self._const_r[u] = radius_for_mass(self.K, x, target, scale=self.params.n)
            return self._const_r[u]
        return radius_for_mass(self.K, x, target, scale=self.params.n)

    def truncation(self, tup) -> Ball:
        x = np.atleast_2d(tup)[0]
        return Ball(x, self.radius(x, self.params.b_trunc))

    def max_truncation_radius(self) -> float:
        target = self.params.a_n + self.params.b_trunc
        r = (target / (self.params.n * self.K.lam_min * unit_ball_volume(self.d))) ** (1 / self.d)
        return min(r, R_ADMISSIBLE)

    def knn_radius(self, x, omega: np.ndarray) -> float:
        k = self.params.k
        if len(omega) == 0:
            return math.inf
        dist = np.atleast_1d(torus_distance(omega, x))
        dist = dist[dist > 0]
        if len(dist) < k:
            return math.inf
        return float(np.partition(dist, k - 1)[k - 1])

    def evaluate(self, tup, omega) -> Evaluation:
        x = np.atleast_2d(tup)[0]
        R = self.knn_radius(x, omega)
        m = self.mark_of(x, R)
        return Evaluation(bool(m > self.params.b0), (x, m), Ball(x, R))

    def xi(self, omega: PointConfiguration, with_all: bool = False) -> MarkedConfiguration:
        """All atoms with mark above b0 (every point's atom when ``with_all``)."""
        pts = omega.points
        n = len(pts)
        if n == 0:
            return MarkedConfiguration.empty(omega.d)
        R = np.full(n, math.inf)
        if n > self.params.k:
            idx = GridIndex(pts)
            R = idx.knn_or_inf(pts, self.params.k)
        marks = self.marks_from_radii(pts, R)
        keep = np.ones(n, bool) if with_all else marks > self.params.b0
        ids = np.nonzero(keep)[0]
        return MarkedConfiguration(pts[ids], marks[ids], ids[:, None], omega.d)

    def marks_from_radii(self, pts, R) -> np.ndarray:
        if self.K.kind == "constant":
            n = self.params.n
            mass = np.where(np.isfinite(R) & (2 * R < 1),
                            n * self.K.lam_max * unit_ball_volume(self.d) * np.where(np.isfinite(R), R, 0) ** self.d,
                            n * self.K.total_mass)
            return mass - self.params.a_n
        return np.array([self.mark_of(x, r) for x, r in zip(pts, R)])


def knn_tail_intensity(params: KnnParams, u: float, binomial: bool = False) -> float:
    """Exact L(torus x (u, inf)) for the k-NN marks, valid while r_n(x, u) is admissible."""
    from scipy import stats

    n, k = params.n, params.k
    t = params.a_n + u
    if binomial:
        return float(n * stats.binom.cdf(k - 1, int(n) - 1, t / n))
    return float(n * stats.poisson.cdf(k - 1, t))


def make_knn_functional(params: KnnParams, K: IntensityMeasure) -> KnnFunctional:
    return KnnFunctional(params, K)


# ---------------------------------------------------------- critical points


@dataclass(frozen=True)
class CritParams:
    k: int
    n: float
    d: int = 2
    alpha0: float = 0.0
    R: float | None = None

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise ValueError(f"index k={self.k} must satisfy 1 <= k <= d={self.d}")
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.R_n <= self.r_n:
            raise ValueError("R_n must exceed r_n")

    @property
    def level(self) -> float:
        n = self.n
        return math.log(n) + (self.k - 1) * math.log(math.log(n))

    @property
    def r_n(self) -> float:
        return ((self.level + self.alpha0) / (unit_ball_volume(self.d) * self.n)) ** (1 / self.d)

    @property
    def R_n(self) -> float:
        return math.sqrt(self.r_n) if self.R is None else self.R


class CriticalFunctional(StabilizingFunctional):
    """Index-k critical points of the distance function with radius in (r_n, R_n].

    A (k+1)-tuple counts when its circumsphere exists, the center lies in the
    open hull, the open circumball is empty and the radius is in the window.
    The stabilization region is reported as B_{2 rho}(x_1); the truncation as
    B_{2 R_n}(x_1). Tuples that cannot be lifted unambiguously get g = 0.
    """

    def __init__(self, params: CritParams):
        self.params = params
        self.arity = params.k + 1
        self.d = params.d
        self.unliftable = 0
        self.degenerate = 0

    def alpha(self, rho: float) -> float:
        p = self.params
        return unit_ball_volume(p.d) * p.n * rho**p.d - p.level

    def truncation(self, tup) -> Ball:
        return Ball(np.atleast_2d(tup)[0], 2 * self.params.R_n)

    def max_truncation_radius(self) -> float:
        return 2 * self.params.R_n

    def tuple_diameter(self) -> float:
        return 2 * self.params.R_n

    def sphere(self, tup):
        """(sphere, interior) or None when the tuple has no usable circumsphere."""
        try:
            return geometry.circumsphere(tup)
        except Degenerate:
            self.degenerate += 1
        except LiftAmbiguous:
            self.unliftable += 1
        return None

    def evaluate(self, tup, omega) -> Evaluation:
        tup = np.atleast_2d(tup)
        x1 = tup[0]
        none = Evaluation(False, (x1, math.nan), Ball(x1, 0.0))
        res = self.sphere(tup)
        if res is None:
            return none
        cs, interior = res
        rho = cs.radius
        mark = (cs.center, self.alpha(rho))
        if not interior or not (self.params.r_n < rho <= self.params.R_n):
            return Evaluation(False, mark, Ball(x1, 0.0))
        omega = np.atleast_2d(omega)
        empty = True
        if len(omega):
            dist = np.atleast_1d(torus_distance(omega, cs.center))
            empty = not np.any(dist < rho - TOL.empty_ball_abs * max(1.0, rho))
        return Evaluation(bool(empty), mark, Ball(x1, 2 * rho))

    def xi(self, omega: PointConfiguration, r_hi: float | None = None) -> MarkedConfiguration:
        """Critical points generated by omega; ``r_hi`` overrides R_n."""
        p = self.params
        return critical_points(self, omega, p.r_n, p.R_n if r_hi is None else r_hi)


def critical_points(F: CriticalFunctional, omega: PointConfiguration, r_lo: float, r_hi: float) -> MarkedConfiguration:
    """Atoms of tuples satisfying the index-k criticality predicate with radius in (r_lo, r_hi].

    Candidates are faces of the periodic Delaunay complex; the predicate is
    then checked exactly on the torus, so this agrees with brute force.
    """
    pts = omega.points
    k1 = F.arity
    if len(pts) < k1:
        return MarkedConfiguration.empty(omega.d, k1)
    faces, centers, rho, bary = delaunay_faces(pts, k1)
    # loose prefilter; survivors are re-checked with the exact predicate
    sel = (rho > r_lo * (1 - 1e-9)) & (rho <= r_hi * (1 + 1e-9)) & np.all(bary > -1e-9, axis=1)
    faces, centers, rho = faces[sel], centers[sel], rho[sel]
    if len(faces):
        faces, first = np.unique(faces, axis=0, return_index=True)
        centers, rho = centers[first], rho[first]
        idx = GridIndex(pts)
        inside = idx.count_open(centers, rho * (1 - 1e-9))
        faces = faces[inside == 0]
    units, marks, prov = [], [], []
    for face in faces:
        res = F.sphere(pts[face])
        if res is None:
            continue
        cs, interior = res
        if not interior or not (r_lo < cs.radius <= r_hi):
            continue
        r_open = cs.radius - TOL.empty_ball_abs * max(1.0, cs.radius)
        if idx.count(cs.center[None, :], r_open, strict=True)[0] == 0:
            units.append(cs.center)
            marks.append(F.alpha(cs.radius))
            prov.append(face)
    if not marks:
        return MarkedConfiguration.empty(omega.d, k1)
    return MarkedConfiguration(np.array(units), np.array(marks), np.array(prov), omega.d).sorted()


def covering_radius_bound(pts: np.ndarray) -> float:
    """Upper bound on the radius of the largest empty ball of a torus configuration."""
    n, d = pts.shape
    m = max(2, int(math.ceil(2 * n ** (1 / d))))
    axes = [(np.arange(m) + 0.5) / m] * d
    probes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    near = GridIndex(pts).knn_or_inf(probes, 1, skip_zero=False)
    return float(near.max() + math.sqrt(d) / (2 * m))


def delaunay_faces(pts: np.ndarray, size: int):
    """Faces with ``size`` vertices of the periodic Delaunay complex.

    The configuration is padded with periodic images out to twice a covering
    radius bound, so every face with an empty circumball is present. Returns
    sorted original-index tuples (possibly repeated across images), the
    circumcenters wrapped to the torus, circumradii and barycentric
    coordinates of the centers. Degenerate faces get radius inf.
    """
    n, d = pts.shape
    pad = min(0.5, 2 * covering_radius_bound(pts) + 1e-9)
    imgs, ids = [], []
    for shift in itertools.product((-1.0, 0.0, 1.0), repeat=d):
        P = pts + np.array(shift)
        mask = np.all((P > -pad) & (P < 1 + pad), axis=1)
        imgs.append(P[mask])
        ids.append(np.nonzero(mask)[0])
    allp = np.concatenate(imgs)
    allid = np.concatenate(ids)
    simplices = Delaunay(allp).simplices
    # only faces touching the unit box matter; each torus face has such a copy
    home = np.all((allp >= 0) & (allp < 1), axis=1)
    vert = []
    for c in itertools.combinations(range(d + 1), size):
        f = simplices[:, list(c)]
        vert.append(f[home[f].any(axis=1)])
    vert = np.concatenate(vert)
    centers, rho, bary = simplex_spheres(allp[vert])
    faces = np.sort(allid[vert], axis=1)
    if size > 1:
        ok = np.all(np.diff(faces, axis=1) > 0, axis=1)
        faces, centers, rho, bary = faces[ok], centers[ok], rho[ok], bary[ok]
    return faces, np.mod(centers, 1.0), rho, bary


def simplex_spheres(P: np.ndarray):
    """Circumcenters, radii and barycentric center coordinates of Euclidean simplices (F, m, d)."""
    F, m, d = P.shape
    if m == 1:
        return P[:, 0].copy(), np.zeros(F), np.ones((F, 1))
    V = P[:, 1:] - P[:, :1]
    G = np.einsum("fid,fjd->fij", V, V)
    rhs = 0.5 * np.einsum("fid,fid->fi", V, V)
    a = np.full((F, m - 1), np.nan)
    good = np.abs(np.linalg.det(G)) > 1e-300
    a[good] = np.linalg.solve(G[good], rhs[good][..., None])[..., 0]
    off = np.einsum("fi,fid->fd", np.nan_to_num(a), V)
    rho = np.where(good, np.linalg.norm(off, axis=1), np.inf)
    bary = np.concatenate([1 - a.sum(axis=1, keepdims=True), a], axis=1)
    return P[:, 0] + off, rho, np.nan_to_num(bary, nan=-1.0)


def make_critical_functional(params: CritParams) -> CriticalFunctional:
    return CriticalFunctional(params)


def critical_count(F: CriticalFunctional, omega: PointConfiguration) -> int:
    return len(F.xi(omega))
