"""Flat-torus geometry: metric, lifting, ball measures and circumspheres.

The torus is the unit box [0, 1)^d with periodic boundary. Distances use the
minimal-image convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize, special

from .config import TOL


class GeometryError(ValueError):
    pass


class LiftAmbiguous(GeometryError):
    pass


class BallTooLarge(GeometryError):
    pass


class Degenerate(GeometryError):
    pass


class TargetUnreachable(ValueError):
    pass


class QuadratureNotConverged(RuntimeError):
    pass


def wrap(points):
    """Map coordinates into [0, 1)."""
    out = np.mod(np.asarray(points, dtype=float), 1.0)
    # np.mod can round tiny negatives up to exactly 1.0
    out[out >= 1.0] = 0.0
    return out


def torus_delta(p, q):
    """Minimal-image displacement q - p, componentwise in [-1/2, 1/2]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"dimension mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    diff = q - p
    return diff - np.round(diff)


def torus_distance(p, q):
    """Torus distance; broadcasts over leading axes."""
    delta = torus_delta(p, q)
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    return float(dist) if np.ndim(dist) == 0 else dist


def torus_lift(points, anchor, window=None):
    """Lift torus points to R^d next to ``anchor``.

    Each output is the unique integer shift of the input lying within
    ``window`` (default 1/4) of the anchor's canonical coordinates.
    """
    window = TOL.lift_window if window is None else window
    anchor = np.asarray(anchor, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    delta = torus_delta(anchor, points)
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    if np.any(dist > window):
        raise LiftAmbiguous(
            f"point at torus distance {dist.max():.6g} > {window} from anchor"
        )
    return anchor + delta


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _check_radius(r: float) -> None:
    if r < 0:
        raise ValueError(f"negative radius {r}")
    if 2 * r >= 1:
        raise BallTooLarge(f"ball of radius {r} wraps onto itself")


def ball_volume(r: float, d: int) -> float:
    _check_radius(r)
    return unit_ball_volume(d) * r**d


@lru_cache(maxsize=None)
def _sphere_rule(d: int, order: int):
    """Directions and weights integrating over the unit sphere S^{d-1}.

    Hyperspherical coordinates: Gauss-Legendre in the polar angles,
    trapezoid in the azimuth. Weights sum to the sphere's surface area.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    phi = 2 * math.pi * (np.arange(2 * order) + 0.5) / (2 * order)
    dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    wts = np.full(2 * order, 2 * math.pi / (2 * order))
    t, w = leggauss(order)
    theta = (t + 1) * (math.pi / 2)
    w = w * (math.pi / 2)
    for j in range(2, d):
        # add one polar angle with Jacobian sin^{j-1}
        s, c = np.sin(theta), np.cos(theta)
        dirs = np.concatenate(
            [np.einsum("i,kd->ikd", s, dirs), np.broadcast_to(c[:, None, None], (order, len(dirs), 1))],
            axis=2,
        ).reshape(-1, j + 1)
        wts = np.outer(w * s ** (j - 1), wts).ravel()
    return dirs, wts


def _ball_quadrature(density, x, r, d, order):
    t, w = leggauss(order)
    s = (t + 1) * (r / 2)
    ws = w * (r / 2) * s ** (d - 1)
    dirs, wd = _sphere_rule(d, order)
    pts = x[None, None, :] + s[:, None, None] * dirs[None, :, :]
    vals = density(wrap(pts.reshape(-1, d))).reshape(len(s), len(dirs))
    return float(ws @ vals @ wd)


def ball_measure(K, x, r: float) -> float:
    """Mass of the closed ball B_r(x) under the intensity measure ``K``."""
    _check_radius(r)
    if r == 0:
        return 0.0
    d = K.d
    if K.kind == "constant":
        return K.lam_max * unit_ball_volume(d) * r**d
    x = np.asarray(x, dtype=float)
    order = 8
    prev = _ball_quadrature(K.density, x, r, d, order)
    while True:
        order *= 2
        n_eval = order * (2 * order) * order ** max(d - 2, 0) if d > 1 else 2 * order
        if n_eval > TOL.quad_max_nodes:
            raise QuadratureNotConverged(f"ball quadrature at r={r} did not reach {TOL.quad_rel}")
        cur = _ball_quadrature(K.density, x, r, d, order)
        if abs(cur - prev) <= TOL.quad_rel * abs(cur):
            return cur
        prev = cur


# admissible radii stay strictly below 1/2
R_ADMISSIBLE = 0.5 * (1 - 1e-12)


def radius_for_mass(K, x, target: float, scale: float = 1.0) -> float:
    """Smallest r with ``scale * ball_measure(K, x, r) >= target``."""
    if target <= 0:
        return 0.0
    if K.kind == "constant":
        if K.lam_max == 0:
            raise TargetUnreachable("zero intensity")
        r = (target / (scale * K.lam_max * unit_ball_volume(K.d))) ** (1 / K.d)
        if r > R_ADMISSIBLE:
            raise TargetUnreachable(f"target {target} needs radius {r} >= 1/2")
        # closed form can land one ulp short of the target
        while scale * ball_measure(K, x, r) < target:
            r = np.nextafter(r, 1.0)
        return float(r)
    def excess(r):
        return scale * ball_measure(K, x, r) - target

    hi = R_ADMISSIBLE
    if excess(hi) < 0:
        raise TargetUnreachable(f"target {target} exceeds admissible ball mass")
    # the density bounds bracket the root tightly
    om = unit_ball_volume(K.d)
    lo = min((target / (scale * K.lam_max * om)) ** (1 / K.d), hi)
    hi = min((target / (scale * K.lam_min * om)) ** (1 / K.d), hi) if K.lam_min > 0 else hi
    if excess(lo) >= 0:
        return float(lo)
    if excess(hi) < 0:
        hi = R_ADMISSIBLE
    r = optimize.brentq(excess, lo, hi, xtol=TOL.radius_abs, rtol=4 * np.finfo(float).eps)
    while excess(r) < 0:
        r += TOL.radius_abs
    return float(min(r, hi))


@dataclass(frozen=True)
class Circumsphere:
    center: np.ndarray
    radius: float


def circumsphere(tup) -> tuple[Circumsphere, bool]:
    """Circumsphere of k+1 torus points within their affine hull.

    Returns the sphere and whether its center lies in the open convex hull
    of the points (all barycentric coordinates above 1e-10).
    """
    tup = np.atleast_2d(np.asarray(tup, dtype=float))
    m, d = tup.shape
    k = m - 1
    if k < 1:
        raise ValueError("need at least two points")
    lifted = torus_lift(tup, tup[0])
    if k > d:
        raise Degenerate(f"{m} points cannot be in general position in R^{d}")
    V = lifted[1:] - lifted[0]
    G = V @ V.T
    if np.linalg.cond(G) > TOL.gram_condition_max:
        raise Degenerate("tuple not in general position")
    a = np.linalg.solve(G, 0.5 * np.einsum("ij,ij->i", V, V))
    center = lifted[0] + a @ V
    radius = float(np.linalg.norm(center - lifted[0]))
    if radius >= TOL.lift_window:
        raise LiftAmbiguous(f"circumradius {radius} outside the lifting window")
    bary = np.concatenate([[1.0 - a.sum()], a])
    interior = bool(np.all(bary > TOL.interior_barycentric))
    return Circumsphere(wrap(center), radius), interior


def _cap_volume(r: float, h: float, d: int) -> float:
    # volume of the part of a d-ball of radius r beyond a plane at depth h from its surface
    if h <= 0:
        return 0.0
    if h >= 2 * r:
        return unit_ball_volume(d) * r**d
    if h > r:
        return unit_ball_volume(d) * r**d - _cap_volume(r, 2 * r - h, d)
    x = (2 * r * h - h * h) / (r * r)
    return 0.5 * unit_ball_volume(d) * r**d * float(special.betainc((d + 1) / 2, 0.5, x))


def lens_measure(K, c1, r1: float, c2, r2: float) -> float:
    """Mass of B_{r1}(c1) intersected with B_{r2}(c2).

    Requires r1 + r2 < 1/2 so the two balls meet in at most one lens.
    """
    _check_radius(r1)
    _check_radius(r2)
    if r1 + r2 >= 0.5:
        raise BallTooLarge(f"balls of radii {r1}, {r2} can meet around the torus")
    t = torus_distance(c1, c2)
    if t >= r1 + r2:
        return 0.0
    if t <= abs(r1 - r2):
        c, r = (c1, r1) if r1 <= r2 else (c2, r2)
        return ball_measure(K, c, r)
    d = K.d
    if K.kind == "constant":
        h1 = (t * t + r1 * r1 - r2 * r2) / (2 * t)
        return K.lam_max * (_cap_volume(r1, r1 - h1, d) + _cap_volume(r2, r2 - (t - h1), d))
    c1 = np.asarray(c1, dtype=float)
    c2l = c1 + torus_delta(c1, c2)
    e = (c2l - c1) / t
    h1 = (t * t + r1 * r1 - r2 * r2) / (2 * t)
    order = 8
    prev = None
    while True:
        cur = _cap_mass(K, c1, e, r1, h1, order) + _cap_mass(K, c2l, -e, r2, t - h1, order)
        if prev is not None and abs(cur - prev) <= TOL.quad_rel * abs(cur):
            return cur
        prev = cur
        order *= 2
        if order ** max(d, 2) > TOL.quad_max_nodes:
            raise QuadratureNotConverged(f"lens quadrature did not reach {TOL.quad_rel}")


def _cap_mass(K, c, e, r, h, order):
    """Mass of {z in B_r(c) : (z - c).e >= h}, integrating over the polar angle from e."""
    d = K.d
    t, w = leggauss(order)
    if d == 1:
        s = h + (t + 1) * (r - h) / 2
        vals = K.density(wrap(c[None, :] + s[:, None] * e[None, :]))
        return float(np.sum(w * (r - h) / 2 * vals))
    psi_max = math.acos(max(-1.0, min(1.0, h / r)))
    psi = (t + 1) * psi_max / 2
    wpsi = w * psi_max / 2 * r * np.sin(psi)
    # orthonormal directions perpendicular to e
    q, _ = np.linalg.qr(np.column_stack([e, np.eye(d)]))
    perp = q[:, 1:d].T
    if d == 2:
        offs = t[:, None] * perp[0][None, :]
        inner_w = w
    else:
        dirs, wd = _sphere_rule(d - 1, order)
        s = (t + 1) / 2
        ws = w / 2 * s ** (d - 2)
        offs = (s[:, None, None] * (dirs @ perp)[None, :, :]).reshape(-1, d)
        inner_w = np.outer(ws, wd).ravel()
    rad = r * np.sin(psi)
    axis = c[None, :] + (r * np.cos(psi))[:, None] * e[None, :]
    pts = axis[:, None, :] + rad[:, None, None] * offs[None, :, :]
    vals = K.density(wrap(pts.reshape(-1, d))).reshape(len(psi), -1)
    # cross-section of radius rad contributes rad^(d-1) times the unit-ball rule
    return float(np.sum(wpsi * rad ** (d - 1) * (vals @ inner_w)))
