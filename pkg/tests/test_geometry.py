import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steinpp.geometry import (
    BallTooLarge,
    Degenerate,
    LiftAmbiguous,
    TargetUnreachable,
    ball_measure,
    ball_volume,
    circumsphere,
    lens_measure,
    radius_for_mass,
    torus_delta,
    torus_distance,
    torus_lift,
    wrap,
)
from steinpp.pointproc import IntensityMeasure

unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)


def points(d):
    return arrays(float, (d,), elements=unit)


def test_distance_examples():
    assert torus_distance([0.1, 0.1], [0.9, 0.9]) == pytest.approx(math.sqrt(0.08), abs=1e-15)
    assert torus_distance([0.0, 0.0], [0.5, 0.0]) == 0.5
    assert torus_distance([0.25], [0.75]) == 0.5


def test_wrap_stays_in_unit_cube():
    out = wrap(np.array([-1e-18, 1.0, 2.3, -0.7]))
    assert np.all((out >= 0) & (out < 1))
    assert out[2] == pytest.approx(0.3)
    assert out[3] == pytest.approx(0.3)


@settings(max_examples=300)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d), points(d))))
def test_metric_axioms(pqr):
    p, q, r = pqr
    assert torus_distance(p, p) == 0.0
    assert torus_distance(p, q) == torus_distance(q, p)
    assert torus_distance(p, r) <= torus_distance(p, q) + torus_distance(q, r) + 1e-12
    assert torus_distance(p, q) <= math.sqrt(len(p)) / 2 + 1e-12


@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d))))
def test_delta_is_minimal_image(pq):
    p, q = pq
    delta = torus_delta(p, q)
    assert np.all(np.abs(delta) <= 0.5)
    assert np.allclose(wrap(p + delta), wrap(q), atol=1e-12) or np.allclose(
        np.abs(wrap(p + delta) - wrap(q)), 1.0, atol=1e-12)


def test_lift_rejects_far_points():
    with pytest.raises(LiftAmbiguous):
        torus_lift(np.array([[0.0, 0.0], [0.4, 0.0]]), [0.0, 0.0])
    lifted = torus_lift(np.array([[0.95, 0.5]]), [0.05, 0.5])
    assert lifted[0, 0] == pytest.approx(-0.05)


def test_circumsphere_equilateral():
    s = math.sqrt(3) / 2
    cs, inside = circumsphere(np.array([[0.4, 0.4], [0.5, 0.4], [0.45, 0.4 + 0.1 * s]]))
    assert cs.radius == pytest.approx(0.1 / math.sqrt(3), abs=1e-12)
    assert np.allclose(cs.center, [0.45, 0.4 + 0.1 / (2 * math.sqrt(3))], atol=1e-12)
    assert inside


def test_circumsphere_right_triangle_is_on_the_hull():
    cs, inside = circumsphere(np.array([[0.0, 0.0], [0.2, 0.0], [0.0, 0.2]]))
    assert cs.radius == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert np.allclose(cs.center, [0.1, 0.1], atol=1e-12)
    assert not inside


def test_circumsphere_pair_across_the_seam():
    cs, inside = circumsphere(np.array([[0.95, 0.5], [0.05, 0.5]]))
    assert cs.radius == pytest.approx(0.05, abs=1e-12)
    assert torus_distance(cs.center, [0.0, 0.5]) < 1e-12
    assert inside


def test_circumsphere_degenerate():
    with pytest.raises(Degenerate):
        circumsphere(np.array([[0.1, 0.1], [0.15, 0.15], [0.2, 0.2]]))
    with pytest.raises(Degenerate):
        circumsphere(np.array([[0.1, 0.1], [0.2, 0.1], [0.1, 0.2], [0.2, 0.2]]))


@settings(max_examples=200)
@given(st.integers(2, 3).flatmap(
    lambda d: st.tuples(st.just(d), st.integers(1, d), points(d),
                        arrays(float, (d + 1, d), elements=st.floats(-0.05, 0.05)))))
def test_circumcenter_equidistant(args):
    d, k, base, offs = args
    tup = wrap(base + offs[: k + 1])
    try:
        cs, _ = circumsphere(tup)
    except (Degenerate, LiftAmbiguous):
        return
    assert np.allclose(torus_distance(tup, cs.center), cs.radius, rtol=1e-8, atol=1e-12)


def test_ball_volume_guard():
    assert ball_volume(0.1, 2) == pytest.approx(math.pi * 0.01)
    with pytest.raises(BallTooLarge):
        ball_volume(0.5, 2)


def test_ball_measure_cosine_one_dim():
    C = IntensityMeasure.cosine(0.5, 1, 1.0)
    expect = 0.4 + math.sin(0.4 * math.pi) / (2 * math.pi)
    assert ball_measure(C, [0.0], 0.2) == pytest.approx(expect, rel=1e-6)


def test_ball_measure_cosine_two_dim_against_grid():
    C = IntensityMeasure.cosine(0.5, 2, 1.0)
    x, r = np.array([0.3, 0.7]), 0.15
    g = (np.arange(2000) + 0.5) / 2000
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = torus_distance(pts, x) <= r
    grid = C.density(pts[inside]).sum() / 2000**2
    assert ball_measure(C, x, r) == pytest.approx(grid, rel=2e-3)


def test_lens_measure_constant():
    K = IntensityMeasure.constant(1.0, 2)
    r, dist = 0.1, 0.1
    exact = 2 * r * r * math.acos(dist / (2 * r)) - dist / 2 * math.sqrt(4 * r * r - dist * dist)
    assert lens_measure(K, [0.5, 0.5], r, [0.6, 0.5], r) == pytest.approx(exact, rel=1e-8)
    assert lens_measure(K, [0.1, 0.1], r, [0.5, 0.5], r) == 0.0


def test_radius_for_mass_inverts_ball_measure():
    K = IntensityMeasure.constant(1.0, 2)
    r = radius_for_mass(K, [0.2, 0.2], 5.0, scale=1000)
    assert 1000 * math.pi * r * r == pytest.approx(5.0, rel=1e-9)
    with pytest.raises(TargetUnreachable):
        radius_for_mass(K, [0.2, 0.2], 2000.0, scale=1000)


def test_triangle_inequality_bulk():
    gen = np.random.default_rng(0)
    for d in (1, 2, 3):
        p, q, r = gen.random((3, 10_000, d))
        assert np.all(torus_distance(p, r) <= torus_distance(p, q) + torus_distance(q, r) + 1e-12)


@settings(max_examples=200)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(
    points(d), arrays(float, (5, d), elements=st.floats(-0.07, 0.07)))))
def test_lift_preserves_distances(args):
    anchor, offs = args
    pts = wrap(anchor + offs)
    lifted = torus_lift(pts, pts[0])
    for i in range(len(pts)):
        for j in range(i):
            assert abs(np.linalg.norm(lifted[i] - lifted[j]) - torus_distance(pts[i], pts[j])) <= 1e-12


def test_circumsphere_midpoint():
    cs, inside = circumsphere(np.array([[0.5, 0.5], [0.5, 0.6]]))
    assert np.allclose(cs.center, [0.5, 0.55], atol=1e-12)
    assert cs.radius == pytest.approx(0.05, abs=1e-12)
    assert inside


@settings(max_examples=40, deadline=None)
@given(points(2), st.floats(0.5, 40.0))
def test_radius_for_mass_bracket_cosine(x, t):
    C = IntensityMeasure.cosine(0.4, 2, 1.0)
    n = 1000
    r = radius_for_mass(C, x, t, scale=n)
    assert t <= n * ball_measure(C, x, r) <= t + 1e-6 * n
