import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steinpp.geometry import ball_measure, torus_distance
from steinpp.pointproc import (
    GridIndex,
    IntensityMeasure,
    NotAProbability,
    NotEnoughPoints,
    PointConfiguration,
    RngSpec,
    Window,
    ball_count_test,
    knn_distance,
    mecke_check,
    sample_binomial,
    sample_points,
    sample_poisson,
    sample_window,
    tilt_profiles,
)

unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)


def configs(d, min_size=0, max_size=40):
    return arrays(float, st.tuples(st.integers(min_size, max_size), st.just(d)), elements=unit)


def test_rng_spec_streams():
    a = RngSpec(3, (1, 2)).generator().random(5)
    b = RngSpec(3).child(1, 2).generator().random(5)
    c = RngSpec(3, (1, 3)).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_measure_validation():
    with pytest.raises(ValueError):
        IntensityMeasure.constant(-1.0, 2)
    with pytest.raises(ValueError):
        IntensityMeasure.cosine(1.2, 2, 1.0)
    with pytest.raises(NotAProbability):
        sample_binomial(5, IntensityMeasure.constant(2.0, 2), RngSpec(0))


def test_cosine_measure_masses():
    C = IntensityMeasure.cosine(0.5, 2, 3.0)
    assert C.box_mass([0, 0], [1, 1]) == pytest.approx(3.0, rel=1e-10)
    assert C.probability().is_probability()
    G = IntensityMeasure.general(lambda p: 1 + 0.5 * np.cos(2 * np.pi * p[:, 0]), 0.5, 1.5, 2)
    assert G.total_mass == pytest.approx(1.0, rel=1e-6)


def test_poisson_and_binomial_counts():
    K = IntensityMeasure.constant(40.0, 2)
    counts = [len(sample_poisson(K, RngSpec(1, (i,)))) for i in range(3000)]
    assert abs(np.mean(counts) - 40) < 4 * math.sqrt(40 / 3000)
    assert abs(np.var(counts) / 40 - 1) < 0.1
    assert len(sample_binomial(17, K.probability(), RngSpec(2))) == 17


def test_inhomogeneous_sampler_follows_density():
    C = IntensityMeasure.cosine(0.8, 1, 1.0)
    pts = sample_points(C, 40_000, RngSpec(4))[:, 0]
    # P(x < 1/4) = 1/4 + 0.8 / (2 pi)
    p = 0.25 + 0.8 / (2 * math.pi)
    assert abs(np.mean(pts < 0.25) - p) < 4 * math.sqrt(p * (1 - p) / len(pts))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(configs(d, 2), arrays(float, (d,), elements=unit))),
       st.integers(1, 4))
def test_grid_knn_matches_bruteforce(data, k):
    pts, x = data
    omega = PointConfiguration(pts, pts.shape[1])
    dist = np.sort(np.atleast_1d(torus_distance(pts, x)))
    dist = dist[dist > 0]
    if len(dist) < k:
        with pytest.raises(NotEnoughPoints):
            knn_distance(x, omega, k)
    else:
        assert knn_distance(x, omega, k) == dist[k - 1]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: configs(d, 1)), st.floats(0.01, 0.45))
def test_grid_counts_match_bruteforce(pts, r):
    idx = GridIndex(pts)
    q = pts[: min(5, len(pts))]
    brute = [(torus_distance(pts, x) <= r).sum() for x in q]
    assert idx.count(q, r).tolist() == [int(b) for b in brute]


@given(st.integers(1, 3).flatmap(lambda d: st.tuples(st.just(d), configs(d))))
def test_text_roundtrip(args):
    d, pts = args
    omega = PointConfiguration(pts, d)
    assert PointConfiguration.from_text(omega.to_text()) == omega


def test_multiset_difference():
    a, b, c = [0.1, 0.1], [0.2, 0.2], [0.3, 0.3]
    w1 = PointConfiguration(np.array([a, a, b]), 2)
    w2 = PointConfiguration(np.array([a, b, c]), 2)
    assert w1.difference(w2) == PointConfiguration(np.array([a]), 2)
    assert w1.symmetric_difference_size(w2) == 2


def test_mecke_identity_small():
    K = IntensityMeasure.constant(20.0, 2)
    rep = mecke_check(K, ball_count_test(0.1), 2000, RngSpec(9))
    assert rep.rhs == pytest.approx(20 * (1 + 20 * math.pi * 0.01), rel=0.05)
    assert rep.passed


def test_window_masses_partition_the_union():
    K = IntensityMeasure.cosine(0.3, 2, 50.0)
    c1, c2 = np.array([0.3, 0.3]), np.array([0.38, 0.3])
    w = Window.build(K, [(c1, 0.1), (c2, 0.1)], shells=4)
    union = ball_measure(K, c1, 0.1) + ball_measure(K, c2, 0.1)
    from steinpp.geometry import lens_measure
    union -= lens_measure(K, c1, 0.1, c2, 0.1)
    assert w.mass == pytest.approx(union, rel=1e-6)
    assert np.all(w.masses >= 0)
    single = Window.build(K, [(c1, 0.1)], shells=4)
    assert single.masses.sum() == pytest.approx(ball_measure(K, c1, 0.1), rel=1e-9)


def test_tilt_profiles_shape():
    prof = tilt_profiles(3, (1.0, 0.5))
    assert prof.shape[1] == 3
    assert [1.0, 1.0, 1.0] in prof.tolist()
    assert [0.5, 0.5, 1.0] in prof.tolist()


@pytest.mark.parametrize("binomial", [False, True])
def test_window_likelihood_ratio_is_unbiased(binomial):
    K = IntensityMeasure.constant(200.0, 2)
    w = Window.build(K, [(np.array([0.5, 0.5]), 0.1)], shells=4)
    prof = tilt_profiles(4, (1.0, 0.25, 1 / 16))
    lr, lr_count, empty = [], [], []
    for i in range(20_000):
        gen = RngSpec(5, (i,)).generator()
        pts, log_lr = sample_window(K, w, gen, prof, m=200 if binomial else None)
        v = math.exp(log_lr)
        lr.append(v)
        lr_count.append(v * len(pts))
        empty.append(v * (len(pts) == 0))
    for vals, target in ((lr, 1.0), (lr_count, w.mass)):
        m, se = np.mean(vals), np.std(vals) / math.sqrt(len(vals))
        assert abs(m - target) < 4 * se + 1e-12
    p_empty = (1 - w.mass / K.total_mass) ** 200 if binomial else math.exp(-w.mass)
    m, se = np.mean(empty), np.std(empty) / math.sqrt(len(empty))
    assert abs(m - p_empty) < 4 * se
    assert m > 0


def test_grid_knn_bulk_against_bruteforce():
    gen = RngSpec(30).generator()
    pts = gen.random((1000, 2))
    q = gen.random((1000, 2))
    idx = GridIndex(pts)
    for k in (1, 3):
        brute = np.sort(torus_distance(pts[None, :, :], q[:, None, :]), axis=1)[:, k - 1]
        assert np.array_equal(idx.knn(q, k), brute)


def test_duplicates_tie_by_distance():
    p = [0.3, 0.3]
    omega = PointConfiguration(np.array([p, p, [0.9, 0.9]]), 2)
    x = np.array([0.35, 0.3])
    assert knn_distance(x, omega, 1) == knn_distance(x, omega, 2) == pytest.approx(0.05)
    # a query sitting on duplicates skips all of them
    assert knn_distance(np.array(p), omega, 1) == torus_distance(p, [0.9, 0.9])


def test_trivial_samples():
    assert len(sample_poisson(IntensityMeasure.constant(0.0, 2), RngSpec(0))) == 0
    K = IntensityMeasure.constant(1.0, 2)
    assert len(sample_binomial(0, K, RngSpec(0))) == 0
    assert all(len(sample_binomial(7, K, RngSpec(0, (i,)))) == 7 for i in range(20))
    a = sample_poisson(K.scaled(30), RngSpec(12, (4,)))
    b = sample_poisson(K.scaled(30), RngSpec(12, (4,)))
    assert a.to_text() == b.to_text()


def test_void_probability():
    m, r, reps = 20.0, 0.1, 100_000
    gen = RngSpec(31).generator()
    counts = gen.poisson(m, reps)
    empty = np.empty(reps, bool)
    x = np.array([0.5, 0.5])
    for i, c in enumerate(counts):
        pts = sample_points(IntensityMeasure.constant(m, 2), int(c), gen)
        empty[i] = not np.any(torus_distance(pts, x) <= r) if c else True
    p = math.exp(-m * math.pi * r * r)
    assert abs(empty.mean() - p) <= 4 * math.sqrt(p * (1 - p) / reps)


def test_mecke_trivial_cases():
    K = IntensityMeasure.constant(50.0, 2)
    rep = mecke_check(K, lambda pts, omega: np.ones(len(pts)), 500, RngSpec(1))
    assert rep.rhs == 50.0
    assert rep.passed
    zero = mecke_check(IntensityMeasure.constant(0.0, 2), ball_count_test(0.1), 20, RngSpec(1))
    assert zero.lhs == zero.rhs == 0.0


def test_mecke_ball_count_minus_one():
    K = IntensityMeasure.constant(50.0, 2)
    count = ball_count_test(0.1)
    rep = mecke_check(K, lambda pts, omega: count(pts, omega) - 1, 4000, RngSpec(2))
    assert abs(rep.rhs - 50 * 50 * math.pi * 0.01) <= 4 * rep.se_rhs
    assert rep.passed
