"""Fast built-in checks: worked examples, small brute-force oracles and determinism."""

from __future__ import annotations

import math
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from unittest import mock

import numpy as np

from . import geometry
from .discrepancy import config_dtv, count_tv, gumbel_check
from .dynamics import simulate, simulate_coupled
from .experiments import ConfigError, parse_config, run_experiment
from .functionals import KnnFunctional, KnnParams
from .geometry import ball_measure, torus_distance
from .pointproc import IntensityMeasure, PointConfiguration, RngSpec, ball_count_test, knn_distance, mecke_check
from .stein import MCConfig, PoissonTerms, dtv_intensities, estimate_bounds_binomial, run_term

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _close(a, b, tol=1e-10):
    assert abs(a - b) <= tol * max(1.0, abs(b)), f"{a} != {b}"


@check
def torus_metric():
    _close(torus_distance([0.1, 0.1], [0.9, 0.9]), math.sqrt(0.08))
    _close(torus_distance([0.0, 0.0], [0.5, 0.0]), 0.5)


@check
def circumsphere_examples():
    s = math.sqrt(3) / 2
    cs, inside = geometry.circumsphere(np.array([[0.4, 0.4], [0.5, 0.4], [0.45, 0.4 + 0.1 * s]]))
    _close(cs.radius, 0.1 / math.sqrt(3))
    assert inside
    cs, inside = geometry.circumsphere(np.array([[0.0, 0.0], [0.2, 0.0], [0.0, 0.2]]))
    _close(cs.radius, math.sqrt(0.02))
    assert np.allclose(cs.center, [0.1, 0.1], atol=1e-12), f"center {cs.center}"
    assert not inside


@check
def circumsphere_equidistant():
    gen = RngSpec(11).generator()
    for _ in range(300):
        d = int(gen.integers(2, 4))
        k = int(gen.integers(1, d + 1))
        base = gen.random(d)
        tup = geometry.wrap(base + 0.1 * (gen.random((k + 1, d)) - 0.5))
        try:
            cs, _ = geometry.circumsphere(tup)
        except (geometry.Degenerate, geometry.LiftAmbiguous):
            continue
        dist = torus_distance(tup, cs.center)
        assert np.allclose(dist, cs.radius, rtol=1e-8, atol=1e-12), "circumcenter not equidistant"


@check
def knn_bruteforce():
    gen = RngSpec(12).generator()
    for _ in range(200):
        d = int(gen.integers(1, 4))
        omega = PointConfiguration(gen.random((int(gen.integers(5, 40)), d)), d)
        x = gen.random(d)
        k = int(gen.integers(1, 5))
        dist = np.sort(torus_distance(omega.points, x))
        assert knn_distance(x, omega, k) == dist[k - 1]


@check
def ball_measures():
    K = IntensityMeasure.constant(3.0, 2)
    _close(ball_measure(K, [0.2, 0.3], 0.1), 3.0 * math.pi * 0.01)
    C = IntensityMeasure.cosine(0.5, 1, 1.0)
    # 1 + 0.5 cos(2 pi x) over [-r, r]: 2r + sin(2 pi r) / (2 pi)
    _close(ball_measure(C, [0.0], 0.2), 0.4 + math.sin(0.4 * math.pi) / (2 * math.pi), 1e-6)


@check
def multiset_distances():
    a, b, c = [0.1, 0.1], [0.2, 0.2], [0.3, 0.3]
    w1 = PointConfiguration(np.array([a, a, b]), 2)
    w2 = PointConfiguration(np.array([a, b, c]), 2)
    assert config_dtv(w1, w2) == 1
    assert config_dtv(w1, w1) == 0
    assert config_dtv(PointConfiguration(np.array([a]), 2), w2) == 2


@check
def count_law_examples():
    _close(count_tv([0] * 1000, 5.0), 1 - math.exp(-5), 1e-12)
    assert count_tv([0] * 1000, 1e-9) < 1e-8
    rep = gumbel_check([0.5] * 10, [0.0, 1.0])
    _close(rep.rows[0].target, math.exp(-1))
    _close(rep.rows[1].target, math.exp(-math.exp(-1)))


@check
def dtv_identity():
    assert dtv_intensities(lambda u: math.exp(-u), lambda u: math.exp(-u), 0.0, 30.0) == 0.0


@check
def dynamics_examples():
    M = IntensityMeasure.constant(5.0, 2)
    w = PointConfiguration(RngSpec(13).generator().random((4, 2)), 2)
    assert simulate(w, M, 0.0, RngSpec(1).generator()) == w
    a, b = simulate_coupled(w, w, M, 3.0, RngSpec(2).generator())
    assert a == b
    m = 10
    start = PointConfiguration(np.random.default_rng(0).random((m, 2)), 2)
    zero = IntensityMeasure.constant(0.0, 2)
    counts = [len(simulate(start, zero, 1.0, RngSpec(3, (i,)).generator())) for i in range(4000)]
    assert max(counts) <= m
    mean, se = np.mean(counts), np.std(counts) / math.sqrt(len(counts))
    assert abs(mean - m * math.exp(-1)) <= 4 * se, "pure-death mean"


@check
def bound_terms_quick():
    n = 1000
    K = IntensityMeasure.constant(1.0, 2)
    F = KnnFunctional(KnnParams(1, n), K)
    est = run_term(PoissonTerms(F, K.scaled(n)).e1, MCConfig(replicates=2000, seed=5), 1)
    assert abs(est.value - 2 / n) <= 4 * est.se, f"E1 {est.value} vs {2 / n}"

    class Never(KnnFunctional):
        def evaluate(self, tup, omega):
            ev = super().evaluate(tup, omega)
            return type(ev)(False, ev.mark, ev.region)

    rep = estimate_bounds_binomial(Never(KnnParams(1, 200), K), K, 200, MCConfig(replicates=20, seed=1), dtv_lm=0.0)
    assert rep.total == 0.0


@check
def mecke_quick():
    rep = mecke_check(IntensityMeasure.constant(50.0, 2), ball_count_test(0.1), 1000, RngSpec(7))
    assert rep.passed, f"z = {rep.z}"


@check
def config_validation():
    try:
        parse_config("experiment = mecke-check\nreplicates = 0\n")
    except ConfigError as exc:
        assert any(p.startswith("replicates") for p in exc.problems)
    else:
        raise AssertionError("replicates = 0 accepted")


@check
def determinism():
    from .cli import write_outputs

    cfg = parse_config("experiment = glauber-check\nreplicates = 300\ns_grid = 1\n")
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, threads in enumerate((1, 2)):
            out = Path(tmp) / str(i)
            write_outputs(out, cfg, run_experiment(cfg, threads))
            blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert blobs[0] == blobs[1], "outputs differ between runs"


def _flipped_circumsphere(orig):
    def wrong(tup):
        cs, inside = orig(tup)
        tup = np.atleast_2d(tup)
        # reflect the center through the first vertex
        center = geometry.wrap(2 * tup[0] - cs.center)
        return geometry.Circumsphere(center, cs.radius), inside

    return wrong


@contextmanager
def _mutation(name):
    if name is None:
        yield
        return
    if name == "circumsphere":
        with mock.patch.object(geometry, "circumsphere", _flipped_circumsphere(geometry.circumsphere)):
            yield
        return
    raise ValueError(f"unknown mutation {name!r}")


def run_selftest(mutation: str | None = None, out: Path | None = None, stream=sys.stdout) -> int:
    failures = []
    lines = []
    start = time.perf_counter()
    with _mutation(mutation):
        for fn in CHECKS:
            try:
                fn()
                lines.append(f"ok    {fn.__name__}")
            except Exception as exc:  # any failure is reported, not raised
                failures.append(fn.__name__)
                lines.append(f"FAIL  {fn.__name__}: {type(exc).__name__}: {exc}")
    lines.append(f"{len(CHECKS) - len(failures)}/{len(CHECKS)} checks passed")
    text = "\n".join(lines) + "\n"
    stream.write(text)
    stream.write(f"elapsed {time.perf_counter() - start:.1f} s\n")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "selftest.txt").write_text(text)
    return 1 if failures else 0
