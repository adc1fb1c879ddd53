"""Spatial birth-death (Glauber) dynamics whose stationary law is the Poisson process with intensity M."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .discrepancy import Row, count_tv
from .pointproc import IntensityMeasure, PointConfiguration, RngSpec, as_generator, sample_points
from .runner import parallel_map


@dataclass
class GlauberState:
    configuration: PointConfiguration
    clock: float
    birth_rate: float


def _births(M: IntensityMeasure, count: int, gen) -> np.ndarray:
    return sample_points(M, count, gen) if count else np.empty((0, M.d))


def simulate(omega0: PointConfiguration, M: IntensityMeasure, horizon: float, rng) -> PointConfiguration:
    """Configuration at time ``horizon`` started from ``omega0``.

    Exact event-driven simulation: the next event comes after an
    Exp(M(X) + count) time and is a birth with probability M(X) / (M(X) + count),
    otherwise the death of a uniformly chosen particle.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if horizon == 0:
        return omega0
    gen = as_generator(rng)
    m0 = len(omega0)
    alive, nb = _kernels.gillespie(gen, m0, float(M.total_mass), float(horizon))
    # positions do not influence the event sequence, so they are drawn afterwards
    born = _births(M, nb, gen)
    old = alive[alive < m0]
    new = alive[alive >= m0] - m0
    return PointConfiguration(np.concatenate([omega0.points[old], born[new]]), M.d)


def simulate_state(state: GlauberState, M: IntensityMeasure, dt: float, rng) -> GlauberState:
    return GlauberState(simulate(state.configuration, M, dt, rng), state.clock + dt, M.total_mass)


def _split(omega1: PointConfiguration, omega2: PointConfiguration):
    """Common multiset part and the two one-sided remainders (exact coordinates)."""
    c1 = Counter(map(tuple, omega1.points.tolist()))
    c2 = Counter(map(tuple, omega2.points.tolist()))
    common = c1 & c2
    d = omega1.d

    def arr(c):
        rows = [k for k, v in sorted(c.items()) for _ in range(v)]
        return np.array(rows, dtype=float).reshape(-1, d)

    return arr(common), arr(c1 - common), arr(c2 - common)


def simulate_coupled(omega1: PointConfiguration, omega2: PointConfiguration, M: IntensityMeasure,
                     horizon: float, rng) -> tuple[PointConfiguration, PointConfiguration]:
    """Run both chains on shared randomness.

    Births (times, places, lifetimes) are shared, particles present in both
    starting configurations share their death clocks and the remaining
    particles die on independent Exp(1) clocks. Each chain on its own is the
    dynamics of ``simulate``; the symmetric difference at time s consists of
    the surviving initial discrepancies.
    """
    if omega1.d != omega2.d:
        raise ValueError("dimension mismatch")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    gen = as_generator(rng)
    common, only1, only2 = _split(omega1, omega2)
    d = omega1.d
    # unit-rate deaths: a particle present at time 0 survives with its Exp(1) clock
    keep_c = gen.standard_exponential(len(common)) > horizon
    keep_1 = gen.standard_exponential(len(only1)) > horizon
    keep_2 = gen.standard_exponential(len(only2)) > horizon
    # births on [0, horizon] survive when their lifetime outlasts the rest of the run
    nb = gen.poisson(M.total_mass * horizon) if M.total_mass > 0 and horizon > 0 else 0
    t_birth = gen.random(nb) * horizon
    life = gen.standard_exponential(nb)
    born = _births(M, nb, gen)
    born = born[t_birth + life > horizon]
    shared = np.concatenate([common[keep_c], born]).reshape(-1, d)
    a = PointConfiguration(np.concatenate([shared, only1[keep_1]]), d)
    b = PointConfiguration(np.concatenate([shared, only2[keep_2]]), d)
    assert np.array_equal(a.points[: len(shared)], b.points[: len(shared)])
    return a, b


@dataclass
class StationarityReport:
    count_tv: float
    mean_count: float
    target_mean: float
    cells: list[Row] = field(default_factory=list)
    reps: int = 0
    tv_threshold: float = 0.02
    z_threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return max((abs(r.z) for r in self.cells), default=0.0)

    @property
    def passed(self) -> bool:
        return self.count_tv < self.tv_threshold and self.max_abs_z < self.z_threshold


def quadrant_cells(d: int) -> list[tuple]:
    """The 2^d half-boxes of the torus as (lo, hi) pairs."""
    out = []
    for idx in np.ndindex(*([2] * d)):
        lo = tuple(i / 2 for i in idx)
        out.append((lo, tuple(v + 0.5 for v in lo)))
    return out


def stationarity_report(M: IntensityMeasure, horizon: float, reps: int, rng: RngSpec,
                        cells: list[tuple] | None = None, threads: int | None = None,
                        tv_threshold: float = 0.02, z_threshold: float = 4.0) -> StationarityReport:
    """Terminal counts started from empty against Poisson(M(X)(1 - e^{-horizon})), globally and per cell."""
    cells = quadrant_cells(M.d) if cells is None else cells
    scale = 1 - math.exp(-horizon)
    empty = PointConfiguration.empty(M.d)

    def one(i):
        pts = simulate(empty, M, horizon, rng.child(i).generator()).points
        row = [len(pts)]
        for lo, hi in cells:
            row.append(int(np.all((pts >= lo) & (pts < hi), axis=1).sum()))
        return row

    data = np.array(parallel_map(one, range(reps), threads), dtype=np.int64).reshape(reps, 1 + len(cells))
    mean = M.total_mass * scale
    tv = count_tv(data[:, 0], mean, min_samples=min(1000, reps))
    rows = []
    for j, (lo, hi) in enumerate(cells):
        target = M.box_mass(lo, hi) * scale
        emp = float(data[:, j + 1].mean())
        se = math.sqrt(target / reps) if target > 0 else 0.0
        z = (emp - target) / se if se > 0 else (0.0 if emp == target else math.inf)
        rows.append(Row("cell-mean", f"{lo}-{hi}", emp, target, se, z, abs(z) < z_threshold))
    return StationarityReport(tv, float(data[:, 0].mean()), mean, rows, reps, tv_threshold, z_threshold)
