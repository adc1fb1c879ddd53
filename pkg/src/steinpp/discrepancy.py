"""Multiset distances between configurations and statistical checks against a Poisson limit."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .functionals import MarkedConfiguration
from .pointproc import IntensityMeasure, PointConfiguration


class TooFewSamples(ValueError):
    pass


MODES = ("provenance", "coordinates")


def _keys(cfg, mode: str) -> Counter:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if isinstance(cfg, PointConfiguration):
        if mode == "provenance":
            raise ValueError("plain configurations carry no provenance")
        return Counter(map(tuple, cfg.points.tolist()))
    if mode == "provenance":
        # the mark stays in the key: a k-NN atom keeps its generating point when its mark changes
        return Counter((*p, m) for p, m in zip(cfg.keys(), cfg.marks.tolist()))
    rows = np.column_stack([cfg.units, cfg.marks]) if len(cfg) else np.empty((0, cfg.d + 1))
    return Counter(map(tuple, rows.tolist()))


def difference_counts(a, b, mode: str = "coordinates") -> tuple[int, int]:
    """(|a minus b|, |b minus a|) as multisets."""
    ka, kb = _keys(a, mode), _keys(b, mode)
    return sum((ka - kb).values()), sum((kb - ka).values())


def config_dtv(a, b, mode: str = "coordinates") -> int:
    """Total variation distance between counting measures: the larger one-sided difference."""
    return max(difference_counts(a, b, mode))


def symmetric_difference_size(a, b, mode: str = "provenance") -> int:
    return sum(difference_counts(a, b, mode))


def _cap(mean: float) -> int:
    return int(math.ceil(mean + 10 * math.sqrt(mean)))


def count_tv(samples: Sequence[int], mean: float, min_samples: int = 1000) -> float:
    """TV between the empirical count law and Poisson(mean) on 0..cap, plus both tails."""
    samples = np.asarray(samples, dtype=np.int64)
    if len(samples) < min_samples:
        raise TooFewSamples(f"{len(samples)} samples, need {min_samples}")
    if mean < 0 or np.any(samples < 0):
        raise ValueError("counts and mean must be nonnegative")
    cap = _cap(mean)
    emp = np.bincount(np.minimum(samples, cap + 1), minlength=cap + 2) / len(samples)
    pois = stats.poisson.pmf(np.arange(cap + 1), mean) if mean > 0 else np.eye(1, cap + 1)[0]
    tail_p = max(1.0 - pois.sum(), 0.0)
    tv = 0.5 * (np.abs(emp[: cap + 1] - pois).sum() + emp[cap + 1] + tail_p)
    return float(min(tv, 1.0))


@dataclass(frozen=True)
class Row:
    test: str
    label: str
    value: float
    target: float
    se: float
    z: float
    passed: bool


@dataclass
class DiscrepancyReport:
    rows: list[Row] = field(default_factory=list)
    samples: int = 0
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        zs = [abs(r.z) for r in self.rows if not math.isnan(r.z)]
        return max(zs) if zs else 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"samples": self.samples, "threshold": self.threshold, "passed": self.passed,
                "max_abs_z": self.max_abs_z, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "label", "value", "target", "se", "z", "passed"])
        for r in self.rows:
            w.writerow([r.test, r.label, repr(r.value), repr(r.target), repr(r.se), repr(r.z), int(r.passed)])
        return buf.getvalue()


def _z(value: float, target: float, se: float) -> float:
    if se > 0:
        return (value - target) / se
    return 0.0 if value == target else math.copysign(math.inf, value - target)


def gumbel_check(max_marks: Sequence[float], b_grid: Sequence[float],
                 M_tail: Callable[[float], float] = lambda b: math.exp(-b),
                 threshold: float = 4.0) -> DiscrepancyReport:
    """Empirical P(max mark <= b) against exp(-M_tail(b)), with binomial standard errors."""
    marks = np.asarray(max_marks, dtype=float)
    if np.any(np.isnan(marks)):
        raise ValueError("marks must not be NaN")
    N = len(marks)
    rep = DiscrepancyReport(samples=N, threshold=threshold)
    for b in b_grid:
        target = math.exp(-M_tail(b))
        emp = float(np.mean(marks <= b)) if N else math.nan
        se = math.sqrt(target * (1 - target) / N) if N else math.inf
        z = _z(emp, target, se)
        rep.rows.append(Row("gumbel", f"b={b:g}", emp, target, se, z, abs(z) <= threshold))
    return rep


@dataclass(frozen=True)
class Cell:
    """Box [lo, hi) of the torus crossed with the mark band (mark_lo, mark_hi]."""

    lo: tuple
    hi: tuple
    mark_lo: float
    mark_hi: float

    @property
    def label(self) -> str:
        lo = ",".join(f"{v:g}" for v in self.lo)
        hi = ",".join(f"{v:g}" for v in self.hi)
        return f"[{lo})-[{hi})x({self.mark_lo:g},{self.mark_hi:g}]"

    def count(self, xi: MarkedConfiguration) -> int:
        return xi.count(self.mark_lo, self.mark_hi, box=(self.lo, self.hi))


def dyadic_cells(d: int, depth: int = 1, bands: Sequence[float] = (0.0, 1.0, math.inf)) -> list[Cell]:
    """2^(depth d) dyadic boxes crossed with consecutive mark bands."""
    m = 2**depth
    cells = []
    for idx in np.ndindex(*([m] * d)):
        lo = tuple(i / m for i in idx)
        hi = tuple((i + 1) / m for i in idx)
        for a, b in zip(bands[:-1], bands[1:]):
            cells.append(Cell(lo, hi, float(a), float(b)))
    return cells


def exponential_cell_mass(lam: IntensityMeasure, cell: Cell) -> float:
    """Mass of a cell under lambda(x) dx e^{-u} du."""
    band = math.exp(-cell.mark_lo) - (0.0 if math.isinf(cell.mark_hi) else math.exp(-cell.mark_hi))
    return lam.box_mass(cell.lo, cell.hi) * band


def cellwise_report(samples: Sequence[MarkedConfiguration], cells: Sequence[Cell],
                    masses: Sequence[float], threshold: float = 4.0,
                    min_samples: int = 10_000) -> DiscrepancyReport:
    """Per-cell count means and variances against Poisson, and pairwise covariances against 0.

    z-scores use the standard errors of the sample mean, variance and
    covariance under independent Poisson cell counts.
    """
    N = len(samples)
    if N < min_samples:
        raise TooFewSamples(f"{N} samples, need {min_samples}")
    counts = np.array([[c.count(xi) for c in cells] for xi in samples], dtype=float)
    mu = np.asarray(masses, dtype=float)
    rep = DiscrepancyReport(samples=N, threshold=threshold)
    mean = counts.mean(axis=0)
    var = counts.var(axis=0, ddof=1)
    for j, c in enumerate(cells):
        se = math.sqrt(mu[j] / N)
        z = _z(mean[j], mu[j], se)
        rep.rows.append(Row("mean", c.label, float(mean[j]), float(mu[j]), se, z, abs(z) <= threshold))
        # variance of the sample variance of Poisson(mu) counts
        se = math.sqrt((mu[j] + 2 * mu[j] ** 2) / N)
        z = _z(var[j], mu[j], se)
        rep.rows.append(Row("variance", c.label, float(var[j]), float(mu[j]), se, z, abs(z) <= threshold))
    cov = np.cov(counts, rowvar=False, ddof=1) if len(cells) > 1 else np.zeros((1, 1))
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            se = math.sqrt(mu[i] * mu[j] / N)
            z = _z(float(cov[i, j]), 0.0, se)
            rep.rows.append(Row("covariance", f"{cells[i].label}|{cells[j].label}", float(cov[i, j]),
                                0.0, se, z, abs(z) <= threshold))
    return rep
