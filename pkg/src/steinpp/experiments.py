"""Experiment configurations and runners behind the command line."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discrepancy import count_tv, gumbel_check, symmetric_difference_size
from .dynamics import simulate_coupled, stationarity_report
from .functionals import (
    CriticalFunctional,
    CritParams,
    KnnFunctional,
    KnnParams,
    knn_tail_intensity,
)
from .pointproc import (
    IntensityMeasure,
    PointConfiguration,
    RngSpec,
    ball_count_test,
    mecke_check,
    sample_binomial,
    sample_poisson,
)
from .runner import parallel_map
from .stein import MCConfig, estimate_bounds_binomial, estimate_bounds_poisson

EXPERIMENTS = ("knn-poisson", "knn-binomial", "critical-points", "glauber-check", "mecke-check", "bounds")
B_POLICIES = ("log-n", "a-n", "explicit")
FORMATS = ("csv", "json")

# stream namespace per experiment, so experiments never share random numbers
_CODES = {name: i + 1 for i, name in enumerate(EXPERIMENTS)}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    d: int = 2
    k: int = 1
    n: tuple = (1000,)
    b0: float = 0.0
    alpha0: float = 0.0
    b_policy: str | None = None
    b: float | None = None
    density: str = "constant"
    replicates: int = 1000
    bound_replicates: int | None = None
    seed: int = 0
    format: str = "csv"
    surrogates: bool = True
    bounds: bool = True
    input: str = "poisson"
    u_grid: tuple = (0.0, 1.0, 2.0)
    b_grid: tuple = (0.0, 1.0, 2.0)
    mass: float | None = None
    horizon: float = 10.0
    s_grid: tuple = (0.5, 1.0, 2.0)
    radius: float = 0.1
    r_factor: float = 2.0
    tv_threshold: float | None = None
    z_threshold: float = 4.0
    ratio_tolerance: float = 0.10
    rate_factor: float | None = None

    def validate(self) -> "ExperimentConfig":
        bad = []
        if self.experiment not in EXPERIMENTS:
            bad.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
        knn = self.experiment in ("knn-poisson", "knn-binomial", "bounds")
        if knn and self.d < 2:
            bad.append("d: k-NN experiments need d >= 2")
        if self.d < 1:
            bad.append("d: must be positive")
        if self.k < 1:
            bad.append("k: must be at least 1")
        if self.experiment == "critical-points" and not 1 <= self.k <= self.d:
            bad.append("k: critical points need 1 <= k <= d")
        if not self.n or any(int(v) != v or v < 3 for v in self.n):
            bad.append("n: every entry must be an integer >= 3")
        if self.replicates < 2:
            bad.append("replicates: must be at least 2")
        if self.bound_replicates is not None and self.bound_replicates < 2:
            bad.append("bound_replicates: must be at least 2")
        if self.b_policy is not None and self.b_policy not in B_POLICIES:
            bad.append(f"b_policy: must be one of {', '.join(B_POLICIES)}")
        if self.b_policy == "explicit" and self.b is None:
            bad.append("b: required when b_policy = explicit")
        if self.b is not None and self.b <= self.b0:
            bad.append("b: must exceed b0")
        if self.format not in FORMATS:
            bad.append("format: must be csv or json")
        if self.input not in ("poisson", "binomial"):
            bad.append("input: must be poisson or binomial")
        if self.seed < 0 or self.seed >= 2**64:
            bad.append("seed: must be an unsigned 64-bit integer")
        if self.mass is not None and self.mass < 0:
            bad.append("mass: must be nonnegative")
        if self.horizon < 0:
            bad.append("horizon: must be nonnegative")
        if any(s < 0 for s in self.s_grid):
            bad.append("s_grid: times must be nonnegative")
        if not 0 < self.radius < 0.5:
            bad.append("radius: must lie in (0, 1/2)")
        if self.r_factor <= 1:
            bad.append("r_factor: must exceed 1")
        try:
            density_measure(self.density, self.d)
        except ValueError as exc:
            bad.append(f"density: {exc}")
        if bad:
            raise ConfigError(bad)
        return self

    def policy(self) -> str:
        if self.b_policy is not None:
            return self.b_policy
        binomial = self.experiment == "knn-binomial" or (self.experiment == "bounds" and self.input == "binomial")
        return "a-n" if binomial else "log-n"

    def b_for(self, n: int) -> float | None:
        p = self.policy()
        if p == "explicit":
            return self.b
        if p == "a-n":
            return KnnParams(self.k, n).a_n
        return None  # log n, the KnnParams default

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def density_measure(spec: str, d: int) -> IntensityMeasure:
    """Probability measure from ``constant`` or ``cosine:AMP``."""
    if spec == "constant":
        return IntensityMeasure.constant(1.0, d)
    if spec.startswith("cosine:"):
        try:
            amp = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad amplitude in {spec!r}") from exc
        return IntensityMeasure.cosine(amp, d, 1.0)
    raise ValueError(f"unknown density {spec!r} (use constant or cosine:AMP)")


# ------------------------------------------------------------- config files

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_TUPLES = {"n", "u_grid", "b_grid", "s_grid"}
_ALIASES = {"n_list": "n", "alpha": "alpha0"}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    ann = str(f.type)
    if key in _TUPLES:
        vals = [v.strip() for v in raw.replace(";", ",").split(",") if v.strip()]
        conv = int if key == "n" else float
        return tuple(conv(float(v)) if conv is int else conv(v) for v in vals)
    if raw.lower() in ("none", "null", ""):
        return None
    if "bool" in ann:
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in ann and "float" not in ann:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if "float" in ann:
        return float(raw)
    return raw


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from ``key = value`` lines (``#`` starts a comment)."""
    values: dict = {}
    bad = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            bad.append(f"{key}: unknown field (line {lineno})")
            continue
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            bad.append(f"{key}: {exc}")
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    if "experiment" not in values:
        bad.append("experiment: missing")
    if bad:
        raise ConfigError(bad)
    return ExperimentConfig(**values).validate()


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class ExperimentResult:
    columns: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)

    def add_row(self, row: dict) -> None:
        for key in row:
            if key not in self.columns:
                self.columns.append(key)
        self.rows.append(row)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _seed_for(cfg: ExperimentConfig, *keys: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, _CODES[cfg.experiment], *keys]).generate_state(1, np.uint64)[0])


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _z(value, target, se) -> float:
    if se > 0:
        return (value - target) / se
    return 0.0 if value == target else math.inf


def _rate(n: float) -> float:
    return math.log(math.log(n)) / math.log(n)


def _bound_checks(cfg, res: ExperimentResult, totals: list[float]) -> None:
    if len(totals) > 1:
        dec = all(b < a for a, b in zip(totals[:-1], totals[1:]))
        res.checks.append(Check("bound_total_decreasing", float(dec), 1.0, dec))
    if cfg.rate_factor is not None and len(totals) > 1:
        C = totals[0] / _rate(cfg.n[0])
        worst = max(max(t / (C * _rate(n)), C * _rate(n) / t) for t, n in zip(totals, cfg.n))
        res.checks.append(Check("bound_rate_factor", worst, cfg.rate_factor, worst <= cfg.rate_factor))


def _bound_columns(rep) -> dict:
    d = rep.to_dict()
    return {key: d[key] for key in ("dtv_lm", "e1", "se_e1", "e2", "se_e2", "e3", "se_e3", "e4", "se_e4",
                                    "e5", "se_e5", "e6", "se_e6", "total")}


# ---------------------------------------------------------------- k-NN runs


def _knn_surrogates(cfg, F: KnnFunctional, sampler: Callable, n: int, idx: int, binomial: bool,
                    threads, res: ExperimentResult, row: dict) -> None:
    spec = RngSpec(_seed_for(cfg, idx, 0))
    ugrid = np.asarray(cfg.u_grid, dtype=float)

    def one(i):
        omega = sampler(spec.child(i).generator())
        marks = F.xi(omega, with_all=True).marks
        above = [int(np.sum(marks > u)) for u in ugrid]
        return above + [int(np.sum(marks > cfg.b0)), float(marks.max()) if len(marks) else -math.inf]

    data = parallel_map(one, range(cfg.replicates), threads)
    arr = np.array([r[:-1] for r in data], dtype=float)
    maxima = np.array([r[-1] for r in data])
    limit = math.exp(-cfg.b0)
    counts = arr[:, -1]
    m, se = _mean_se(counts)
    row.update(count_mean=m, count_se=se, count_limit=limit)
    tv = count_tv(counts.astype(np.int64), limit, min_samples=min(1000, cfg.replicates))
    row["count_tv"] = tv
    thr = 0.03 if cfg.tv_threshold is None else cfg.tv_threshold
    res.checks.append(Check(f"count_tv@n={n}", tv, thr, tv < thr))
    for j, u in enumerate(ugrid):
        exact = knn_tail_intensity(F.params, float(u), binomial)
        m, se = _mean_se(arr[:, j])
        z = _z(m, exact, se)
        row.update({f"l_u{u:g}": m, f"se_l_u{u:g}": se, f"exact_l_u{u:g}": exact, f"z_l_u{u:g}": z})
        res.checks.append(Check(f"intensity_u={u:g}@n={n}", abs(z), cfg.z_threshold, abs(z) <= cfg.z_threshold))
    g = gumbel_check(maxima, cfg.b_grid, threshold=cfg.z_threshold)
    for r in g.rows:
        row.update({f"gumbel_{r.label}": r.value, f"se_gumbel_{r.label}": r.se, f"z_gumbel_{r.label}": r.z})
    res.checks.append(Check(f"gumbel@n={n}", g.max_abs_z, cfg.z_threshold, g.passed))


def run_knn(cfg: ExperimentConfig, threads=None, on_row: Callable | None = None) -> ExperimentResult:
    binomial = cfg.experiment == "knn-binomial" or (cfg.experiment == "bounds" and cfg.input == "binomial")
    surrogates = cfg.surrogates and cfg.experiment != "bounds"
    bounds = cfg.bounds or cfg.experiment == "bounds"
    K = density_measure(cfg.density, cfg.d)
    res = ExperimentResult()
    totals = []
    for idx, n in enumerate(cfg.n):
        F = KnnFunctional(KnnParams(cfg.k, n, cfg.b0, cfg.b_for(n)), K)
        row = {"n": n, "k": cfg.k, "d": cfg.d, "b": F.params.b_trunc, "b0": cfg.b0,
               "replicates": cfg.replicates}
        if surrogates:
            if binomial:
                def sampler(gen, n=n):
                    return sample_binomial(n, K, gen)
            else:
                Kn = K.scaled(n)

                def sampler(gen, Kn=Kn):
                    return sample_poisson(Kn, gen)
            _knn_surrogates(cfg, F, sampler, n, idx, binomial, threads, res, row)
        if bounds:
            mc = MCConfig(replicates=cfg.bound_replicates or cfg.replicates, seed=_seed_for(cfg, idx, 1),
                          threads=threads)
            rep = (estimate_bounds_binomial(F, K, n, mc) if binomial
                   else estimate_bounds_poisson(F, K.scaled(n), mc))
            row.update(_bound_columns(rep))
            row["bound_replicates"] = mc.replicates
            totals.append(rep.total)
        res.add_row(row)
        if on_row:
            on_row(res)
    _bound_checks(cfg, res, totals)
    return res


# ---------------------------------------------------------- critical points


def _influence_se(vals: np.ndarray) -> tuple[float, ...]:
    """Mean, variance, variance/mean and the standard error of each via influence functions."""
    x = np.asarray(vals, dtype=float)
    N = len(x)
    m = x.mean()
    v = x.var(ddof=1)
    if_m = x - m
    if_v = if_m**2 - v
    se_m = float(if_m.std(ddof=1) / math.sqrt(N))
    se_v = float(if_v.std(ddof=1) / math.sqrt(N))
    ratio = v / m if m > 0 else math.nan
    if_r = if_v / m - v * if_m / m**2 if m > 0 else np.zeros(N)
    se_r = float(if_r.std(ddof=1) / math.sqrt(N))
    return float(m), float(v), float(ratio), se_m, se_v, se_r


def critical_counts(cfg: ExperimentConfig, n: int, idx: int, threads=None) -> np.ndarray:
    """Per replicate: (count with radius in (r_n, R_n], count with radius in (r_n, r_factor R_n]).

    Both windows are read off the same sample, so their comparison uses common random numbers.
    """
    F = CriticalFunctional(CritParams(cfg.k, n, cfg.d, cfg.alpha0))
    K = density_measure(cfg.density, cfg.d).scaled(n)
    spec = RngSpec(_seed_for(cfg, idx, 0))
    R = F.params.R_n
    a_cut = F.alpha(R)

    def one(i):
        omega = sample_poisson(K, spec.child(i).generator())
        xi = F.xi(omega, r_hi=cfg.r_factor * R)
        return int(np.sum(xi.marks <= a_cut)), len(xi)

    return np.array(parallel_map(one, range(cfg.replicates), threads), dtype=np.int64).reshape(-1, 2)


def run_critical(cfg: ExperimentConfig, threads=None, on_row: Callable | None = None) -> ExperimentResult:
    res = ExperimentResult()
    for idx, n in enumerate(cfg.n):
        counts = critical_counts(cfg, n, idx, threads)
        m, v, r, se_m, se_v, se_r = _influence_se(counts[:, 0])
        m2, se_m2 = _mean_se(counts[:, 1])
        comb = math.hypot(se_m, se_m2)
        p = CritParams(cfg.k, n, cfg.d, cfg.alpha0)
        res.add_row({"n": n, "k": cfg.k, "d": cfg.d, "alpha0": cfg.alpha0, "r_n": p.r_n, "R_n": p.R_n,
                     "mean": m, "se_mean": se_m, "variance": v, "se_variance": se_v,
                     "ratio": r, "se_ratio": se_r, "mean_wide": m2, "se_mean_wide": se_m2,
                     "replicates": cfg.replicates})
        dev = abs(r - 1)
        res.checks.append(Check(f"variance_mean_ratio@n={n}", dev, cfg.ratio_tolerance, dev <= cfg.ratio_tolerance))
        gap = abs(m2 - m) / comb if comb > 0 else (0.0 if m2 == m else math.inf)
        res.checks.append(Check(f"R_n_doubling@n={n}", gap, 2.0, gap <= 2.0))
        if on_row:
            on_row(res)
    return res


# -------------------------------------------------------- Glauber and Mecke


def run_glauber(cfg: ExperimentConfig, threads=None, on_row: Callable | None = None) -> ExperimentResult:
    res = ExperimentResult()
    mass = 5.0 if cfg.mass is None else cfg.mass
    M = IntensityMeasure.constant(mass, cfg.d) if cfg.density == "constant" else \
        density_measure(cfg.density, cfg.d).scaled(mass)
    rep = stationarity_report(M, cfg.horizon, cfg.replicates, RngSpec(_seed_for(cfg, 0)), threads=threads,
                              tv_threshold=0.02 if cfg.tv_threshold is None else cfg.tv_threshold,
                              z_threshold=cfg.z_threshold)
    res.add_row({"test": "stationarity", "s": cfg.horizon, "value": rep.count_tv, "se": 0.0,
                 "target": 0.0, "z": rep.max_abs_z, "replicates": cfg.replicates})
    res.checks.append(Check("stationarity_tv", rep.count_tv, rep.tv_threshold, rep.count_tv < rep.tv_threshold))
    res.checks.append(Check("stationarity_cells", rep.max_abs_z, rep.z_threshold, rep.max_abs_z < rep.z_threshold))
    if on_row:
        on_row(res)
    spec = RngSpec(_seed_for(cfg, 1))
    base = sample_poisson(M, spec.child(0).generator())
    extra = PointConfiguration(spec.child(1).generator().random((1, cfg.d)), cfg.d)
    omega2 = base.add(extra.points)
    for j, s in enumerate(cfg.s_grid):
        def one(i, s=s, j=j):
            a, b = simulate_coupled(base, omega2, M, s, spec.child(2, j, i).generator())
            return symmetric_difference_size(a, b, "coordinates")

        vals = parallel_map(one, range(cfg.replicates), threads)
        m, se = _mean_se(vals)
        target = math.exp(-s)
        z = _z(m, target, se)
        res.add_row({"test": "contraction", "s": s, "value": m, "se": se, "target": target, "z": z,
                     "replicates": cfg.replicates})
        res.checks.append(Check(f"contraction@s={s:g}", abs(z), cfg.z_threshold, abs(z) <= cfg.z_threshold))
        if on_row:
            on_row(res)
    return res


def run_mecke(cfg: ExperimentConfig, threads=None, on_row: Callable | None = None) -> ExperimentResult:
    mass = 50.0 if cfg.mass is None else cfg.mass
    K = IntensityMeasure.constant(mass, cfg.d) if cfg.density == "constant" else \
        density_measure(cfg.density, cfg.d).scaled(mass)
    rep = mecke_check(K, ball_count_test(cfg.radius), cfg.replicates, RngSpec(_seed_for(cfg, 0)))
    res = ExperimentResult()
    res.add_row({"mass": mass, "radius": cfg.radius, "lhs": rep.lhs, "se_lhs": rep.se_lhs,
                 "rhs": rep.rhs, "se_rhs": rep.se_rhs, "z": rep.z, "replicates": rep.reps})
    res.checks.append(Check("mecke", abs(rep.z), cfg.z_threshold, abs(rep.z) <= cfg.z_threshold))
    if on_row:
        on_row(res)
    return res


RUNNERS = {
    "knn-poisson": run_knn,
    "knn-binomial": run_knn,
    "bounds": run_knn,
    "critical-points": run_critical,
    "glauber-check": run_glauber,
    "mecke-check": run_mecke,
}


def run_experiment(cfg: ExperimentConfig, threads=None, on_row: Callable | None = None) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg.validate(), threads, on_row)
