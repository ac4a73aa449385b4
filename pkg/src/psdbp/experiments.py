"""Monte Carlo study harness: replicated fits, summary tables, coverage.

Each study simulates surviving trajectories, fits a configurable set of
(weight scheme, target) estimators per replication (or once on the
pooled sample), persists per-replication estimates before aggregating,
and reduces them to mean / median / SD / relative-MSE summary rows.

Replications run on independent seeded streams (stream index =
horizon_index * replications + rep), so results are identical however
the work is scheduled; with ``workers > 1`` replications are distributed
over processes and merged in replication order.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .asymptotics import confidence_interval, covariance
from .errors import NonConvergenceError, ParameterDomainError, PSDBPError
from .estimation import (
    OptConfig,
    WeightScheme,
    estimate,
    eval_z_max,
    sufficient_stats,
)
from .models import OffspringModel
from .qprocess import CurveCache
from .simulate import SimConfig, simulate_surviving, stream_rng, _CdfCache

DEFAULT_ESTIMATORS = (
    ("w2", "qprocess"),
    ("w2", "raw"),
    ("w1", "qprocess"),
    ("w1", "raw"),
)

ELLIPSE_LEVELS = (0.5, 0.75, 0.9, 0.95, 0.975)


def estimator_label(scheme_kind: str, mode: str) -> str:
    return f"{'hat' if mode == 'qprocess' else 'tilde'}({scheme_kind})"


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one replicated study."""

    model: OffspringModel
    theta0: tuple
    sim: SimConfig
    horizons: tuple
    estimators: tuple = DEFAULT_ESTIMATORS
    pooled: bool = False
    label: str = "study"
    out_dir: str | None = None
    grid_shape: tuple = (3, 3)
    refine_top_k: int | None = 2
    z_cap: int = 512
    workers: int = 0
    compute_ci: bool = False
    ci_level: float = 0.95
    xatol: float = 1e-5
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not self.horizons or list(self.horizons) != sorted(set(self.horizons)):
            raise ParameterDomainError("horizons must be non-empty and increasing")
        if max(self.horizons) > self.sim.horizon:
            raise ParameterDomainError("sim.horizon must cover the largest study horizon")

    def param_names(self) -> tuple:
        return ("K", "mu" if self.model.base == "geometric" else "v")

    def opt_config(self) -> OptConfig:
        return OptConfig(
            grid_shape=self.grid_shape,
            refine_top_k=self.refine_top_k,
            z_cap=self.z_cap,
            xatol=self.xatol,
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_spec(),
            "theta0": list(self.theta0),
            "sim": {
                "initial_size": self.sim.initial_size,
                "horizon": self.sim.horizon,
                "replications": self.sim.replications,
                "seed": self.sim.seed,
                "condition_on_survival": self.sim.condition_on_survival,
                "max_attempts": self.sim.max_attempts,
            },
            "horizons": list(self.horizons),
            "estimators": [list(e) for e in self.estimators],
            "pooled": self.pooled,
            "label": self.label,
            "grid_shape": list(self.grid_shape),
            "refine_top_k": self.refine_top_k,
            "z_cap": self.z_cap,
            "workers": self.workers,
            "compute_ci": self.compute_ci,
            "ci_level": self.ci_level,
            "xatol": self.xatol,
            "solver_tol": self.solver_tol,
        }

    @classmethod
    def from_dict(cls, payload: dict, out_dir=None) -> "ExperimentConfig":
        return cls(
            model=OffspringModel.from_spec(payload["model"]),
            theta0=tuple(payload["theta0"]),
            sim=SimConfig(**payload["sim"]),
            horizons=tuple(payload["horizons"]),
            estimators=tuple(tuple(e) for e in payload.get("estimators", DEFAULT_ESTIMATORS)),
            pooled=payload.get("pooled", False),
            label=payload.get("label", "study"),
            out_dir=out_dir if out_dir is not None else payload.get("out_dir"),
            grid_shape=tuple(payload.get("grid_shape", (3, 3))),
            refine_top_k=payload.get("refine_top_k", 2),
            z_cap=payload.get("z_cap", 512),
            workers=payload.get("workers", 0),
            compute_ci=payload.get("compute_ci", False),
            ci_level=payload.get("ci_level", 0.95),
            xatol=payload.get("xatol", 1e-5),
            solver_tol=payload.get("solver_tol", 1e-10),
        )


@dataclass(frozen=True)
class EstimateRecord:
    rep: int
    horizon: int
    scheme: str
    mode: str
    k: float
    second: float
    objective: float
    converged: bool
    ci: tuple | None = None  # ((lo, hi) per parameter) when requested

    @property
    def label(self) -> str:
        return estimator_label(self.scheme, self.mode)


@dataclass(frozen=True)
class SummaryTable:
    """Mean / median / SD (divisor N-1) / relative MSE per estimator row."""

    theta0: tuple
    rows: tuple  # ((label, param, horizon, mean, median, sd, rmse_rel), ...)

    @classmethod
    def from_records(cls, records, theta0, param_names=("K", "v")) -> "SummaryTable":
        grouped: dict = {}
        for rec in records:
            if not math.isfinite(rec.k):
                continue
            for param, value in zip(param_names, (rec.k, rec.second)):
                grouped.setdefault((rec.label, param, rec.horizon), []).append(value)
        rows = []
        for (label, param, horizon) in sorted(grouped):
            values = np.array(grouped[(label, param, horizon)])
            mean = float(values.mean())
            median = float(np.median(values))
            sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
            truth = theta0[param_names.index(param)]
            rmse_rel = ((mean - truth) ** 2 + sd**2) / truth**2
            rows.append((label, param, int(horizon), mean, median, sd, rmse_rel))
        return cls(tuple(theta0), tuple(rows))


@dataclass(frozen=True)
class StudyResult:
    config: ExperimentConfig
    table: SummaryTable
    records: tuple
    coverage: dict | None = None


def _fit_record(stats, model, scheme_kind, mode, opt, cache, rep, horizon,
                ci_level=None) -> EstimateRecord:
    scheme = WeightScheme(scheme_kind)
    try:
        result = estimate(stats, model, scheme, mode, opt=opt, cache=cache)
    except PSDBPError:
        return EstimateRecord(rep, horizon, scheme_kind, mode,
                              math.nan, math.nan, math.nan, False)
    ci = None
    if ci_level is not None:
        try:
            z_max = eval_z_max(result.theta_hat[0], stats.max_state(), opt.z_cap)
            report = covariance(model, result.theta_hat, scheme, z_max, cache=cache)
            ci = tuple(confidence_interval(result.theta_hat, report.beta, horizon, ci_level))
        except PSDBPError:
            ci = None
    return EstimateRecord(
        rep, horizon, scheme_kind, mode,
        float(result.theta_hat[0]), float(result.theta_hat[1]),
        float(result.objective), bool(result.converged), ci,
    )


def _run_replication(payload) -> list:
    (model_spec, theta0, initial_size, horizon, max_attempts, seed, stream_index,
     rep, estimators, opt_kwargs, ci_level, solver_tol) = payload
    model = OffspringModel.from_spec(model_spec)
    rng = stream_rng(seed, stream_index)
    traj = simulate_surviving(model, theta0, initial_size, horizon, rng,
                              max_attempts=max_attempts, seed=seed, rep=rep)
    stats = sufficient_stats(traj)
    cache = CurveCache(tol=solver_tol)
    opt = OptConfig(**opt_kwargs)
    return [
        _fit_record(stats, model, scheme, mode, opt, cache, rep, horizon, ci_level)
        for scheme, mode in estimators
    ]


def _worker_count(config: ExperimentConfig) -> int:
    if config.workers > 0:
        return config.workers
    return max(1, int(os.environ.get("PSDBP_WORKERS", "1")))


def _replicated_records(config: ExperimentConfig) -> list:
    opt_kwargs = {
        "grid_shape": config.grid_shape,
        "refine_top_k": config.refine_top_k,
        "z_cap": config.z_cap,
        "xatol": config.xatol,
    }
    payloads = []
    reps = config.sim.replications
    for h_idx, horizon in enumerate(config.horizons):
        for rep in range(reps):
            payloads.append((
                config.model.to_spec(), tuple(config.theta0), config.sim.initial_size,
                horizon, config.sim.max_attempts, config.sim.seed,
                h_idx * reps + rep, rep, tuple(config.estimators), opt_kwargs,
                config.ci_level if config.compute_ci else None, config.solver_tol,
            ))
    workers = _worker_count(config)
    if workers == 1:
        chunks = [_run_replication(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replication, payloads, chunksize=1))
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.horizon, r.rep, r.scheme, r.mode))
    failures = sum(1 for r in records if not math.isfinite(r.k))
    if failures > 0.01 * len(records):
        raise NonConvergenceError(
            f"{failures}/{len(records)} replication fits failed (> 1%)"
        )
    return records


def _pooled_records(config: ExperimentConfig) -> list:
    opt = config.opt_config()
    records = []
    reps = config.sim.replications
    model = config.model
    for h_idx, horizon in enumerate(config.horizons):
        cache = CurveCache(tol=config.solver_tol)
        cdf_cache = _CdfCache(model, config.theta0)
        trajectories = []
        for rep in range(reps):
            rng = stream_rng(config.sim.seed, h_idx * reps + rep)
            trajectories.append(simulate_surviving(
                model, config.theta0, config.sim.initial_size, horizon, rng,
                max_attempts=config.sim.max_attempts, seed=config.sim.seed,
                rep=rep, _cache=cdf_cache,
            ))
        stats = sufficient_stats(trajectories)
        for scheme, mode in config.estimators:
            records.append(_fit_record(stats, model, scheme, mode, opt, cache,
                                       rep=-1, horizon=horizon))
    return records


def _write_records_csv(path, records, param_names):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["rep", "horizon", "scheme", "mode", "K", param_names[1],
                  "objective", "converged"]
        writer.writerow(header)
        for r in records:
            writer.writerow([r.rep, r.horizon, r.scheme, r.mode,
                             repr(r.k), repr(r.second), repr(r.objective),
                             int(r.converged)])


def read_records_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    out = []
    for row in rows[1:]:
        if not row:
            continue
        out.append(EstimateRecord(int(row[0]), int(row[1]), row[2], row[3],
                                  float(row[4]), float(row[5]), float(row[6]),
                                  bool(int(row[7]))))
    return out


def _write_summary_csv(path, table: SummaryTable):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "param", "horizon", "mean", "median", "sd", "rmse_rel"])
        for label, param, horizon, mean, median, sd, rmse in table.rows:
            writer.writerow([label, param, horizon, repr(mean), repr(median),
                             repr(sd), repr(rmse)])


def _write_differences_csv(path, records):
    """Per-replication difference between the two targets, per scheme (hat - tilde)."""
    by_key: dict = {}
    for r in records:
        by_key[(r.rep, r.horizon, r.scheme, r.mode)] = r
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rep", "horizon", "scheme", "k_diff", "second_diff"])
        for (rep, horizon, scheme, mode), rec in sorted(by_key.items()):
            if mode != "qprocess":
                continue
            other = by_key.get((rep, horizon, scheme, "raw"))
            if other is None or not (math.isfinite(rec.k) and math.isfinite(other.k)):
                continue
            writer.writerow([rep, horizon, scheme,
                             repr(rec.k - other.k), repr(rec.second - other.second)])


def _write_histograms_csv(path, records, param_names, bins=40):
    grouped: dict = {}
    for rec in records:
        if not math.isfinite(rec.k):
            continue
        for param, value in zip(param_names, (rec.k, rec.second)):
            grouped.setdefault((rec.label, param, rec.horizon), []).append(value)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "param", "horizon", "bin_lo", "bin_hi", "count"])
        for key in sorted(grouped):
            values = np.array(grouped[key])
            counts, edges = np.histogram(values, bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                writer.writerow([key[0], key[1], key[2], repr(float(lo)),
                                 repr(float(hi)), int(c)])


def _out(config, name) -> str | None:
    if config.out_dir is None:
        return None
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, f"{config.label}_{name}")


def run_growing_study(config: ExperimentConfig) -> StudyResult:
    """Replicated (or pooled) fits on populations conditioned to survive."""
    if not config.sim.condition_on_survival:
        raise ParameterDomainError("growing study requires condition_on_survival")
    records = _pooled_records(config) if config.pooled else _replicated_records(config)
    params = config.param_names()
    path = _out(config, "estimates.csv")
    if path:
        _write_records_csv(path, records, params)
    table = SummaryTable.from_records(records, config.theta0, params)
    if path:
        _write_summary_csv(_out(config, "summary.csv"), table)
        if not config.pooled:
            _write_differences_csv(_out(config, "differences.csv"), records)
    return StudyResult(config, table, tuple(records))


def run_stationary_study(config: ExperimentConfig) -> StudyResult:
    """Growing-study protocol plus histogram and theory-overlay artifacts."""
    result = run_growing_study(config)
    params = config.param_names()
    if config.out_dir:
        _write_histograms_csv(_out(config, "histograms.csv"), result.records, params)
        _write_overlays(config)
    return result


def _write_overlays(config: ExperimentConfig):
    from .asymptotics import confidence_ellipse  # local import keeps module load light

    cache = CurveCache()
    theta0 = np.asarray(config.theta0, dtype=float)
    z_max = eval_z_max(theta0[0], 0, config.z_cap)
    qschemes = sorted({s for s, m in config.estimators if m == "qprocess"})
    with open(_out(config, "density_overlay.csv"), "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "param", "horizon", "x", "density"])
        for scheme_kind in qschemes:
            report = covariance(config.model, theta0, WeightScheme(scheme_kind),
                                z_max, cache=cache)
            for horizon in config.horizons:
                for j, param in enumerate(config.param_names()):
                    sd = math.sqrt(max(report.beta[j, j], 0.0) / horizon)
                    grid = np.linspace(theta0[j] - 4 * sd, theta0[j] + 4 * sd, 129)
                    pdf = np.exp(-0.5 * ((grid - theta0[j]) / sd) ** 2) / (
                        sd * math.sqrt(2 * math.pi))
                    for x, dens in zip(grid, pdf):
                        writer.writerow([scheme_kind, param, horizon,
                                         repr(float(x)), repr(float(dens))])
            with open(_out(config, f"ellipses_{scheme_kind}.csv"), "w",
                      newline="\n", encoding="utf-8") as efh:
                ewriter = csv.writer(efh)
                ewriter.writerow(["level", "horizon", "phi", "x", "y"])
                for horizon in config.horizons:
                    for level in ELLIPSE_LEVELS:
                        poly = confidence_ellipse(theta0, report.beta, horizon, level)
                        for phi, x, y in poly:
                            ewriter.writerow([repr(level), horizon, repr(float(phi)),
                                              repr(float(x)), repr(float(y))])


def run_coverage_study(config: ExperimentConfig, level: float | None = None) -> StudyResult:
    """Empirical CI coverage of theta0, using the first configured estimator."""
    level = config.ci_level if level is None else level
    if level >= 1.0:
        coverage = {p: 1.0 for p in config.param_names()}
        return StudyResult(config, SummaryTable(tuple(config.theta0), ()), (), coverage)
    cfg = replace(config, compute_ci=True, ci_level=level,
                  estimators=(config.estimators[0],))
    records = _replicated_records(cfg)
    params = config.param_names()
    covered = {p: 0 for p in params}
    counted = 0
    for rec in records:
        if rec.ci is None:
            continue
        counted += 1
        for j, param in enumerate(params):
            lo, hi = rec.ci[j]
            if lo <= config.theta0[j] <= hi:
                covered[param] += 1
    coverage = {p: (covered[p] / counted if counted else math.nan) for p in params}
    table = SummaryTable.from_records(records, config.theta0, params)
    path = _out(config, "coverage_estimates.csv")
    if path:
        _write_records_csv(path, records, params)
    return StudyResult(cfg, table, tuple(records), coverage)
