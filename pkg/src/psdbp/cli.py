"""Command-line interface.

Subcommands: ``simulate``, ``estimate``, ``dump-mup``, ``asymptotics``,
``experiment``, ``fit-census``.  Stochastic subcommands require an
explicit ``--seed`` (never a wall-clock default); every emission is
byte-deterministic given inputs, seed and flags.  Domain failures exit
with status 1 and a machine-parseable JSON error record on stderr,
usage errors with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as pio
from .asymptotics import confidence_ellipse, confidence_interval, covariance
from .errors import PSDBPError, ParameterDomainError
from .estimation import (
    EstimateResult,
    OptConfig,
    WeightScheme,
    estimate,
    eval_z_max,
    mle_m,
    sufficient_stats,
    weights,
)
from .experiments import (
    ExperimentConfig,
    run_coverage_study,
    run_growing_study,
    run_stationary_study,
)
from .kernel import build_kernel
from .models import OffspringModel
from .qprocess import CurveCache
from .simulate import SimConfig, simulate_batch


def _model_args(parser: argparse.ArgumentParser):
    parser.add_argument("--family", required=True,
                        choices=["bh", "ricker", "robin-bh", "robin-ricker"])
    parser.add_argument("--base", default=None,
                        choices=["geometric", "binary", "binomial", "empirical"])
    parser.add_argument("--K", type=float, required=True, help="carrying capacity")
    parser.add_argument("--v", type=float, default=None,
                        help="success/efficiency probability (binary or robin base)")
    parser.add_argument("--mu", type=float, default=None,
                        help="base mean (geometric base)")
    parser.add_argument("--death-prob", type=float, default=None,
                        help="robin: yearly death probability of the mother")
    parser.add_argument("--binom-n", type=int, default=None)
    parser.add_argument("--binom-p", type=float, default=None)
    parser.add_argument("--base-probs", type=str, default=None,
                        help="comma-separated empirical litter pmf")


def _build_model(args) -> tuple:
    base = args.base
    if base is None:
        base = "empirical" if args.family.startswith("robin") else (
            "geometric" if args.mu is not None else "binary")
    kwargs = {"family": args.family, "base": base}
    if args.death_prob is not None:
        kwargs["death_prob"] = args.death_prob
    if args.binom_n is not None:
        kwargs["binom_n"] = args.binom_n
    if args.binom_p is not None:
        kwargs["binom_p"] = args.binom_p
    if args.base_probs is not None:
        kwargs["base_probs"] = tuple(float(x) for x in args.base_probs.split(","))
    model = OffspringModel(**kwargs)
    if base == "geometric":
        if args.mu is None:
            raise ParameterDomainError("geometric base requires --mu")
        second = args.mu
    else:
        if args.v is None:
            raise ParameterDomainError(f"{base} base requires --v")
        second = args.v
    return model, np.array([args.K, second])


def _scheme(args) -> WeightScheme:
    if args.weights == "capped":
        return WeightScheme("capped", cap=args.cap)
    return WeightScheme(args.weights)


def _estimate_report(result: EstimateResult, stats, model, theta_hat, z_cap,
                     digest, cache) -> dict:
    zs = stats.states()
    z_max = eval_z_max(theta_hat[0], stats.max_state(), z_cap)
    entry = cache.entry(model, theta_hat, z_max)
    w_map = weights(stats, result.scheme)
    table = [
        {
            "z": int(z),
            "m_hat": mle_m(stats, int(z)),
            "weight": w_map.get(int(z), 0.0),
            "m_up": float(entry.m_up[z - 1]),
            "m": float(model.mean(float(z), theta_hat)),
        }
        for z in zs
    ]
    return {
        "inputs_digest": digest,
        "scheme": result.scheme.label(),
        "mode": result.mode,
        "theta_hat": list(map(float, theta_hat)),
        "objective": float(result.objective),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "multistart": [
            {"start": list(map(float, s)), "end": list(map(float, e)), "value": float(v)}
            for s, e, v in result.multistart_log
        ],
        "table": table,
    }


def fit_census(series: pio.CensusSeries, family: str, scheme: WeightScheme,
               mode: str = "qprocess", base: str = "empirical",
               death_prob: float | None = None, binom_n: int | None = None,
               binom_p: float | None = None, opt: OptConfig | None = None,
               cache: CurveCache | None = None) -> EstimateResult:
    """Fit a robin-family model to a yearly census series (single trajectory)."""
    kwargs = {"family": family, "base": base}
    if death_prob is not None:
        kwargs["death_prob"] = death_prob
    if binom_n is not None:
        kwargs["binom_n"] = binom_n
    if binom_p is not None:
        kwargs["binom_p"] = binom_p
    model = OffspringModel(**kwargs)
    stats = sufficient_stats(series.to_trajectory())
    cache = cache or CurveCache()
    return estimate(stats, model, scheme, mode, opt=opt, cache=cache)


def _cmd_simulate(args) -> int:
    model, theta = _build_model(args)
    config = SimConfig(
        initial_size=args.N, horizon=args.n, replications=args.reps,
        seed=args.seed, condition_on_survival=args.survive,
        max_attempts=args.max_attempts,
    )
    trajectories = simulate_batch(config, model, theta)
    pio.write_trajectories_csv(args.out, trajectories)
    return 0


def _cmd_estimate(args) -> int:
    model, _ = _build_model(args)
    trajectories = pio.read_trajectories_csv(args.input)
    stats = sufficient_stats(trajectories)
    cache = CurveCache()
    opt = OptConfig(z_cap=args.z_cap, refine_top_k=args.refine_top_k)
    result = estimate(stats, model, _scheme(args), args.target, opt=opt, cache=cache)
    report = _estimate_report(result, stats, model, result.theta_hat, args.z_cap,
                              pio.file_digest(args.input), cache)
    pio.write_json(args.out, report)
    return 0


def _cmd_dump_mup(args) -> int:
    model, theta = _build_model(args)
    pio.write_mup_csv(args.out, model, theta, args.zmax)
    if args.kernel_out:
        pio.write_kernel_csv(args.kernel_out, build_kernel(model, theta, args.zmax))
    return 0


def _cmd_asymptotics(args) -> int:
    model, theta = _build_model(args)
    zmax = args.zmax or eval_z_max(theta[0], 0, 512)
    report = covariance(model, theta, _scheme(args), zmax)
    payload = {
        "theta": list(map(float, theta)),
        "scheme": report.scheme.label(),
        "z_max": report.z_max,
        "eta": report.eta,
        "zeta": report.zeta,
        "beta": report.beta,
        "tail_weight": report.tail_weight,
        "confidence_intervals": {
            "level": args.level,
            "n": args.n,
            "intervals": confidence_interval(theta, report.beta, args.n, args.level),
        },
    }
    pio.write_json(args.out, payload)
    if args.ellipse_out:
        poly = confidence_ellipse(theta, report.beta, args.n, args.level, args.points)
        pio.write_ellipse_csv(args.ellipse_out, poly)
    return 0


def _cmd_experiment(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.pop("kind", "growing")
    config = ExperimentConfig.from_dict(payload, out_dir=args.out_dir)
    if kind == "growing":
        run_growing_study(config)
    elif kind == "stationary":
        run_stationary_study(config)
    elif kind == "coverage":
        result = run_coverage_study(config)
        pio.write_json(f"{args.out_dir}/{config.label}_coverage.json", result.coverage)
    else:
        raise ParameterDomainError(f"unknown study kind {kind!r}")
    return 0


def _cmd_fit_census(args) -> int:
    series = pio.read_census_csv(args.input)
    cache = CurveCache()
    opt = OptConfig(z_cap=args.z_cap, refine_top_k=args.refine_top_k)
    kwargs = {}
    if args.death_prob is not None:
        kwargs["death_prob"] = args.death_prob
    if args.binom_n is not None:
        kwargs["binom_n"] = args.binom_n
    if args.binom_p is not None:
        kwargs["binom_p"] = args.binom_p
    result = fit_census(series, args.family, _scheme(args), args.target,
                        base=args.base or "empirical", opt=opt, cache=cache, **kwargs)
    model = OffspringModel(family=args.family, base=args.base or "empirical", **kwargs)
    stats = sufficient_stats(series.to_trajectory())
    report = _estimate_report(result, stats, model, result.theta_hat, args.z_cap,
                              pio.file_digest(args.input), cache)
    pio.write_json(args.out, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psdbp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate trajectory batches")
    _model_args(p_sim)
    p_sim.add_argument("--N", type=int, required=True, help="initial population size")
    p_sim.add_argument("--n", type=int, required=True, help="time horizon")
    p_sim.add_argument("--reps", type=int, default=1)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--survive", action="store_true",
                       help="condition each replication on survival to the horizon")
    p_sim.add_argument("--max-attempts", type=int, default=1000)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_est = sub.add_parser("estimate", help="fit theta to trajectory data")
    _model_args(p_est)
    p_est.add_argument("--input", required=True, help="trajectory CSV (t,z or rep,t,z)")
    p_est.add_argument("--weights", default="w2", choices=["w1", "w2", "capped"])
    p_est.add_argument("--cap", type=int, default=None)
    p_est.add_argument("--target", default="qprocess", choices=["qprocess", "raw"])
    p_est.add_argument("--z-cap", type=int, default=512)
    p_est.add_argument("--refine-top-k", type=int, default=None)
    p_est.add_argument("--out", required=True)
    p_est.set_defaults(func=_cmd_estimate)

    p_dump = sub.add_parser("dump-mup", help="dump conditioned-moment curves as CSV")
    _model_args(p_dump)
    p_dump.add_argument("--zmax", type=int, required=True)
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--kernel-out", default=None)
    p_dump.set_defaults(func=_cmd_dump_mup)

    p_asy = sub.add_parser("asymptotics", help="sandwich covariance and intervals")
    _model_args(p_asy)
    p_asy.add_argument("--weights", default="w2", choices=["w1", "w2", "capped"])
    p_asy.add_argument("--cap", type=int, default=None)
    p_asy.add_argument("--zmax", type=int, default=None)
    p_asy.add_argument("--n", type=int, required=True, help="sample length for scaling")
    p_asy.add_argument("--level", type=float, default=0.95)
    p_asy.add_argument("--points", type=int, default=128)
    p_asy.add_argument("--out", required=True)
    p_asy.add_argument("--ellipse-out", default=None)
    p_asy.set_defaults(func=_cmd_asymptotics)

    p_exp = sub.add_parser("experiment", help="run a declarative study config")
    p_exp.add_argument("--config", required=True, help="JSON study description")
    p_exp.add_argument("--out-dir", required=True)
    p_exp.set_defaults(func=_cmd_experiment)

    p_fit = sub.add_parser("fit-census", help="fit a robin model to census counts")
    p_fit.add_argument("--input", required=True, help="census CSV (year,count)")
    p_fit.add_argument("--family", required=True, choices=["robin-bh", "robin-ricker"])
    p_fit.add_argument("--base", default=None, choices=["empirical", "binomial"])
    p_fit.add_argument("--death-prob", type=float, default=None)
    p_fit.add_argument("--binom-n", type=int, default=None)
    p_fit.add_argument("--binom-p", type=float, default=None)
    p_fit.add_argument("--weights", default="w2", choices=["w1", "w2", "capped"])
    p_fit.add_argument("--cap", type=int, default=None)
    p_fit.add_argument("--target", default="qprocess", choices=["qprocess", "raw"])
    p_fit.add_argument("--z-cap", type=int, default=512)
    p_fit.add_argument("--refine-top-k", type=int, default=None)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=_cmd_fit_census)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PSDBPError as err:
        record = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
