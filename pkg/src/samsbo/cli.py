"""Command-line entry point: run campaigns, verify bounds, prepare plot data.

``run`` executes the configured repetitions (optionally across processes),
writing one raw CSV of evaluation rows and one aggregate CSV per algorithm
plus a JSON manifest with every seed needed for exact reproduction.  Wall
times live in the manifest only, so output CSVs are byte-identical across
reruns with the same seed.  ``verify-bounds`` runs the Monte Carlo coverage
suites; ``plotdata`` condenses raw CSVs into long-format summary rows.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, benchmarks, verify
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .safeopt import LoopConfig, TraceRecord, run_repetition

RAW_HEADER = [
    "algorithm", "repetition", "iteration", "task", "input", "observed",
    "best_so_far", "beta_bar", "confidence_set_size", "gamma", "nu",
    "safe_set_size", "violation",
]
AGGREGATE_HEADER = [
    "algorithm", "iteration", "best_median", "best_q10", "best_q90",
    "best_mean", "best_std", "violations",
]
PLOTDATA_HEADER = ["algorithm", "iteration", "median", "q10", "q90", "mean", "std"]


def build_problem(config: ExperimentConfig, disturbance_seed: int):
    if config.problem == "branin":
        return benchmarks.branin_problem(
            shift_factor=config.disturbance, n_tasks=config.n_tasks,
            threshold=config.threshold or benchmarks.BRANIN_THRESHOLD,
            noise_multiplier=config.observation_noise,
            disturbance_seed=disturbance_seed,
        )
    if config.problem == "powell":
        return benchmarks.powell_problem(
            dimension=config.dimension or 4,
            shift_factor=config.disturbance, n_tasks=config.n_tasks,
            threshold=config.threshold or benchmarks.POWELL_THRESHOLD,
            noise_multiplier=config.observation_noise,
            disturbance_seed=disturbance_seed,
        )
    return benchmarks.laser_problem(
        disturbance_factor=config.disturbance, n_tasks=config.n_tasks,
        threshold=config.threshold or benchmarks.LASER_THRESHOLD,
        noise_multiplier=config.observation_noise,
        disturbance_seed=disturbance_seed,
    )


def loop_config(config: ExperimentConfig, algorithm: str) -> LoopConfig:
    return LoopConfig(
        algorithm=algorithm, iterations=config.iterations, delta=config.delta,
        rho=config.rho, tau=config.tau, eta=config.eta,
        supplementary_batch=config.supplementary_batch, grid_size=config.grid_size,
        lengthscale=config.lengthscale, signal_variance=config.signal_variance,
        noise_variance=config.noise_variance, mcmc_samples=config.mcmc_samples,
        mcmc_chains=config.mcmc_chains, mcmc_burn_in=config.mcmc_burn_in,
        mcmc_target_acceptance=config.mcmc_target_acceptance,
        refresh_every=config.refresh_every, include_psi=config.include_psi,
        seed_points=config.seed_points,
    )


def _repetition_seeds(config: ExperimentConfig) -> list[int]:
    return [int(s.generate_state(1)[0])
            for s in np.random.SeedSequence(config.seed).spawn(config.repetitions)]


def _run_one(config: ExperimentConfig, algorithm: str, repetition: int,
             rep_seed: int) -> list[TraceRecord]:
    problem = build_problem(config, disturbance_seed=rep_seed)
    return run_repetition(problem, loop_config(config, algorithm), rep_seed,
                          repetition=repetition)


def _format_float(value: float) -> str:
    return repr(float(value))


def _write_raw_csv(path: Path, algorithm: str, traces: list[list[TraceRecord]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RAW_HEADER)
        for rows in traces:
            for r in rows:
                writer.writerow([
                    algorithm, r.repetition, r.iteration, r.task,
                    ";".join(_format_float(v) for v in r.x),
                    _format_float(r.observed), _format_float(r.best_so_far),
                    _format_float(r.beta_bar), r.confidence_set_size,
                    _format_float(r.gamma), _format_float(r.nu),
                    r.safe_set_size, int(r.violation),
                ])


def best_curves(traces: list[list[TraceRecord]], iterations: int) -> np.ndarray:
    """Best-so-far per repetition at main-task iterations 1..iterations.

    Stalled iterations carry the previous best forward.
    """
    curves = np.full((len(traces), iterations), np.nan)
    for i, rows in enumerate(traces):
        best = np.inf
        by_iteration = {}
        for r in rows:
            if r.task == 1:
                best = min(best, r.observed)
                by_iteration[r.iteration] = best
        running = min((r.observed for r in rows if r.task == 1 and r.iteration == 0),
                      default=np.inf)
        for t in range(1, iterations + 1):
            running = by_iteration.get(t, running)
            curves[i, t - 1] = running
    return curves


def _aggregate_rows(algorithm: str, traces: list[list[TraceRecord]],
                    iterations: int) -> list[list]:
    curves = best_curves(traces, iterations)
    rows = []
    for t in range(1, iterations + 1):
        col = curves[:, t - 1]
        violations = sum(r.violation for rep in traces for r in rep if r.iteration == t)
        rows.append([
            algorithm, t,
            _format_float(np.median(col)), _format_float(np.quantile(col, 0.10)),
            _format_float(np.quantile(col, 0.90)), _format_float(np.mean(col)),
            _format_float(np.std(col)), violations,
        ])
    return rows


def cmd_run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rep_seeds = _repetition_seeds(config)
    manifest = {
        "config": serialize_config(config),
        "master_seed": config.seed,
        "repetition_seeds": rep_seeds,
        "versions": {
            "samsbo": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "algorithms": {},
    }
    any_success = False
    for algorithm in config.algorithms():
        started = time.perf_counter()
        traces: list[list[TraceRecord]] = [[] for _ in range(config.repetitions)]
        errors: dict[int, str] = {}
        jobs = min(config.jobs, config.repetitions)
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {
                    pool.submit(_run_one, config, algorithm, rep, rep_seeds[rep]): rep
                    for rep in range(config.repetitions)
                }
                for future in concurrent.futures.as_completed(futures):
                    rep = futures[future]
                    try:
                        traces[rep] = future.result()
                    except Exception as exc:  # noqa: BLE001 - repetition isolation
                        errors[rep] = str(exc)
        else:
            for rep in range(config.repetitions):
                try:
                    traces[rep] = _run_one(config, algorithm, rep, rep_seeds[rep])
                except Exception as exc:  # noqa: BLE001 - repetition isolation
                    errors[rep] = str(exc)
        succeeded = [t for t in traces if t]
        any_success = any_success or bool(succeeded)
        _write_raw_csv(out / f"{algorithm}_raw.csv", algorithm, succeeded)
        with open(out / f"{algorithm}_aggregate.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(AGGREGATE_HEADER)
            if succeeded and config.iterations:
                writer.writerows(_aggregate_rows(algorithm, succeeded, config.iterations))
        manifest["algorithms"][algorithm] = {
            "wall_time_seconds": time.perf_counter() - started,
            "errors": errors,
            "violations": sum(r.violation for t in succeeded for r in t),
            "evaluations": sum(len(t) for t in succeeded),
        }
    with open(out / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
    return 0 if any_success else 1


def cmd_verify_bounds(config: ExperimentConfig) -> int:
    reports = [
        verify.frequentist_coverage(trials=config.frequentist_trials,
                                    delta=config.delta, seed=config.seed),
        verify.bayesian_coverage(trials=config.bayesian_trials, delta=config.delta,
                                 rho=config.rho, eta=config.eta,
                                 mcmc_samples=config.mcmc_samples, seed=config.seed),
    ]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = []
    for report in reports:
        print(report.line())
        payload.append({
            "suite": report.name, "trials": report.trials,
            "successes": report.successes, "empirical": report.empirical,
            "target": report.target, "slack": report.slack, "passed": report.passed,
        })
    with open(out / "coverage.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
    return 0 if all(r.passed for r in reports) else 1


def cmd_plotdata(raw_paths: list[str], out_path: str) -> int:
    rows_by_alg: dict[str, dict[int, dict[int, float]]] = {}
    for path in raw_paths:
        with open(path, "r", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != RAW_HEADER:
                raise ConfigError(f"{path}: unexpected raw CSV schema {header}")
            for row in reader:
                record = dict(zip(RAW_HEADER, row))
                if int(record["task"]) != 1:
                    continue
                alg = record["algorithm"]
                rep = int(record["repetition"])
                rows_by_alg.setdefault(alg, {}).setdefault(rep, {})[
                    int(record["iteration"])] = float(record["best_so_far"])
    out_rows = []
    for alg in sorted(rows_by_alg):
        reps = rows_by_alg[alg]
        max_iter = max(max(d) for d in reps.values())
        curves = np.full((len(reps), max_iter), np.nan)
        for i, rep in enumerate(sorted(reps)):
            running = reps[rep].get(0, np.inf)
            for t in range(1, max_iter + 1):
                running = reps[rep].get(t, running)
                curves[i, t - 1] = running
        for t in range(1, max_iter + 1):
            col = curves[:, t - 1]
            out_rows.append([
                alg, t, _format_float(np.median(col)),
                _format_float(np.quantile(col, 0.10)),
                _format_float(np.quantile(col, 0.90)),
                _format_float(np.mean(col)), _format_float(np.std(col)),
            ])
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PLOTDATA_HEADER)
        writer.writerows(out_rows)
    return 0


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "algorithm", None):
        overrides["algorithm"] = args.algorithm
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    out = os.environ.get("SAMSBO_OUT") or getattr(args, "out", None)
    if out:
        overrides["out"] = out
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    return config


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="samsbo",
        description="Safe multi-task Bayesian optimization benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to a key = value configuration file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory (SAMSBO_OUT overrides)")
        p.add_argument("--algorithm", help="algorithm name or comma-separated list")
        p.add_argument("--jobs", type=int, help="concurrent repetitions")

    add_common(sub.add_parser("run", help="execute an optimization campaign"))
    add_common(sub.add_parser("verify-bounds", help="Monte Carlo coverage of the bounds"))
    plot = sub.add_parser("plotdata", help="summarize raw CSVs for plotting")
    plot.add_argument("raw", nargs="+", help="raw CSV files produced by run")
    plot.add_argument("--out", default="plotdata.csv", help="output CSV path")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_load_config(args))
        if args.command == "verify-bounds":
            return cmd_verify_bounds(_load_config(args))
        out = os.environ.get("SAMSBO_OUT")
        out_path = str(Path(out) / "plotdata.csv") if out else args.out
        return cmd_plotdata(args.raw, out_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
