"""
Command handlers. Results go to stdout; logs and errors go to stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import structlog

from app.cli.router import router
from app.config import settings
from app.core.errors import DatasetError, UsageError
from app.core.monitoring import write_metrics
from app.data.pipeline import split_size
from app.engine.kernel_embedding import kernel_error_stats, sample_rff_params
from app.engine.load_allocation import allocate, optimized_return_sweep, return_curve
from app.oracles import SUITES, run_suite
from app.schemas.simulation import SimConfig
from app.simulation.artifacts import speedup_table, write_manifest, write_trace
from app.simulation.profiles import build_profiles
from app.simulation.runner import (
    epoch_batches,
    prepare_data,
    redundancy_policy,
    resolve_data_dir,
    run_training,
)
from app.simulation.sim_config import load_sim_config

logger = structlog.get_logger()


def _parse_sweep(spec: str) -> np.ndarray:
    try:
        t_min, t_max, steps = spec.split(":")
        times = np.linspace(float(t_min), float(t_max), int(steps))
    except ValueError as exc:
        raise UsageError(f"--sweep expects TMIN:TMAX:STEPS, got '{spec}'") from exc
    if len(times) < 1 or times[0] < 0 or times[-1] < times[0]:
        raise UsageError(f"--sweep range '{spec}' must satisfy 0 <= TMIN <= TMAX, STEPS >= 1")
    return times


def _batches_per_epoch(config: SimConfig) -> int:
    try:
        rows = split_size(resolve_data_dir(config), config.dataset, "train")
    except DatasetError as exc:
        logger.warning("batch_count_unavailable", error=exc.message, fallback=1)
        return 1
    return epoch_batches(config, rows)


@router.register("simulate")
def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_sim_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    scheme = args.scheme or config.scheme
    schemes = ["uncoded", "coded"] if scheme == "both" else [scheme]
    prepared = prepare_data(config)

    results = {}
    for name in schemes:
        run_config = config.model_copy(update={"scheme": name})
        run_dir = out_dir / name if len(schemes) > 1 else out_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        result = run_training(run_config, prepared=prepared, out_dir=run_dir)

        trace_path = run_dir / "trace.csv"
        manifest_path = run_dir / "manifest.json"
        write_trace(result.records, trace_path)
        manifest = result.manifest.model_copy(
            update={
                "artifacts": {
                    **result.manifest.artifacts,
                    "trace": str(trace_path),
                    "manifest": str(manifest_path),
                }
            }
        )
        write_manifest(manifest, manifest_path)
        results[name] = result.records

        print(
            f"{name}: final accuracy {manifest.final_accuracy:.4f}, "
            f"simulated time {manifest.total_wall_clock_s / 3600.0:.2f} h, "
            f"{manifest.steps} steps"
        )

    if settings.METRICS_ENABLED:
        write_metrics(out_dir / "metrics.prom")

    if len(schemes) > 1:
        print()
        print(speedup_table([(config.dataset, config.gamma, results["uncoded"], results["coded"])]))
    logger.info("simulate_finished", out=str(out_dir), schemes=schemes)
    return 0


@router.register("allocate")
def cmd_allocate(args: argparse.Namespace) -> int:
    config = load_sim_config(args.config)
    profiles = build_profiles(config)

    if args.sweep:
        print("t,expected_return")
        for t, total in optimized_return_sweep(profiles, _parse_sweep(args.sweep)):
            print(f"{t!r},{total!r}")
        return 0

    if args.curve is not None:
        if args.curve < 0:
            raise UsageError(f"--curve expects a non-negative time, got {args.curve}")
        first = profiles[0]
        loads = np.arange(first.local_size + 1, dtype=np.float64)
        print("load,expected_return")
        for load, value in zip(loads, return_curve(first, args.curve, loads)):
            print(f"{int(load)},{value!r}")
        return 0

    m = config.batch_size_global
    allocation = allocate(profiles, m, redundancy_policy(config), epsilon=config.epsilon_fraction * m)
    batches = args.batches if args.batches is not None else _batches_per_epoch(config)
    if batches < 1:
        raise UsageError(f"--batches expects a positive count, got {batches}")
    # every batch index shares the same profiles and m, hence the same allocation
    for _ in range(batches):
        print(allocation.to_json())
    return 0


@router.register("oracle")
def cmd_oracle(args: argparse.Namespace) -> int:
    if args.name not in SUITES:
        raise UsageError(f"unknown oracle suite '{args.name}' (known: {', '.join(sorted(SUITES))})")
    report = run_suite(args.name, seed=args.seed)
    print(f"suite {report.suite}")
    for check in report.checks:
        ref = "-" if check.reference is None else f"{check.reference:.6g}"
        ci = ""
        if check.ci_low is not None and check.ci_high is not None:
            ci = f" ci=[{check.ci_low:.6g}, {check.ci_high:.6g}]"
        n = "" if check.samples is None else f" n={check.samples}"
        verdict = "ok" if check.passed else "FAIL"
        print(
            f"  {verdict:<4} {check.name}: value={check.value:.6g} reference={ref} "
            f"tol={check.tolerance:.3g}{n}{ci}"
        )
    return 0 if report.passed else 2


@router.register("embed-check")
def cmd_embed_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    xs = rng.random((args.pairs, args.dim))
    ys = rng.random((args.pairs, args.dim))
    rff = sample_rff_params(args.seed, args.dim, args.q, args.sigma)
    stats = kernel_error_stats(rff, xs, ys)
    json.dump({"d": args.dim, "q": args.q, "sigma": args.sigma, **stats}, sys.stdout, indent=2)
    print()
    return 0
