"""Command-line front end: run scenarios, reproduce experiments, sweep seeds.

The tool is a thin dispatcher over the harness; every command is scripted
end-to-end (no interactive steering) and writes artifacts under an output
directory taken from ``--out`` or the ``LENDLAB_OUT_DIR`` environment
variable.

Commands
--------
run         one scenario file, one seed, one run directory of CSV + config
reproduce   the canned rate-tracking / volatility-step experiments
sweep       the same scenario across N seeds, optionally in parallel
metrics     aggregate run directories into a metrics JSON

Exit codes: 0 success; 2 configuration error (bad file, bad keys, bad
arguments); 3 pool-invariant violation during simulation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from multiprocessing import Pool

import numpy as np

from .harness import (
    ScenarioError,
    load_scenario,
    parse_csv,
    reproduce_planner_experiment,
    reproduce_rate_experiment,
    run_scenario,
    scenario_from_dict,
    write_run,
)
from .metrics import (
    EmptyEquilibriumSetError,
    equilibrium_slots,
    optimality_index,
)
from .pool import PoolInvariantError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

OUT_DIR_ENV = "LENDLAB_OUT_DIR"


def _fail_config(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def _fail_invariant(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INVARIANT


def _resolve_out(args: argparse.Namespace) -> str | None:
    out = args.out if args.out is not None else os.environ.get(OUT_DIR_ENV)
    if not out:
        return None
    return out


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    if out is None:
        return _fail_config(f"no output directory (--out or ${OUT_DIR_ENV})")
    if args.seed is not None and args.seed < 0:
        return _fail_config(f"--seed must be >= 0, got {args.seed}")
    try:
        scenario = load_scenario(args.config)
    except ScenarioError as exc:
        return _fail_config(str(exc))
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    try:
        records = run_scenario(scenario)
    except PoolInvariantError as exc:
        return _fail_invariant(str(exc))
    try:
        run_dir = write_run(out, scenario, records)
    except OSError as exc:
        return _fail_config(f"cannot write run to {out}: {exc}")
    print(run_dir)
    return EXIT_OK


# --------------------------------------------------------------------------
# reproduce
# --------------------------------------------------------------------------


def _cmd_reproduce(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    if out is None:
        return _fail_config(f"no output directory (--out or ${OUT_DIR_ENV})")
    if args.seed < 0:
        return _fail_config(f"--seed must be >= 0, got {args.seed}")
    try:
        if args.experiment == "rate":
            summary = reproduce_rate_experiment(args.seed, out)
            errors = {
                name: run["median_terminal_error"]
                for name, run in summary["runs"].items()
            }
            line = "  ".join(f"{k}={v:.4g}" for k, v in sorted(errors.items()))
            print(f"median terminal |r - r*|: {line}")
        else:
            summary = reproduce_planner_experiment(args.seed, out)
            print(
                f"fires={len(summary['fires'])}  "
                f"mean U pre-step={summary['mean_u_pre_step']:.4f}  "
                f"post-replan={summary['mean_u_post_replan']:.4f}  "
                f"final c={summary['final_c']:.3f}"
            )
    except PoolInvariantError as exc:
        return _fail_invariant(str(exc))
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def _sweep_worker(task: tuple[str, int, str]) -> dict:
    """Run one seed of a sweep; returns a small per-seed summary.

    Module-level so it pickles; each worker loads the scenario itself and is
    fully isolated from its siblings.
    """
    config_path, seed, out = task
    scenario = load_scenario(config_path)
    scenario = dataclasses.replace(
        scenario, seed=seed, name=f"{scenario.name}_seed{seed:03d}"
    )
    try:
        records = run_scenario(scenario)
    except PoolInvariantError as exc:
        return {"seed": seed, "error": str(exc)}
    run_dir = write_run(out, scenario, records)
    rate_errors = [
        abs(rec.r - rec.r_star) for rec in records if math.isfinite(rec.r_star)
    ]
    return {
        "seed": seed,
        "run_dir": run_dir,
        "terminal_U": records[-1].U,
        "mean_abs_rate_error": float(np.mean(rate_errors)) if rate_errors else None,
    }


def _cmd_sweep(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    if out is None:
        return _fail_config(f"no output directory (--out or ${OUT_DIR_ENV})")
    if args.seeds < 1:
        return _fail_config(f"--seeds must be >= 1, got {args.seeds}")
    if args.parallel < 1:
        return _fail_config(f"--parallel must be >= 1, got {args.parallel}")
    try:
        load_scenario(args.config)  # validate before forking workers
    except ScenarioError as exc:
        return _fail_config(str(exc))

    tasks = [(args.config, seed, out) for seed in range(args.seeds)]
    if args.parallel == 1:
        results = [_sweep_worker(t) for t in tasks]
    else:
        with Pool(processes=min(args.parallel, args.seeds)) as pool:
            results = pool.map(_sweep_worker, tasks)

    failed = [r for r in results if "error" in r]
    summary = {"config": args.config, "seeds": args.seeds, "runs": results}
    try:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "sweep_summary.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        return _fail_config(f"cannot write sweep summary to {out}: {exc}")
    print(path)
    if failed:
        return _fail_invariant(
            f"{len(failed)}/{args.seeds} seeds violated pool invariants "
            f"(first: seed {failed[0]['seed']}: {failed[0]['error']})"
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def _run_metrics(run_dir: str) -> dict:
    records = parse_csv(os.path.join(run_dir, "run.csv"))
    with open(os.path.join(run_dir, "scenario.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    scenario = scenario_from_dict(doc)

    zeta = max(regime.zeta for regime in scenario.schedule.regimes)
    te = equilibrium_slots(records, zeta)
    members = set(te.slots)
    eq_rate_errors = [
        abs(rec.r - rec.r_star)
        for rec in records
        if rec.t in members and math.isfinite(rec.r_star)
    ]
    entry: dict = {
        "slots": len(records),
        "equilibrium_slots": len(te.slots),
        "terminal_U": records[-1].U,
        "mean_abs_rate_error_at_equilibrium": (
            float(np.mean(eq_rate_errors)) if eq_rate_errors else None
        ),
    }
    if scenario.planner is not None:
        try:
            entry["optimality_index"] = optimality_index(
                records,
                te,
                scenario.planner.u_opt,
                scenario.planner.gamma,
                step=scenario.schedule.regimes[0].step,
            )
        except EmptyEquilibriumSetError:
            entry["optimality_index"] = None
    return entry


def _cmd_metrics(args: argparse.Namespace) -> int:
    if not os.path.isdir(args.runs):
        return _fail_config(f"not a directory: {args.runs}")
    run_dirs = sorted(
        name
        for name in os.listdir(args.runs)
        if os.path.isfile(os.path.join(args.runs, name, "run.csv"))
    )
    if not run_dirs:
        return _fail_config(f"no run directories under {args.runs}")
    report = {}
    for name in run_dirs:
        try:
            report[name] = _run_metrics(os.path.join(args.runs, name))
        except (ScenarioError, ValueError, OSError) as exc:
            return _fail_config(f"{name}: {exc}")
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        return _fail_config(f"cannot write metrics to {args.out}: {exc}")
    print(args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lendlab",
        description="Discrete-time simulation laboratory for adaptive "
        "borrow-lending pools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed")
    p_run.add_argument("--out", default=None, help=f"output dir (${OUT_DIR_ENV})")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("reproduce", help="run a canned experiment")
    p_rep.add_argument("experiment", choices=("rate", "planner"))
    p_rep.add_argument("--seed", type=int, default=0)
    p_rep.add_argument("--out", default=None, help=f"output dir (${OUT_DIR_ENV})")
    p_rep.set_defaults(func=_cmd_reproduce)

    p_sweep = sub.add_parser("sweep", help="run a scenario across seeds 0..n-1")
    p_sweep.add_argument("--config", required=True, help="scenario JSON file")
    p_sweep.add_argument("--seeds", type=int, required=True, help="seed count")
    p_sweep.add_argument("--parallel", type=int, default=1, help="worker count")
    p_sweep.add_argument("--out", default=None, help=f"output dir (${OUT_DIR_ENV})")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_met = sub.add_parser("metrics", help="aggregate run dirs into JSON")
    p_met.add_argument("--runs", required=True, help="directory of run dirs")
    p_met.add_argument("--out", required=True, help="output JSON file")
    p_met.set_defaults(func=_cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
