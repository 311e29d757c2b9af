#!/usr/bin/env python3
"""Rate-tracking comparison, end to end.

Runs the canned regime-hopping experiment (regression controller vs the
piecewise-linear utilization curve, at borrower elasticity 50 and 5),
prints the per-run summary, and — when figkit is installed — renders the
deployed-rate figures next to the run logs.

    python3 demos/rate_tracking_demo.py --seed 0 --out out/rate_demo
"""

from __future__ import annotations

import argparse
import os

from lendlab.harness import reproduce_rate_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/rate_demo")
    args = parser.parse_args()

    summary = reproduce_rate_experiment(args.seed, args.out)

    print(f"seed {summary['seed']}  ({len(summary['runs'])} runs)")
    print(f"{'run':<24}{'median |r - r*|':>18}{'max B drawdown':>18}{'exploring':>12}")
    for name in sorted(summary["runs"]):
        run = summary["runs"][name]
        print(
            f"{name:<24}"
            f"{run['median_terminal_error']:>18.6f}"
            f"{run['max_borrow_drawdown']:>18.4f}"
            f"{run['exploration_fraction']:>12.3f}"
        )

    try:
        from figkit import render_figure
    except ImportError:
        print("\nfigkit not installed; skipping figures")
        return 0

    for eta in (50, 5):
        runs = [
            os.path.join(args.out, f"rate_eta{eta}_{kind}", "run.csv")
            for kind in ("lse", "baseline")
        ]
        out_png = os.path.join(args.out, f"rate_eta{eta}.png")
        render_figure("rate", runs, out_png)
        print(f"wrote {out_png}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
