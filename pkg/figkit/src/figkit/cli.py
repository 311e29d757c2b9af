"""Command-line interface: ``figkit <figure> --runs <csv...> --out <png>``.

Exit codes: 0 on success, 2 on any input problem (unknown figure, missing
or malformed run log, unwritable output path).
"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureError, render_figure
from .runlog import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figkit",
        description="Render publication figures from simulation run logs.",
    )
    parser.add_argument(
        "figure",
        choices=FIGURE_KINDS,
        help="which figure to render",
    )
    parser.add_argument(
        "--runs",
        nargs="+",
        required=True,
        metavar="CSV",
        help="one or more run-log CSV files",
    )
    parser.add_argument(
        "--out",
        required=True,
        metavar="PNG",
        help="output PNG path",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = render_figure(args.figure, args.runs, args.out)
    except (FigureError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
