"""Rendering figures from run logs.

Three figure kinds are built in:

* ``rate`` — the deployed per-slot interest rate, with the logged
  equilibrium rate overlaid as a dashed line so tracking error is visible
  at a glance.
* ``borrow`` — total borrowed reserves over time.
* ``utilization`` — pool utilization over time, on a fixed [0, 1] axis.

Rendering is deterministic: the same input logs produce byte-identical
PNGs.  Matplotlib normally stamps its own version and the current date
into PNG metadata, which breaks that, so the save path strips the
``Software`` key.  All validation — figure kind, non-empty selection,
schema of every input — happens before the output file is created, so a
failed render never leaves a partial file behind.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .runlog import RunLog, load_run_log

FIGURE_KINDS = ("rate", "borrow", "utilization")

_REQUIRED: dict[str, tuple[str, ...]] = {
    "rate": ("t", "r", "r_star"),
    "borrow": ("t", "B"),
    "utilization": ("t", "U"),
}

_Y_LABELS = {
    "rate": "interest rate",
    "borrow": "borrowed reserves",
    "utilization": "utilization",
}


class FigureError(ValueError):
    """The figure request itself is malformed (unknown kind, no runs)."""


@dataclass(frozen=True)
class FigureResult:
    """What a render produced: the output path and the plotted series.

    ``series`` maps column names to the exact (read-only) arrays that were
    drawn.  For a single run the keys are bare column names; with several
    runs they are prefixed ``label:column`` so the runs stay separable.
    """

    kind: str
    out_path: str
    series: dict[str, np.ndarray]


def _series_key(label: str, column: str, multi: bool) -> str:
    return f"{label}:{column}" if multi else column


def _draw(ax: plt.Axes, kind: str, runs: list[RunLog]) -> None:
    multi = len(runs) > 1
    for run in runs:
        t = run.columns["t"]
        if kind == "rate":
            ax.plot(t, run.columns["r"], lw=1.2, label=run.label)
            ax.plot(
                t,
                run.columns["r_star"],
                lw=1.0,
                ls="--",
                color="black",
                alpha=0.7,
                label=f"{run.label} equilibrium" if multi else "equilibrium",
            )
        elif kind == "borrow":
            ax.plot(t, run.columns["B"], lw=1.2, label=run.label)
        else:
            ax.plot(t, run.columns["U"], lw=1.2, label=run.label)
    if kind == "utilization":
        ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("slot")
    ax.set_ylabel(_Y_LABELS[kind])
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)


def render_figure(kind: str, run_csvs: list[str], out_path: str) -> FigureResult:
    """Render ``kind`` from the given run logs to a PNG at ``out_path``.

    Raises ``FigureError`` for an unknown kind or an empty run selection,
    and ``SchemaError`` if any log lacks a required column — in every
    failure case before ``out_path`` is touched.
    """
    if kind not in FIGURE_KINDS:
        raise FigureError(
            f"unknown figure kind {kind!r}; expected one of {', '.join(FIGURE_KINDS)}"
        )
    if not run_csvs:
        raise FigureError("no run logs selected; pass at least one CSV path")
    runs = [load_run_log(path, _REQUIRED[kind]) for path in run_csvs]

    multi = len(runs) > 1
    series = {
        _series_key(run.label, column, multi): run.columns[column]
        for run in runs
        for column in _REQUIRED[kind]
    }

    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=150)
    try:
        _draw(ax, kind, runs)
        fig.tight_layout()
        # Matplotlib stamps its version into the PNG Software field by
        # default, which would make output bytes depend on the install.
        fig.savefig(out_path, dpi=150, metadata={"Software": None})
    finally:
        plt.close(fig)
    return FigureResult(kind=kind, out_path=out_path, series=series)
