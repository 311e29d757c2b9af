"""Reading simulation run logs.

A run log is a plain CSV with a header row; every cell parses as a float
(boolean flags are logged as 0/1, controller modes are ignored here).  The
reader checks the schema up front and names any missing column in the error
so a mismatched log fails loudly instead of plotting garbage.  Loaded
columns are returned as read-only arrays: this package never modifies its
inputs, and the frozen arrays keep downstream code honest about that.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np


class SchemaError(ValueError):
    """The run log does not carry the columns the figure needs."""


@dataclass(frozen=True)
class RunLog:
    """One loaded run: its path, a short label, and the requested columns."""

    path: str
    label: str
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return next(iter(self.columns.values())).size if self.columns else 0


def _label_for(path: str) -> str:
    """Label a run by its directory when the file itself is generic."""
    base = os.path.basename(path)
    stem = os.path.splitext(base)[0]
    if stem == "run":
        parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
        return parent or stem
    return stem


def load_run_log(path: str, required: tuple[str, ...]) -> RunLog:
    """Load ``required`` columns from the CSV at ``path``.

    Raises ``SchemaError`` naming every missing column, or on an empty log;
    unreadable paths raise the usual ``OSError``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing column(s) {', '.join(repr(c) for c in missing)}"
            )
        index = {c: header.index(c) for c in required}
        cells: dict[str, list[float]] = {c: [] for c in required}
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{i}: expected {len(header)} cells, got {len(row)}"
                )
            for c, j in index.items():
                try:
                    cells[c].append(float(row[j]))
                except ValueError:
                    raise SchemaError(
                        f"{path}:{i}: column {c!r} is not numeric: {row[j]!r}"
                    ) from None
    if not cells[required[0]]:
        raise SchemaError(f"{path}: no data rows")
    columns = {}
    for c, values in cells.items():
        arr = np.asarray(values, dtype=float)
        arr.flags.writeable = False
        columns[c] = arr
    return RunLog(path=path, label=_label_for(path), columns=columns)
