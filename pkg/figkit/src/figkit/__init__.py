"""figkit: batch figure generation from simulation run logs.

The package is model-free: it consumes only the CSV logs a simulation run
leaves behind, and renders them to PNG deterministically (same inputs, same
bytes).  Three figure kinds are built in: the deployed interest rate with
its logged equilibrium overlay, the borrowed reserves, and the utilization.
"""

from .figures import FIGURE_KINDS, FigureError, FigureResult, render_figure
from .runlog import RunLog, SchemaError, load_run_log

__version__ = "0.1.0"

__all__ = [
    "FIGURE_KINDS",
    "FigureError",
    "FigureResult",
    "RunLog",
    "SchemaError",
    "load_run_log",
    "render_figure",
    "__version__",
]
