"""Convergence figures for experiment trace CSVs."""
from .figs import (
    EXPECTED_COLUMNS,
    GAP_FLOOR,
    FigureSpec,
    SchemaError,
    build_figure,
    cell_label,
    figure_structure,
    read_trace,
    render,
)

__all__ = [
    "EXPECTED_COLUMNS",
    "GAP_FLOOR",
    "FigureSpec",
    "SchemaError",
    "build_figure",
    "cell_label",
    "figure_structure",
    "read_trace",
    "render",
]

__version__ = "0.1.0"
