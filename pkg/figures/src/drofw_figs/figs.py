"""Two-panel convergence figures from experiment trace CSVs.

Consumes the solver's per-cell CSV logs (schema below) and renders, for each
cell, a figure with the primal/dual values on top and the log-scale
sub-optimality and duality-gap curves underneath.  Rendering is a pure
function of the CSV bytes and the figure spec.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# fixed hash salt keeps SVG element ids stable across processes
matplotlib.rcParams["svg.hashsalt"] = "drofw-figs"

import matplotlib.pyplot as plt  # noqa: E402

EXPECTED_COLUMNS = (
    "k",
    "gamma",
    "gap_est",
    "primal_value",
    "dual_value",
    "primal_subopt",
    "duality_gap",
    "time_ms",
)

GAP_FLOOR = 1e-12

_CELL_NAME = re.compile(r"cell_rho(?P<rho>[^_]+)_alpha(?P<alpha>.+)\.csv$")


class SchemaError(ValueError):
    """CSV header does not match the experiment trace schema."""

    def __init__(self, path, missing, unexpected):
        self.columns = sorted(missing) + sorted(unexpected)
        parts = []
        if missing:
            parts.append(f"missing columns: {', '.join(sorted(missing))}")
        if unexpected:
            parts.append(f"unexpected columns: {', '.join(sorted(unexpected))}")
        super().__init__(f"{path}: " + "; ".join(parts))


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple[str, ...]
    layout: str = "rho"
    log_gap: bool = True
    out_dir: str = "figs"
    fmt: str = "png"

    def __post_init__(self):
        if self.layout not in ("rho", "alpha"):
            raise ValueError(f"layout must be 'rho' or 'alpha', got {self.layout!r}")
        if self.fmt not in ("png", "svg"):
            raise ValueError(f"format must be 'png' or 'svg', got {self.fmt!r}")
        if not self.csv_paths:
            raise ValueError("no input CSV files")


def read_trace(path) -> dict[str, list[float]]:
    """Parse one trace CSV, validating the header and requiring data rows."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(path, set(EXPECTED_COLUMNS), set()) from None
        missing = set(EXPECTED_COLUMNS) - set(header)
        unexpected = set(header) - set(EXPECTED_COLUMNS)
        if missing or unexpected or list(header) != list(EXPECTED_COLUMNS):
            raise SchemaError(path, missing, unexpected)
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: empty trace, nothing to plot")
    columns = list(zip(*rows))
    return {name: list(col) for name, col in zip(header, columns)}


def cell_label(path, layout: str) -> str:
    """Label a trace by the swept parameter encoded in its file name."""
    match = _CELL_NAME.search(Path(path).name)
    if not match:
        return Path(path).stem
    if layout == "rho":
        return f"rho={match.group('rho')}"
    return f"alpha={match.group('alpha')}"


def _floored(values):
    return [max(v, GAP_FLOOR) for v in values]


def build_figure(trace: dict[str, list[float]], label: str, log_gap: bool = True):
    """Two stacked panels: value curves on top, gap curves below."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(5.0, 6.0), sharex=True)
    k = trace["k"]

    top.plot(k, trace["primal_value"], color="tab:blue", label="primal value")
    top.plot(k, trace["dual_value"], color="tab:red", label="dual value")
    top.set_ylabel("value")
    top.set_title(label)
    top.legend(loc="best")

    bottom.plot(k, _floored(trace["primal_subopt"]), color="tab:blue",
                label="primal sub-optimality")
    bottom.plot(k, _floored(trace["duality_gap"]), color="tab:red",
                label="duality gap")
    if log_gap:
        bottom.set_yscale("log")
    bottom.set_xlabel("iteration k")
    bottom.set_ylabel("gap")
    bottom.legend(loc="best")

    fig.tight_layout()
    return fig


def figure_structure(fig) -> dict:
    """Structural fingerprint of a rendered figure for regression checks."""
    return {
        "panels": len(fig.axes),
        "series": [len(ax.lines) for ax in fig.axes],
        "rows": [[len(line.get_xdata()) for line in ax.lines] for ax in fig.axes],
    }


def output_name(csv_path, fmt: str) -> str:
    stem = Path(csv_path).stem
    return f"{stem}.{fmt}"


def render(spec: FigureSpec) -> list[Path]:
    """Render one two-panel figure per input CSV; returns the written paths.

    All inputs are validated before anything is written, so a schema error or
    an empty trace leaves the output directory untouched.
    """
    traces = [(path, read_trace(path)) for path in spec.csv_paths]
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path, trace in traces:
        fig = build_figure(trace, cell_label(path, spec.layout), spec.log_gap)
        target = out_dir / output_name(path, spec.fmt)
        fig.savefig(target, metadata=_deterministic_metadata(spec.fmt))
        plt.close(fig)
        written.append(target)
    return written


def _deterministic_metadata(fmt: str) -> dict:
    # strip the writer fields that would otherwise embed timestamps/versions
    if fmt == "svg":
        return {"Date": None}
    return {"Software": None}
