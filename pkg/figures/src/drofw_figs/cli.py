"""Command line entry point: render-figs."""
from __future__ import annotations

import argparse
import glob as globlib
import sys

from .figs import FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render-figs",
        description="Render convergence figures from experiment trace CSVs",
    )
    parser.add_argument("--glob", required=True, help="glob matching input CSV files")
    parser.add_argument("--layout", choices=("rho", "alpha"), default="rho")
    parser.add_argument("--out", default="figs", help="output directory")
    parser.add_argument("--format", choices=("png", "svg"), default="png")
    parser.add_argument("--linear-gap", action="store_true",
                        help="plot the gap panel on a linear axis")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    paths = tuple(sorted(globlib.glob(args.glob)))
    if not paths:
        sys.stderr.write(f"no CSV files match {args.glob!r}\n")
        return 2
    spec = FigureSpec(
        csv_paths=paths,
        layout=args.layout,
        log_gap=not args.linear_gap,
        out_dir=args.out,
        fmt=args.format,
    )
    try:
        written = render(spec)
    except SchemaError as exc:
        sys.stderr.write(f"schema mismatch: {exc}\n")
        sys.stderr.write(f"offending columns: {', '.join(exc.columns)}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    for path in written:
        sys.stdout.write(f"{path}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
