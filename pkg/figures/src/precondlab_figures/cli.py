"""Command line entry: render one figure from experiment CSVs.

    render --figure robustness_final --in robustness_summary.csv --out fig.png
"""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_IDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render", description="Render a precondlab figure from CSV logs."
    )
    parser.add_argument("--figure", required=True, choices=FIGURE_IDS, help="figure id")
    parser.add_argument(
        "--in", dest="inputs", action="append", required=True, metavar="CSV",
        help="input CSV (repeatable)",
    )
    parser.add_argument("--out", required=True, metavar="PNG", help="output PNG path")
    parser.add_argument("--dpi", type=int, default=130)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(figure_id=args.figure, inputs=args.inputs, output=args.out, dpi=args.dpi)
    try:
        out = render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
