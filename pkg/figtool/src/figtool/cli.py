"""fig4 command line entry point."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt

from .render import FigureSpec, MissingCase, SchemaMismatch, render_fig4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fig4",
        description="Render the indistinguishability comparison figure from a results.csv",
    )
    parser.add_argument("--csv", required=True, help="input results.csv")
    parser.add_argument("--out", required=True, help="output image path (png, svg, pdf, ...)")
    parser.add_argument("--no-inset", action="store_true", help="skip the improvement inset")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(csv_path=args.csv, out_path=args.out, no_inset=args.no_inset)
    try:
        fig = render_fig4(spec)
        plt.close(fig)
    except (SchemaMismatch, MissingCase) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
