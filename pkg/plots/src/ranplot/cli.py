"""Command line: render one figure from experiment CSV logs."""

import argparse
import sys

from .figures import FIGURES, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render sdran experiment figures")
    parser.add_argument("--fig", required=True, choices=sorted(FIGURES),
                        help="figure id")
    parser.add_argument("--in", dest="inputs", required=True,
                        help="glob over input CSV files")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        path = render(FigureSpec(figure=args.fig, inputs=args.inputs,
                                 output=args.out))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
