#!/usr/bin/env python3
"""Render the standard figures for an identification run directory.

Usage:
    make_figures.py RUN_DIR --out FIG_DIR

Writes ecg_band.png, pair_plot.png and activation_summary.png to
FIG_DIR. Exits nonzero if the run directory is missing artifacts or the
ensemble is empty.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                os.pardir, "src"))

from validation_harness.figures import make_all


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir")
    ap.add_argument("--out", required=True, help="output figure directory")
    args = ap.parse_args(argv)
    try:
        paths = make_all(args.run_dir, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
