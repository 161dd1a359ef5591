#!/usr/bin/env python3
"""Check serialized tree activation times against a Bellman-Ford oracle.

Usage:
    oracle_tree.py TREE_JSON TIMES_CSV --cv 2.5 --source 0:0.0
                   [--source NODE:TIME ...] [--tolerance 1e-9]
                   --out report.json

TIMES_CSV holds the activation times produced by the system under test
(header row, then node,time lines). The oracle recomputes them from the
tree JSON with synchronous Bellman-Ford relaxation and reports the
largest absolute disagreement.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                os.pardir, "src"))

from validation_harness.report import OracleReport
from validation_harness.tree_oracle import (bellman_ford_times, load_tree,
                                            read_times_csv)


def parse_source(text: str) -> tuple[int, float]:
    node, _, t = text.partition(":")
    return int(node), float(t) if t else 0.0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("tree_json")
    ap.add_argument("times_csv")
    ap.add_argument("--cv", type=float, required=True,
                    help="conduction velocity in m/s")
    ap.add_argument("--source", action="append", required=True,
                    metavar="NODE[:TIME]", help="source node and start time")
    ap.add_argument("--tolerance", type=float, default=1e-9)
    ap.add_argument("--out", required=True, help="report JSON path")
    args = ap.parse_args(argv)

    try:
        tree = load_tree(args.tree_json)
        got = read_times_csv(args.times_csv)
        sources = [parse_source(s) for s in args.source]
        exact = bellman_ford_times(tree, args.cv, sources)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if len(got) != len(exact):
        print(f"error: {len(got)} times for {len(exact)} nodes",
              file=sys.stderr)
        return 2

    finite = np.isfinite(exact)
    if not np.array_equal(finite, np.isfinite(got)):
        dev = np.inf
    else:
        dev = float(np.max(np.abs(got[finite] - exact[finite]))) \
            if finite.any() else 0.0
    report = OracleReport(
        check="tree-activation-vs-bellman-ford",
        max_deviation=dev,
        tolerance=args.tolerance,
        artifacts=[args.tree_json, args.times_csv])
    report.to_json(args.out)
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
