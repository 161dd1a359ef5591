#!/usr/bin/env python3
"""Check mesh activation times against the analytic homogeneous solution.

Usage:
    oracle_eikonal.py MESH_TXT ACTIVATION_CSV --tensor iso:0.6
                      --source-vertex 0 [--t0 0.0] [--tolerance 0.05]
                      --out report.json

ACTIVATION_CSV holds the solver's vertex activation times (header row,
then vertex,time lines). For a constant tensor the exact field from a
point source is known in closed form; the report's max_deviation is the
L-infinity error relative to the largest exact time, so the tolerance is
a dimensionless fraction.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                os.pardir, "src"))

from validation_harness.eikonal_oracle import (analytic_times,
                                               load_mesh_vertices,
                                               parse_tensor,
                                               read_activation_csv)
from validation_harness.report import OracleReport


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mesh")
    ap.add_argument("activation_csv")
    ap.add_argument("--tensor", required=True,
                    help="'iso:v' or d11,d12,d13,d22,d23,d33")
    ap.add_argument("--source-vertex", type=int, required=True)
    ap.add_argument("--t0", type=float, default=0.0)
    ap.add_argument("--tolerance", type=float, default=0.05,
                    help="relative L-infinity tolerance")
    ap.add_argument("--out", required=True, help="report JSON path")
    args = ap.parse_args(argv)

    try:
        verts = load_mesh_vertices(args.mesh)
        tensor = parse_tensor(args.tensor)
        got = read_activation_csv(args.activation_csv)
        if not 0 <= args.source_vertex < len(verts):
            raise ValueError(f"source vertex {args.source_vertex} "
                             f"out of range for {len(verts)} vertices")
        exact = analytic_times(verts, tensor, verts[args.source_vertex],
                               args.t0)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if len(got) != len(exact):
        print(f"error: {len(got)} times for {len(exact)} vertices",
              file=sys.stderr)
        return 2

    abs_dev = float(np.max(np.abs(got - exact)))
    scale = float(np.max(exact - args.t0))
    rel_dev = abs_dev / scale if scale > 0 else abs_dev
    report = OracleReport(
        check="eikonal-vs-analytic",
        max_deviation=rel_dev,
        tolerance=args.tolerance,
        artifacts=[args.mesh, args.activation_csv],
        max_abs_deviation=abs_dev,
        max_rel_deviation=rel_dev)
    report.to_json(args.out)
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
