#!/usr/bin/env python3
"""Check serialized GP predictions against a dense-solve oracle.

Usage:
    oracle_gp.py MODEL_JSON QUERIES_CSV PREDICTIONS_CSV
                 [--tolerance 1e-7] --out report.json

QUERIES_CSV holds one query point per row (header row, original
parameter units); PREDICTIONS_CSV holds the matching mu,var rows
produced by the system under test. The oracle recomputes the posterior
with one explicit dense solve per batch and reports the largest
disagreement across both columns.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                os.pardir, "src"))

from validation_harness.gp_oracle import (dense_predict, load_model,
                                          read_matrix_csv)
from validation_harness.report import OracleReport


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model_json")
    ap.add_argument("queries_csv")
    ap.add_argument("predictions_csv")
    ap.add_argument("--tolerance", type=float, default=1e-7)
    ap.add_argument("--out", required=True, help="report JSON path")
    args = ap.parse_args(argv)

    try:
        model = load_model(args.model_json)
        queries = read_matrix_csv(args.queries_csv)
        preds = read_matrix_csv(args.predictions_csv)
        if preds.shape != (queries.shape[0], 2):
            raise ValueError(f"predictions shape {preds.shape} does not "
                             f"match {queries.shape[0]} queries x (mu,var)")
        mu, var = dense_predict(model, queries)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    dev_mu = float(np.max(np.abs(preds[:, 0] - mu))) if len(mu) else 0.0
    dev_var = float(np.max(np.abs(preds[:, 1] - var))) if len(var) else 0.0
    report = OracleReport(
        check="gp-predict-vs-dense-solve",
        max_deviation=max(dev_mu, dev_var),
        tolerance=args.tolerance,
        artifacts=[args.model_json, args.queries_csv, args.predictions_csv])
    report.to_json(args.out)
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
