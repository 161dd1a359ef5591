#!/usr/bin/env python3
"""Benchmark the compiled eikonal kernel against the pure-Python fallback.

Runs the anisotropic fast-iterative solver on structured cube meshes of
increasing resolution with both backends and reports wall-clock times, the
speedup, and the max absolute difference between the two solutions.

The pure-Python backend is forced in a subprocess via PURKINJE_ECG_FORCE_PY
so that both kernels run in an otherwise identical environment.

Usage:  python benchmarks/bench_fim.py [--sizes 10 16 24] [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

WORKER = r"""
import json, sys, time
import numpy as np
from purkinje_ecg.conduction import ConductivityModel, EikonalSolver, fim_backend
from purkinje_ecg.fixtures import cube_mesh

spec = json.loads(sys.argv[1])
vm = cube_mesh(spec["n"], size=20.0, fiber=(1.0, 0.0, 0.0))
solver = EikonalSolver(vm, cm=ConductivityModel())
best = float("inf")
for _ in range(spec["repeats"]):
    t0 = time.perf_counter()
    tau = solver.solve([(0, 0.0)])
    best = min(best, time.perf_counter() - t0)
np.save(spec["out"], tau)
print(json.dumps({"backend": fim_backend(), "seconds": best,
                  "n_vertices": vm.n_vertices, "n_tets": len(vm.tets)}))
"""


def run_backend(n: int, repeats: int, force_py: bool, out: str) -> dict:
    env = dict(os.environ)
    if force_py:
        env["PURKINJE_ECG_FORCE_PY"] = "1"
    else:
        env.pop("PURKINJE_ECG_FORCE_PY", None)
    spec = json.dumps({"n": n, "repeats": repeats, "out": out})
    proc = subprocess.run([sys.executable, "-c", WORKER, spec],
                          capture_output=True, text=True, env=env, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 12, 16, 20])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    import numpy as np

    header = (f"{'divisions':>9} {'vertices':>9} {'tets':>9} "
              f"{'compiled [s]':>13} {'python [s]':>11} "
              f"{'speedup':>8} {'max |diff|':>11}")
    print(header)
    print("-" * len(header))
    with tempfile.TemporaryDirectory() as tmp:
        for n in args.sizes:
            out_c = os.path.join(tmp, f"c{n}.npy")
            out_p = os.path.join(tmp, f"p{n}.npy")
            rc = run_backend(n, args.repeats, force_py=False, out=out_c)
            rp = run_backend(n, args.repeats, force_py=True, out=out_p)
            if rc["backend"] == rp["backend"]:
                print("note: compiled kernel unavailable; "
                      "comparing python against itself")
            diff = float(np.max(np.abs(np.load(out_c) - np.load(out_p))))
            print(f"{n:>9d} {rc['n_vertices']:>9d} {rc['n_tets']:>9d} "
                  f"{rc['seconds']:>13.4f} {rp['seconds']:>11.4f} "
                  f"{rp['seconds'] / max(rc['seconds'], 1e-12):>8.1f} "
                  f"{diff:>11.3e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
