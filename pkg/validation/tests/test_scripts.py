import json
import os
import subprocess
import sys

SCRIPTS = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                       os.pardir, "scripts")


def run(script, *args):
    return subprocess.run([sys.executable, os.path.join(SCRIPTS, script),
                           *map(str, args)], capture_output=True, text=True)


def test_oracle_tree_pass_and_fail(tmp_path):
    tree = tmp_path / "tree.json"
    tree.write_text(json.dumps({
        "nodes": [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]],
        "uv": [[0.0, 0.0], [0.0, 0.0]],
        "edges": [[0, 1]], "root": 0, "pmjs": [1]}))
    good = tmp_path / "good.csv"
    good.write_text("node,time\n0,0.0\n1,5.0\n")
    rep = tmp_path / "rep.json"
    p = run("oracle_tree.py", tree, good, "--cv", 2.0, "--source", "0:0.0",
            "--out", rep)
    assert p.returncode == 0, p.stderr
    assert json.loads(rep.read_text())["passed"] is True

    bad = tmp_path / "bad.csv"
    bad.write_text("node,time\n0,0.0\n1,5.1\n")
    p = run("oracle_tree.py", tree, bad, "--cv", 2.0, "--source", "0:0.0",
            "--out", rep)
    assert p.returncode == 1
    assert json.loads(rep.read_text())["passed"] is False


def test_oracle_tree_bad_input_is_exit_2(tmp_path):
    p = run("oracle_tree.py", tmp_path / "missing.json",
            tmp_path / "missing.csv", "--cv", 2.0, "--source", "0",
            "--out", tmp_path / "rep.json")
    assert p.returncode == 2


def test_oracle_eikonal_pass(tmp_path):
    mesh = tmp_path / "m.txt"
    mesh.write_text("v 0 0 0\nv 3 4 0\nv 6 8 0\nt 0 1 2 0\n")
    times = tmp_path / "t.csv"
    # exact values for iso:1 from vertex 0: distances 0, 5, 10
    times.write_text("vertex,time\n0,0.0\n1,5.0\n2,10.0\n")
    rep = tmp_path / "rep.json"
    p = run("oracle_eikonal.py", mesh, times, "--tensor", "iso:1.0",
            "--source-vertex", 0, "--tolerance", 1e-9, "--out", rep)
    assert p.returncode == 0, p.stderr
    data = json.loads(rep.read_text())
    assert data["passed"] is True
    assert data["max_rel_deviation"] <= 1e-9


def test_oracle_gp_pass(tmp_path):
    model = tmp_path / "gp.json"
    model.write_text(json.dumps({
        "x_norm": [[0.2, 0.2], [0.8, 0.8]], "y_std": [1.0, -1.0],
        "eta": 1.0, "lengthscales": [0.5, 0.5], "noise_var": 1e-4,
        "bounds": [[0.0, 1.0], [0.0, 1.0]], "y_mean": 0.0, "y_scale": 1.0}))
    q = tmp_path / "q.csv"
    q.write_text("a,b\n0.5,0.5\n")
    # recompute the expected mu/var with the documented kernel
    import numpy as np
    x = np.asarray([[0.2, 0.2], [0.8, 0.8]])
    xq = np.asarray([[0.5, 0.5]])

    def kern(a, b):
        r = np.sqrt((((a[:, None, :] - b[None, :, :]) / 0.5) ** 2)
                    .sum(axis=2))
        return np.exp(-r)

    k = kern(x, x) + (1e-4 + 1e-8) * np.eye(2)
    ks = kern(xq, x)
    mu = float((ks @ np.linalg.solve(k, np.asarray([1.0, -1.0])))[0])
    var = float((1.0 - ks @ np.linalg.solve(k, ks.T))[0, 0])
    preds = tmp_path / "p.csv"
    preds.write_text(f"mu,var\n{mu:.17g},{var:.17g}\n")
    rep = tmp_path / "rep.json"
    p = run("oracle_gp.py", model, q, preds, "--tolerance", 1e-10,
            "--out", rep)
    assert p.returncode == 0, p.stderr
    assert json.loads(rep.read_text())["passed"] is True


def test_make_figures_missing_run_is_exit_2(tmp_path):
    p = run("make_figures.py", tmp_path / "nope", "--out", tmp_path / "f")
    assert p.returncode == 2
