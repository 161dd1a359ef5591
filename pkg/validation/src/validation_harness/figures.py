"""Figure generation from identification run directories.

Reads only the serialized run artifacts (CSV/JSON) and renders:

- ecg_band:             12-lead panels, reference trace + measured-beat
                        envelope + ensemble min/max band
- pair_plot:            parameter scatter matrix of the accepted ensemble
- activation_summary:   per-member maximum activation time, with the
                        min / median / max members highlighted
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt   # noqa: E402
import numpy as np                # noqa: E402


def read_trace_csv(path: str) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Return (t_ms, lead names, (n_leads, n_samples) matrix)."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if not header or header[0] != "t_ms":
        raise ValueError(f"{path}: not a trace CSV (header {header[:2]})")
    data = np.asarray([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], header[1:], data[:, 1:].T


def load_run(run_dir: str) -> dict:
    cfg_path = os.path.join(run_dir, "run_config.json")
    ref_path = os.path.join(run_dir, "reference.csv")
    ens_dir = os.path.join(run_dir, "ensemble")
    for p in (cfg_path, ref_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing run artifact: {p}")
    if not os.path.isdir(ens_dir):
        raise FileNotFoundError(f"missing ensemble directory: {ens_dir}")
    members = sorted(d for d in os.listdir(ens_dir)
                     if d.startswith("member_"))
    if not members:
        raise ValueError(f"empty ensemble in {run_dir}")
    with open(cfg_path) as fh:
        cfg = json.load(fh)
    t_ref, leads, ref = read_trace_csv(ref_path)
    run = {"cfg": cfg, "t_ref": t_ref, "leads": leads, "ref": ref,
           "members": [], "envelope": None}
    env_min = os.path.join(run_dir, "envelope_min.csv")
    env_max = os.path.join(run_dir, "envelope_max.csv")
    if os.path.exists(env_min) and os.path.exists(env_max):
        run["envelope"] = (read_trace_csv(env_min)[2],
                           read_trace_csv(env_max)[2])
    for m in members:
        mdir = os.path.join(ens_dir, m)
        with open(os.path.join(mdir, "metadata.json")) as fh:
            meta = json.load(fh)
        _, _, trace = read_trace_csv(os.path.join(mdir, "ecg.csv"))
        run["members"].append({"name": m, "meta": meta, "trace": trace})
    return run


def make_ecg_band(run: dict, path: str) -> None:
    leads = run["leads"]
    ref = run["ref"]
    t = run["t_ref"]
    n = min([ref.shape[1]] + [m["trace"].shape[1] for m in run["members"]])
    stack = np.stack([m["trace"][:, :n] for m in run["members"]])
    lo, hi = stack.min(axis=0), stack.max(axis=0)
    fig, axes = plt.subplots(3, 4, figsize=(14, 8), sharex=True)
    for k, name in enumerate(leads):
        ax = axes[k // 4][k % 4]
        if run["envelope"] is not None:
            e0, e1 = run["envelope"]
            ax.fill_between(t[:n], e0[k, :n], e1[k, :n], color="0.8",
                            label="beats")
        ax.fill_between(t[:n], lo[k], hi[k], color="tab:blue", alpha=0.35,
                        label="ensemble")
        ax.plot(t[:n], ref[k, :n], "k", lw=1.0, label="reference")
        ax.set_title(name, fontsize=9)
        if k == 0:
            ax.legend(fontsize=6, loc="upper right")
    for ax in axes[-1]:
        ax.set_xlabel("t [ms]", fontsize=8)
    fig.suptitle("12-lead ECG: reference, beat envelope, ensemble band")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


PARAM_ORDER = ("l_i_L", "l_i_R", "l_F1_L", "l_F2_L", "l_F1_R", "l_F2_R",
               "a_F1_L", "a_F2_L", "a_F1_R", "a_F2_R", "RT", "CV")


def make_pair_plot(run: dict, path: str) -> None:
    names = [n for n in PARAM_ORDER if n in run["cfg"]["bounds"]]
    bounds = np.asarray([run["cfg"]["bounds"][n] for n in names])
    thetas = np.asarray([[m["meta"]["theta"][n] for n in names]
                         for m in run["members"]])
    truth = run["cfg"].get("synthetic", {}).get("theta")
    d = len(names)
    fig, axes = plt.subplots(d, d, figsize=(1.3 * d, 1.3 * d))
    for i in range(d):
        for j in range(d):
            ax = axes[i][j]
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_xlim(bounds[j])
            if i == j:
                ax.hist(thetas[:, i], bins=10, range=bounds[i],
                        color="tab:blue")
                if truth is not None:
                    ax.axvline(truth[i], color="tab:red", lw=0.8)
            else:
                ax.set_ylim(bounds[i])
                ax.plot(thetas[:, j], thetas[:, i], ".", ms=3,
                        color="tab:blue")
                if truth is not None:
                    ax.plot([truth[j]], [truth[i]], "r+", ms=6)
            if i == d - 1:
                ax.set_xlabel(names[j], fontsize=7)
            if j == 0:
                ax.set_ylabel(names[i], fontsize=7)
    fig.suptitle("ensemble parameter pair plot", y=0.995)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def make_activation_summary(run: dict, path: str) -> None:
    names = [m["name"] for m in run["members"]]
    times = np.asarray([m["meta"]["max_activation_ms"]
                        for m in run["members"]])
    order = np.argsort(times)
    marks = {int(order[0]): ("min", "tab:green"),
             int(order[len(order) // 2]): ("median", "tab:orange"),
             int(order[-1]): ("max", "tab:red")}
    colors = [marks.get(i, (None, "tab:blue"))[1] for i in range(len(times))]
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(times)), 4))
    ax.bar(range(len(times)), times, color=colors)
    for i, (label, color) in marks.items():
        ax.text(i, times[i], label, ha="center", va="bottom", fontsize=7,
                color=color)
    ax.set_xticks(range(len(times)))
    ax.set_xticklabels([n.replace("member_", "") for n in names],
                       fontsize=6, rotation=90)
    ax.set_ylabel("max activation time [ms]")
    ax.set_title("ensemble activation summary")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def make_all(run_dir: str, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    run = load_run(run_dir)
    paths = []
    for fname, fn in (("ecg_band.png", make_ecg_band),
                      ("pair_plot.png", make_pair_plot),
                      ("activation_summary.png", make_activation_summary)):
        p = os.path.join(out_dir, fname)
        fn(run, p)
        paths.append(p)
    return paths
