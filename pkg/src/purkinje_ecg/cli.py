"""Command-line entry points: fixture generation, flattening, tree growth,
forward simulation, identification, pacing what-if, and beat ingestion."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fixtures, inference, pipeline
from .conduction import write_vtk
from .ecg import EcgTrace, LEAD_NAMES
from .errors import (BudgetExhausted, ConfigError, GrowthError, MeshError,
                     SolverError)
from .inference import PARAM_NAMES
from .meshes import harmonic_flatten, load_surface

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BUDGET = 4


def versioned_path(path: str) -> str:
    """First non-existing variant of path (append -1, -2, ... before ext)."""
    if not os.path.exists(path):
        return path
    stem, ext = os.path.splitext(path)
    k = 1
    while os.path.exists(f"{stem}-{k}{ext}"):
        k += 1
    return f"{stem}-{k}{ext}"


def _parse_theta(spec: str) -> np.ndarray:
    """Accept either 12 comma-separated values or a JSON file path."""
    if os.path.exists(spec):
        with open(spec) as fh:
            data = json.load(fh)
        values = ([data[n] for n in PARAM_NAMES] if isinstance(data, dict)
                  else data)
    else:
        values = [float(x) for x in spec.split(",")]
    theta = np.asarray(values, dtype=np.float64)
    if theta.shape != (len(PARAM_NAMES),):
        raise ConfigError(
            f"theta needs {len(PARAM_NAMES)} values, got {theta.size}")
    return theta


def _load_config(args) -> dict:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "jobs", None):
        cfg["jobs"] = args.jobs
    return cfg


def _config_base(args) -> str:
    return os.path.dirname(os.path.abspath(args.config))


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #

def cmd_fixtures(args) -> int:
    out = args.out or "fixtures"
    fixtures.write_fixture_set(out)
    print(f"fixture set written to {out}")
    return EXIT_OK


def cmd_flatten(args) -> int:
    mesh = load_surface(args.surface)
    fm = harmonic_flatten(mesh)
    out = versioned_path(args.out or "flatmap.json")
    fm.to_json(out)
    print(f"flat map written to {out}")
    return EXIT_OK


def cmd_grow(args) -> int:
    cfg = _load_config(args)
    fm = pipeline.ForwardModel(cfg, base_dir=_config_base(args))
    theta = _parse_theta(args.theta)
    trees = fm.grow_trees(theta)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    for name, tree in trees.items():
        path = versioned_path(os.path.join(out, f"tree_{name}.json"))
        tree.to_json(path)
        tree.to_obj(os.path.splitext(path)[0] + ".obj")
        print(f"{name}: {tree.n_nodes} nodes, {len(tree.pmjs)} PMJs -> {path}")
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = _load_config(args)
    fm = pipeline.ForwardModel(cfg, base_dir=_config_base(args))
    theta = _parse_theta(args.theta)
    sim = fm.simulate(theta)
    out = versioned_path(args.out or "forward")
    os.makedirs(out, exist_ok=True)
    sim.trace.to_csv(os.path.join(out, "ecg.csv"))
    sim.activation.to_csv(os.path.join(out, "activation.csv"))
    write_vtk(fm.vm, sim.activation.tau_myo,
              os.path.join(out, "activation.vtk"))
    for name, tree in sim.trees.items():
        tree.to_json(os.path.join(out, f"tree_{name}.json"))
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump({
            "theta": {n: float(v) for n, v in zip(PARAM_NAMES, theta)},
            "max_activation_ms": float(sim.activation.tau_myo.max()),
            "n_outer_iters": sim.activation.n_outer_iters,
            "qrs_onset_ms": sim.trace.qrs_onset,
            "qrs_duration_ms": sim.trace.qrs_duration,
        }, fh, indent=2)
    print(f"forward run written to {out}")
    return EXIT_OK


def _prepare_run(cfg: dict, base_dir: str) -> tuple:
    fm = pipeline.ForwardModel(cfg, base_dir=base_dir)
    rngs = inference._named_rngs(int(cfg["seed"]))
    if cfg.get("mode", "synthetic") == "synthetic":
        fm.build_synthetic_reference(rngs["beats"])
    else:
        beats_dir = cfg["beats_dir"]
        beats = _read_beats(beats_dir)
        mean = _mean_beat(beats)
        fm.set_reference(mean, beats)
    return fm


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    out = args.out or "run"
    os.makedirs(out, exist_ok=True)
    base = _config_base(args)
    for key in ("myocardium", "endo_left", "endo_right", "electrodes"):
        cfg[key] = os.path.abspath(pipeline._resolve(cfg[key], base))
    fm = _prepare_run(cfg, base)
    with open(os.path.join(out, "run_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2)
    fm.reference.to_csv(os.path.join(out, "reference.csv"))
    mats = np.stack([b.as_matrix() for b in fm.beats])
    for tag, env in (("min", mats.min(axis=0)), ("max", mats.max(axis=0))):
        EcgTrace(dt=fm.reference.dt,
                 leads={n: env[i] for i, n in enumerate(LEAD_NAMES)}
                 ).to_csv(os.path.join(out, f"envelope_{tag}.csv"))
    b = cfg.get("budget", {})
    budget = inference.RunBudget(
        n_init=b.get("n_init", 60), n_bo=b.get("n_bo", 60),
        n_prior_samples=b.get("n_prior_samples", 200_000),
        n_posterior=b.get("n_posterior", 30),
        retrain_after=b.get("retrain_after", 50),
        accept_threshold=b.get("accept_threshold", 0.9),
        max_forward_evals=b.get("max_forward_evals", 2000))
    ensemble_dir = os.path.join(out, "ensemble")
    os.makedirs(ensemble_dir, exist_ok=True)

    def on_accept(index: int, member) -> None:
        mdir = os.path.join(ensemble_dir, f"member_{index:03d}")
        os.makedirs(mdir, exist_ok=True)
        sim = fm.simulate(member.theta)
        sim.trace.to_csv(os.path.join(mdir, "ecg.csv"))
        for name, tree in sim.trees.items():
            tree.to_json(os.path.join(mdir, f"tree_{name}.json"))
        with open(os.path.join(mdir, "metadata.json"), "w") as fh:
            json.dump({
                "theta": {n: float(v)
                          for n, v in zip(PARAM_NAMES, member.theta)},
                "y": member.y,
                "shift_ms": member.shift,
                "tv_distance": member.tv,
                "errors": member.errors.tolist(),
                "max_activation_ms": float(sim.activation.tau_myo.max()),
            }, fh, indent=2)

    ensemble, _ = inference.run_identification(
        fm.loss, fm.error_samples, fm.bounds, budget,
        seed=int(cfg["seed"]), out_dir=out, on_accept=on_accept,
        jobs=int(cfg.get("jobs", 1)))
    print(f"accepted {len(ensemble.accepted)}/{budget.n_posterior} "
          f"members -> {out}")
    return EXIT_OK


def cmd_pace(args) -> int:
    run_dir = args.run_dir
    ensemble_dir = os.path.join(run_dir, "ensemble")
    if not os.path.isdir(ensemble_dir):
        raise ConfigError(f"no ensemble directory in {run_dir}")
    members = sorted(d for d in os.listdir(ensemble_dir)
                     if d.startswith("member_"))
    if not members:
        raise ConfigError(f"empty ensemble in {run_dir}")
    with open(os.path.join(run_dir, "run_config.json")) as fh:
        cfg = json.load(fh)
    fm = pipeline.ForwardModel(cfg, base_dir=run_dir)
    out = versioned_path(args.out or os.path.join(run_dir, "pacing"))
    os.makedirs(out, exist_ok=True)
    rows = []
    for mname in members:
        with open(os.path.join(ensemble_dir, mname, "metadata.json")) as fh:
            meta = json.load(fh)
        theta = np.asarray([meta["theta"][n] for n in PARAM_NAMES])
        baseline = fm.simulate(theta)
        paced = fm.simulate(theta, rt_override=0.0)
        mdir = os.path.join(out, mname)
        os.makedirs(mdir, exist_ok=True)
        paced.trace.to_csv(os.path.join(mdir, "ecg_paced.csv"))
        paced.activation.to_csv(os.path.join(mdir, "activation_paced.csv"))
        rows.append({
            "member": mname,
            "rt_ms": float(theta[PARAM_NAMES.index("RT")]),
            "max_activation_ms": float(baseline.activation.tau_myo.max()),
            "paced_max_activation_ms": float(paced.activation.tau_myo.max()),
        })
    order = np.argsort([r["max_activation_ms"] for r in rows])
    selection = {
        "min": rows[order[0]]["member"],
        "median": rows[order[len(order) // 2]]["member"],
        "max": rows[order[-1]]["member"],
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump({"members": rows, "selection": selection}, fh, indent=2)
    print(f"paced {len(rows)} members -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Beat ingestion
# --------------------------------------------------------------------------- #

def _read_beats(directory: str) -> list[EcgTrace]:
    if not os.path.isdir(directory):
        raise ConfigError(f"beat directory not found: {directory}")
    paths = sorted(os.path.join(directory, f) for f in os.listdir(directory)
                   if f.lower().endswith(".csv"))
    if len(paths) < 2:
        raise ConfigError("need at least 2 beat CSVs")
    beats = [EcgTrace.from_csv(p) for p in paths]
    dts = {b.dt for b in beats}
    if len(dts) != 1:
        raise ConfigError(f"inconsistent sampling rates across beats: {dts}")
    return align_beats([detrend_beat(b) for b in beats])


def detrend_beat(beat: EcgTrace) -> EcgTrace:
    """Remove the per-lead line through the first and last 10-sample means."""
    n = beat.n_samples
    k = min(10, max(1, n // 2))
    t = np.arange(n, dtype=np.float64)
    t0 = (k - 1) / 2.0
    t1 = n - 1 - t0
    leads = {}
    for name, v in beat.leads.items():
        m0 = float(v[:k].mean())
        m1 = float(v[-k:].mean())
        slope = (m1 - m0) / (t1 - t0) if t1 > t0 else 0.0
        leads[name] = v - (m0 + slope * (t - t0))
    return EcgTrace(dt=beat.dt, leads=leads, qrs_onset=beat.qrs_onset,
                    qrs_duration=beat.qrs_duration)


def align_beats(beats: list[EcgTrace]) -> list[EcgTrace]:
    """Shift every beat so its R peak (max |lead II|) lands on a common
    index; samples shifted in are zero-padded."""
    peaks = [int(np.argmax(np.abs(b.leads["II"]))) for b in beats]
    target = int(np.median(peaks))
    out = []
    for beat, peak in zip(beats, peaks):
        shift = target - peak
        leads = {}
        for name, v in beat.leads.items():
            rolled = np.zeros_like(v)
            if shift >= 0:
                rolled[shift:] = v[:len(v) - shift]
            else:
                rolled[:shift] = v[-shift:]
            leads[name] = rolled
        out.append(EcgTrace(dt=beat.dt, leads=leads, qrs_onset=beat.qrs_onset,
                            qrs_duration=beat.qrs_duration))
    return out


def _mean_beat(beats: list[EcgTrace]) -> EcgTrace:
    mats = np.stack([b.as_matrix() for b in beats])
    mean = mats.mean(axis=0)
    leads = {n: mean[i] for i, n in enumerate(LEAD_NAMES)}
    n = mean.shape[1]
    return EcgTrace(dt=beats[0].dt, leads=leads, qrs_onset=0.0,
                    qrs_duration=(n - 1) * beats[0].dt)


def cmd_ingest_beats(args) -> int:
    beats = _read_beats(args.beats_dir)
    out = versioned_path(args.out or "beats_out")
    os.makedirs(out, exist_ok=True)
    for i, b in enumerate(beats):
        b.to_csv(os.path.join(out, f"beat_{i:03d}.csv"))
    _mean_beat(beats).to_csv(os.path.join(out, "mean.csv"))
    mats = np.stack([b.as_matrix() for b in beats])
    for stat, arr in (("envelope_min", mats.min(axis=0)),
                      ("envelope_max", mats.max(axis=0))):
        leads = {n: arr[i] for i, n in enumerate(LEAD_NAMES)}
        EcgTrace(dt=beats[0].dt, leads=leads).to_csv(
            os.path.join(out, f"{stat}.csv"))
    print(f"{len(beats)} beats aligned and detrended -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Entry point
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="purkinje-ecg",
        description="Purkinje-network identification from the 12-lead ECG")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, help="concurrency cap")
        p.add_argument("--out", help="output file or directory")

    p = sub.add_parser("fixtures", help="generate the bundled test geometry")
    common(p, config=False)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("flatten", help="flatten a surface to the unit disk")
    p.add_argument("surface", help="OBJ/OFF surface mesh")
    common(p, config=False)
    p.set_defaults(func=cmd_flatten)

    p = sub.add_parser("grow", help="grow both Purkinje trees for one theta")
    p.add_argument("--theta", required=True,
                   help="12 comma-separated values or a JSON file")
    common(p)
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("forward", help="full forward simulation for one theta")
    p.add_argument("--theta", required=True)
    common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("fit", help="run the full identification pipeline")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pace", help="re-simulate an ensemble with RT = 0")
    p.add_argument("run_dir", help="run directory produced by fit")
    common(p, config=False)
    p.set_defaults(func=cmd_pace)

    p = sub.add_parser("ingest-beats", help="align and detrend beat CSVs")
    p.add_argument("beats_dir", help="directory of per-beat CSV files")
    common(p, config=False)
    p.set_defaults(func=cmd_ingest_beats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as exc:
        print(f"error: budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (MeshError, GrowthError, SolverError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
