"""Configuration loading and the end-to-end forward model.

A ForwardModel owns all heavy precomputation (meshes, flattening, lead
fields, the eikonal solver) and maps a 12-parameter vector to trees, a
coupled activation field, a 12-lead trace, and the loss against the
reference beats.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .conduction import (ActivationField, ConductivityModel, CouplingConfig,
                         EikonalSolver, root_times_from_rt, solve_coupled)
from .ecg import (ActionPotentialTemplate, EcgTrace, LeadFieldSet,
                  align_and_loss, beat_errors, build_lead_fields, compute_ecg,
                  load_electrodes)
from .errors import ConfigError, SolverError
from .inference import PARAM_NAMES, RunBudget
from .meshes import SurfaceMesh, VolumeMesh, harmonic_flatten, load_surface, \
    load_volume
from .tree import PurkinjeTree, TreeGrowthConfig, VentricleParams, grow_tree

TREE_NAMES = ("left", "right")


def load_config(path: str) -> dict:
    """Read and validate a run configuration document."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg, base_dir=os.path.dirname(os.path.abspath(path)))
    return cfg


def validate_config(cfg: dict, base_dir: str = ".") -> None:
    for key in ("myocardium", "endo_left", "endo_right", "electrodes"):
        if key not in cfg:
            raise ConfigError(f"config is missing the {key!r} path")
        p = _resolve(cfg[key], base_dir)
        if not os.path.exists(p):
            raise ConfigError(f"config {key!r}: file not found: {p}")
    if "seed" not in cfg:
        raise ConfigError("config must set a seed")
    bounds = cfg.get("bounds", {})
    for name in PARAM_NAMES:
        if name not in bounds:
            raise ConfigError(f"bounds missing parameter {name!r}")
        lo, hi = bounds[name]
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError(f"bounds for {name!r} must be a nonempty "
                              f"interval, got [{lo}, {hi}]")
    mode = cfg.get("mode", "synthetic")
    if mode not in ("synthetic", "beats"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "synthetic":
        theta = cfg.get("synthetic", {}).get("theta")
        if theta is None or len(theta) != len(PARAM_NAMES):
            raise ConfigError("synthetic mode needs a 12-value theta")
    elif not cfg.get("beats_dir"):
        raise ConfigError("beats mode needs beats_dir")


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def bounds_array(cfg: dict) -> NDArray[np.float64]:
    return np.asarray([cfg["bounds"][n] for n in PARAM_NAMES],
                      dtype=np.float64)


def theta_to_params(theta) -> dict:
    """Split the 12-vector into per-ventricle geometry plus (RT, CV)."""
    t = np.asarray(theta, dtype=np.float64)
    if t.shape != (len(PARAM_NAMES),):
        raise ConfigError(f"theta must have {len(PARAM_NAMES)} entries")
    return {
        "left": VentricleParams(initial_length=float(t[0]),
                                fascicle_lengths=(float(t[2]), float(t[3])),
                                fascicle_angles=(float(t[6]), float(t[7]))),
        "right": VentricleParams(initial_length=float(t[1]),
                                 fascicle_lengths=(float(t[4]), float(t[5])),
                                 fascicle_angles=(float(t[8]), float(t[9]))),
        "rt": float(t[10]),
        "cv": float(t[11]),
    }


@dataclass
class SimulationResult:
    trees: dict[str, PurkinjeTree]
    activation: ActivationField
    trace: EcgTrace            # normalized to unit max amplitude
    raw_trace: EcgTrace


class ForwardModel:
    """Heavy state shared by every forward evaluation of one run."""

    def __init__(self, cfg: dict, base_dir: str = "."):
        validate_config(cfg, base_dir)
        self.cfg = cfg
        self.vm: VolumeMesh = load_volume(_resolve(cfg["myocardium"],
                                                   base_dir))
        self.surfaces: dict[str, SurfaceMesh] = {
            "left": load_surface(_resolve(cfg["endo_left"], base_dir)),
            "right": load_surface(_resolve(cfg["endo_right"], base_dir)),
        }
        self.flatmaps = {name: harmonic_flatten(s)
                         for name, s in self.surfaces.items()}
        c = cfg.get("conductivity", {})
        self.cm = ConductivityModel(
            sigma_il=c.get("sigma_il", 3.0), sigma_el=c.get("sigma_el", 3.0),
            sigma_it=c.get("sigma_it", 0.3), sigma_et=c.get("sigma_et", 1.2),
            alpha_scale=c.get("alpha_scale", 0.1))
        self.solver = EikonalSolver(self.vm, cm=self.cm)
        electrodes = load_electrodes(_resolve(cfg["electrodes"], base_dir))
        self.lead_fields: LeadFieldSet = build_lead_fields(self.vm, electrodes)
        g = cfg.get("growth", {})
        self.growth = TreeGrowthConfig(
            branch_length=g.get("branch_length", 8.0),
            segments_per_branch=g.get("segments_per_branch", 8),
            repulsion=g.get("repulsion", 0.1),
            branch_angle=g.get("branch_angle", 0.15),
            generations=g.get("generations", 20),
            root_uv=tuple(g.get("root_uv", (0.0, 0.0))),
            initial_direction_uv=tuple(g.get("initial_direction_uv",
                                             (1.0, 0.0))))
        a = cfg.get("action_potential", {})
        self.ap = ActionPotentialTemplate(
            resting=a.get("resting", -85.0), plateau=a.get("plateau", 15.0),
            upstroke_width=a.get("upstroke_width", 1.0),
            apd=a.get("apd", 280.0), repol_width=a.get("repol_width", 30.0))
        cpl = cfg.get("coupling", {})
        self.max_outer_iters = cpl.get("max_outer_iters", 20)
        self.coupling_tol = cpl.get("tol", 1e-3)
        self.dt = cfg.get("dt", 1.0)
        self.bounds = bounds_array(cfg)
        self._cache: dict[bytes, SimulationResult] = {}
        self._reference: EcgTrace | None = None
        self._beats: list[EcgTrace] | None = None

    # -- forward simulation -------------------------------------------------#

    def grow_trees(self, theta) -> dict[str, PurkinjeTree]:
        params = theta_to_params(theta)
        return {name: grow_tree(self.flatmaps[name], self.surfaces[name],
                                self.growth, params[name])
                for name in TREE_NAMES}

    def simulate(self, theta, rt_override: float | None = None,
                 use_cache: bool = True) -> SimulationResult:
        theta = np.asarray(theta, dtype=np.float64)
        key = theta.tobytes() + (b"" if rt_override is None
                                 else np.float64(rt_override).tobytes())
        if use_cache and key in self._cache:
            return self._cache[key]
        params = theta_to_params(theta)
        rt = params["rt"] if rt_override is None else rt_override
        trees = self.grow_trees(theta)
        cc = CouplingConfig(cv_purkinje=params["cv"],
                            root_time=root_times_from_rt(rt),
                            max_outer_iters=self.max_outer_iters,
                            tol=self.coupling_tol)
        af = solve_coupled(trees, self.vm, self.cm, cc, solver=self.solver)
        if not af.converged:
            raise SolverError("coupled activation solve did not converge")
        if not np.all(np.isfinite(af.tau_myo)):
            raise SolverError("activation did not reach the whole myocardium")
        raw = compute_ecg(af.tau_myo, self.vm, self.cm, self.lead_fields,
                          self.ap, dt=self.dt)
        peak = raw.max_abs()
        trace = raw.scaled(1.0 / peak) if peak > 1e-300 else raw
        result = SimulationResult(trees=trees, activation=af, trace=trace,
                                  raw_trace=raw)
        if use_cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = result
        return result

    # -- reference beats ----------------------------------------------------#

    def set_reference(self, reference: EcgTrace, beats: list[EcgTrace]) -> None:
        self._reference = reference
        self._beats = beats

    def build_synthetic_reference(self, rng: np.random.Generator) -> None:
        """Reference trace at the configured ground-truth theta plus
        pseudo-beats with per-lead noise proportional to the peak amplitude."""
        syn = self.cfg["synthetic"]
        theta_star = np.asarray(syn["theta"], dtype=np.float64)
        ref = self.simulate(theta_star).trace
        n_beats = int(syn.get("n_beats", 20))
        frac = float(syn.get("noise_fraction", 0.02))
        beats = []
        independent = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
        for _ in range(n_beats):
            leads = {}
            for name in independent:
                v = ref.leads[name]
                sigma = frac * float(np.abs(v).max())
                leads[name] = v + rng.normal(0.0, sigma, size=len(v))
            # derived limb leads keep the algebraic lead identities exact
            leads["III"] = leads["II"] - leads["I"]
            leads["aVR"] = -0.5 * (leads["I"] + leads["II"])
            leads["aVL"] = leads["I"] - 0.5 * leads["II"]
            leads["aVF"] = leads["II"] - 0.5 * leads["I"]
            beats.append(EcgTrace(dt=ref.dt, leads=leads,
                                  qrs_onset=ref.qrs_onset,
                                  qrs_duration=ref.qrs_duration))
        self.set_reference(ref, beats)

    @property
    def reference(self) -> EcgTrace:
        if self._reference is None:
            raise SolverError("reference beats have not been set")
        return self._reference

    @property
    def beats(self) -> list[EcgTrace]:
        if self._beats is None:
            raise SolverError("reference beats have not been set")
        return self._beats

    def reference_qrs_mean_power(self) -> float:
        """Time-averaged squared reference signal over its QRS window,
        averaged across the 12 leads (same units as the loss)."""
        ref = self.reference
        i0 = int(round(ref.qrs_onset / ref.dt))
        n = int(round(ref.qrs_duration / ref.dt)) + 1
        mat = ref.as_matrix()[:, i0:i0 + n]
        trapz = getattr(np, "trapezoid", None) or np.trapz
        per_lead = trapz(mat ** 2, dx=ref.dt, axis=1)
        return float(per_lead.mean() / ((mat.shape[1] - 1) * ref.dt))

    # -- inference hooks ----------------------------------------------------#

    def loss(self, theta) -> tuple[float, float]:
        """(y, shift) of the simulated trace against the reference."""
        sim = self.simulate(theta)
        shift, y = align_and_loss(self.reference, sim.trace)
        return y, shift

    def error_samples(self, theta) -> NDArray[np.float64]:
        """Per-beat losses q(e; theta) reusing the cached simulation."""
        sim = self.simulate(theta)
        return beat_errors(self.beats, sim.trace)
