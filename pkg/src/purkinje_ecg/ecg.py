"""Lead-field ECG forward model, QRS alignment and loss evaluation.

The 12 standard leads are assembled from 9 electrode potential fields using
an infinite-homogeneous-medium point-electrode surrogate. The ECG itself is
the volume integral of G_i grad U(t - tau) . grad Z over the myocardium,
evaluated per tet with linear shape functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .conduction import ConductivityModel, intracellular_tensor
from .errors import SolverError
from .meshes import VolumeMesh

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")

ELECTRODE_NAMES = ("RA", "LA", "LL", "V1", "V2", "V3", "V4", "V5", "V6")


@dataclass(frozen=True)
class ActionPotentialTemplate:
    """Analytic two-logistic action potential (mV, ms)."""

    resting: float = -85.0
    plateau: float = 15.0
    upstroke_width: float = 1.0
    apd: float = 280.0
    repol_width: float = 30.0

    def __post_init__(self):
        if self.plateau <= self.resting:
            raise SolverError("plateau must exceed resting")
        if min(self.upstroke_width, self.apd, self.repol_width) <= 0:
            raise SolverError("all template widths must be > 0")

    def value(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        xi = np.asarray(xi, dtype=np.float64)
        amp = self.plateau - self.resting
        k_up = 4.0 / self.upstroke_width
        k_rep = 4.0 / self.repol_width
        up = 1.0 / (1.0 + np.exp(np.clip(-k_up * xi, -700, 700)))
        down = 1.0 / (1.0 + np.exp(np.clip(-k_rep * (self.apd - xi), -700, 700)))
        return self.resting + amp * up * down

    def slope(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        """dU/dxi, analytic."""
        xi = np.asarray(xi, dtype=np.float64)
        amp = self.plateau - self.resting
        k_up = 4.0 / self.upstroke_width
        k_rep = 4.0 / self.repol_width
        up = 1.0 / (1.0 + np.exp(np.clip(-k_up * xi, -700, 700)))
        down = 1.0 / (1.0 + np.exp(np.clip(-k_rep * (self.apd - xi), -700, 700)))
        return amp * (k_up * up * (1 - up) * down
                      - k_rep * down * (1 - down) * up)


@dataclass
class EcgTrace:
    """Uniformly sampled 12-lead signal with a marked QRS window."""

    dt: float                          # ms
    leads: dict[str, NDArray[np.float64]]
    qrs_onset: float = 0.0             # ms
    qrs_duration: float = 0.0          # ms

    def __post_init__(self):
        missing = [n for n in LEAD_NAMES if n not in self.leads]
        if missing:
            raise SolverError(f"missing leads: {missing}")
        lengths = {len(v) for v in self.leads.values()}
        if len(lengths) != 1:
            raise SolverError("all 12 leads must have the same length")
        self.leads = {n: np.asarray(self.leads[n], dtype=np.float64)
                      for n in LEAD_NAMES}

    @property
    def n_samples(self) -> int:
        return len(self.leads["I"])

    def as_matrix(self) -> NDArray[np.float64]:
        return np.stack([self.leads[n] for n in LEAD_NAMES])

    def max_abs(self) -> float:
        return float(np.abs(self.as_matrix()).max())

    def scaled(self, factor: float) -> "EcgTrace":
        return EcgTrace(dt=self.dt,
                        leads={n: v * factor for n, v in self.leads.items()},
                        qrs_onset=self.qrs_onset,
                        qrs_duration=self.qrs_duration)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("t_ms," + ",".join(LEAD_NAMES) + "\n")
            mat = self.as_matrix()
            for i in range(self.n_samples):
                t = i * self.dt
                fh.write(f"{float(t)!r},"
                         + ",".join(repr(float(x)) for x in mat[:, i])
                         + "\n")

    @classmethod
    def from_csv(cls, path: str, qrs_onset: float = 0.0,
                 qrs_duration: float = 0.0) -> "EcgTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.split(",") for line in fh if line.strip()]
        if header[0] != "t_ms" or tuple(header[1:]) != LEAD_NAMES:
            raise SolverError(f"{path}: unexpected CSV header")
        data = np.asarray(rows, dtype=np.float64)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        leads = {n: data[:, i + 1] for i, n in enumerate(LEAD_NAMES)}
        return cls(dt=dt, leads=leads, qrs_onset=qrs_onset,
                   qrs_duration=qrs_duration)


@dataclass
class LeadFieldSet:
    """Per-lead sensitivity field Z (one scalar per volume vertex)."""

    z: dict[str, NDArray[np.float64]]
    electrodes: dict[str, NDArray[np.float64]]


def default_electrodes(vm: VolumeMesh, radius_factor: float = 3.0) -> dict:
    """Nine electrodes on a bounding ellipsoid around the mesh."""
    center = 0.5 * (vm.vertices.min(axis=0) + vm.vertices.max(axis=0))
    half = 0.5 * (vm.vertices.max(axis=0) - vm.vertices.min(axis=0))
    r = radius_factor * np.maximum(half, half.max() * 0.5)
    # limb electrodes: shoulders and left leg; precordials fan across the front
    angles = {
        "RA": (np.pi * 0.75, 0.3), "LA": (np.pi * 0.25, 0.3),
        "LL": (-np.pi * 0.5, -0.6),
        "V1": (np.pi * 0.60, 0.0), "V2": (np.pi * 0.45, 0.0),
        "V3": (np.pi * 0.30, -0.1), "V4": (np.pi * 0.15, -0.2),
        "V5": (0.0, -0.2), "V6": (-np.pi * 0.15, -0.2),
    }
    out = {}
    for name, (phi, zfac) in angles.items():
        out[name] = center + np.array([
            r[0] * np.cos(phi), r[1] * np.sin(phi), r[2] * zfac])
    return out


def save_electrodes(electrodes: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump({k: np.asarray(v).tolist() for k, v in electrodes.items()}, fh)


def load_electrodes(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    return {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}


def build_lead_fields(vm: VolumeMesh, electrodes: dict) -> LeadFieldSet:
    """Assemble the 12 clinical lead fields from point-electrode potentials.

    Each electrode contributes phi(x) = 1 / (4 pi |x - x_e|); the electrode
    must lie strictly outside the mesh.
    """
    missing = [n for n in ELECTRODE_NAMES if n not in electrodes]
    if missing:
        raise SolverError(f"missing electrodes: {missing}")
    phi = {}
    for name in ELECTRODE_NAMES:
        pos = np.asarray(electrodes[name], dtype=np.float64)
        d = np.linalg.norm(vm.vertices - pos[None, :], axis=1)
        if np.any(d < 1e-9):
            raise SolverError(f"electrode {name} coincides with a mesh vertex")
        phi[name] = 1.0 / (4.0 * np.pi * d)
    wct = (phi["RA"] + phi["LA"] + phi["LL"]) / 3.0
    z = {
        "I": phi["LA"] - phi["RA"],
        "II": phi["LL"] - phi["RA"],
        "III": phi["LL"] - phi["LA"],
        "aVR": phi["RA"] - 0.5 * (phi["LA"] + phi["LL"]),
        "aVL": phi["LA"] - 0.5 * (phi["RA"] + phi["LL"]),
        "aVF": phi["LL"] - 0.5 * (phi["RA"] + phi["LA"]),
    }
    for k in ("V1", "V2", "V3", "V4", "V5", "V6"):
        z[k] = phi[k] - wct
    return LeadFieldSet(z=z, electrodes={
        k: np.asarray(v, dtype=np.float64) for k, v in electrodes.items()})


def _tet_gradients(vm: VolumeMesh):
    """Per-tet gradient operator for linear fields: grads (m, 4, 3) so that
    grad f = sum_k grads[t, k] * f[tet[k]]; also returns volumes."""
    p = vm.vertices[vm.tets]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]],
                 axis=1)                                   # (m, 3, 3) rows
    vol6 = np.einsum("ij,ij->i", np.cross(e[:, 0], e[:, 1]), e[:, 2])
    inv = np.linalg.inv(e)                                 # columns: grads 1..3
    g = inv.transpose(0, 2, 1)                             # (m, 3rows->grad of node1..3)
    grads = np.empty((len(vm.tets), 4, 3))
    grads[:, 1:, :] = g
    grads[:, 0, :] = -g.sum(axis=1)
    return grads, vol6 / 6.0


def compute_ecg(tau_myo: NDArray[np.float64], vm: VolumeMesh,
                cm: ConductivityModel, lf: LeadFieldSet,
                ap: ActionPotentialTemplate, dt: float = 1.0,
                horizon: float | None = None) -> EcgTrace:
    """Evaluate all 12 leads on a uniform time grid from t = 0 to horizon.

    Raises SolverError if any activation time is non-finite, and flags a
    truncated QRS when the horizon does not cover max(tau) + upstroke.
    """
    tau = np.asarray(tau_myo, dtype=np.float64)
    if not np.all(np.isfinite(tau)):
        raise SolverError("activation field contains non-finite times")
    grads, vols = _tet_gradients(vm)
    tau_nodes = tau[vm.tets]                               # (m, 4)
    grad_tau = np.einsum("mk,mkd->md", tau_nodes, grads)   # (m, 3)
    tau_c = tau_nodes.mean(axis=1)
    gi = intracellular_tensor(cm, vm.fiber)                # (m, 3, 3)
    gi_grad_tau = np.einsum("mde,me->md", gi, grad_tau)
    if horizon is None:
        horizon = float(tau.max() + 5.0 * ap.upstroke_width + 10.0)
    if horizon < tau.max() + ap.upstroke_width:
        raise SolverError("horizon too short: truncated QRS")
    nt = int(np.floor(horizon / dt)) + 1
    t_grid = np.arange(nt) * dt
    # per-lead static factor a_l[m] = (G_i grad tau . grad Z_l) vol
    leads = {}
    xi = t_grid[:, None] - tau_c[None, :]                  # (nt, m)
    du = ap.slope(xi)                                      # (nt, m)
    for name in LEAD_NAMES:
        z_nodes = lf.z[name][vm.tets]
        grad_z = np.einsum("mk,mkd->md", z_nodes, grads)
        a = np.einsum("md,md->m", gi_grad_tau, grad_z) * vols
        leads[name] = -(du @ a)
    qrs_onset = float(max(tau.min() - 2.0 * ap.upstroke_width, 0.0))
    qrs_end = float(tau.max() + 2.0 * ap.upstroke_width)
    return EcgTrace(dt=dt, leads=leads, qrs_onset=qrs_onset,
                    qrs_duration=qrs_end - qrs_onset)


# --------------------------------------------------------------------------- #
# Alignment and loss
# --------------------------------------------------------------------------- #

def align_and_loss(ref: EcgTrace, sim: EcgTrace,
                   max_shift_ms: float = 50.0) -> tuple[float, float]:
    """Best cross-correlation alignment and the mean-square QRS mismatch.

    Returns (shift in ms applied to the simulated trace, loss y). The loss
    is the time average over the reference QRS window of the squared lead
    difference, averaged over the 12 leads (trapezoidal rule).
    """
    if abs(ref.dt - sim.dt) > 1e-12:
        raise SolverError("reference and simulation must share dt")
    dt = ref.dt
    i0 = int(round(ref.qrs_onset / dt))
    n = int(round(ref.qrs_duration / dt)) + 1
    if n <= 1:
        raise SolverError("empty QRS window on the reference trace")
    ref_mat = ref.as_matrix()[:, i0:i0 + n]
    n = ref_mat.shape[1]
    sim_mat = sim.as_matrix()
    max_k = int(round(max_shift_ms / dt))
    best_k, best_score = 0, -np.inf
    for k in range(-max_k, max_k + 1):
        seg = _window(sim_mat, i0 + k, n)
        score = float(np.sum(ref_mat * seg))
        if score > best_score:
            best_score = score
            best_k = k
    seg = _window(sim_mat, i0 + best_k, n)
    diff2 = (ref_mat - seg) ** 2
    trapz = getattr(np, "trapezoid", None) or np.trapz
    per_lead = trapz(diff2, dx=dt, axis=1)
    duration = (n - 1) * dt
    y = float(per_lead.mean() / duration)
    return best_k * dt, y


def _window(mat: NDArray[np.float64], start: int, n: int) -> NDArray[np.float64]:
    """Zero-padded window [start, start+n) of each row."""
    out = np.zeros((mat.shape[0], n))
    lo = max(start, 0)
    hi = min(start + n, mat.shape[1])
    if hi > lo:
        out[:, lo - start:hi - start] = mat[:, lo:hi]
    return out


def beat_errors(beats: list[EcgTrace], sim: EcgTrace) -> NDArray[np.float64]:
    """Loss of the simulated trace against each reference beat."""
    if len(beats) < 2:
        raise SolverError("need at least 2 beats for an error distribution")
    return np.asarray([align_and_loss(b, sim)[1] for b in beats])
