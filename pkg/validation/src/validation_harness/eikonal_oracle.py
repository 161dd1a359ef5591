"""Analytic travel-time oracle for homogeneous anisotropic media.

For a constant velocity tensor D the eikonal solution from a point source
x0 is sqrt((x - x0) . D^-1 (x - x0)). This oracle evaluates that field via
the eigen-decomposition of D (whiten, then take Euclidean norms), which is
a different computational route from the primary solver's per-element
inverse-tensor quadratic forms.
"""

from __future__ import annotations

import numpy as np


def load_mesh_vertices(path: str) -> np.ndarray:
    """Vertices from the plain-text volume format (v/t/f lines)."""
    verts = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
    if not verts:
        raise ValueError(f"no vertices found in {path}")
    return np.asarray(verts, dtype=np.float64)


def parse_tensor(spec: str) -> np.ndarray:
    """Tensor from 'iso:v' (isotropic speed v) or six comma-separated
    upper-triangle entries d11,d12,d13,d22,d23,d33."""
    if spec.startswith("iso:"):
        v = float(spec[4:])
        return (v * v) * np.eye(3)
    vals = [float(x) for x in spec.split(",")]
    if len(vals) != 6:
        raise ValueError("tensor spec needs 6 entries or iso:v")
    d11, d12, d13, d22, d23, d33 = vals
    return np.asarray([[d11, d12, d13], [d12, d22, d23], [d13, d23, d33]])


def analytic_times(vertices: np.ndarray, tensor: np.ndarray,
                   source: np.ndarray, t0: float = 0.0) -> np.ndarray:
    """t0 + sqrt(dx . D^-1 dx) computed through the whitening transform."""
    w, v = np.linalg.eigh(tensor)
    if np.any(w <= 0):
        raise ValueError("tensor must be symmetric positive definite")
    whiten = v / np.sqrt(w)            # columns v_i / sqrt(w_i)
    dx = vertices - source
    return t0 + np.linalg.norm(dx @ whiten, axis=1)


def read_activation_csv(path: str) -> np.ndarray:
    rows = np.genfromtxt(path, delimiter=",", skip_header=1)
    rows = np.atleast_2d(rows)
    order = np.argsort(rows[:, 0])
    return rows[order, 1]
