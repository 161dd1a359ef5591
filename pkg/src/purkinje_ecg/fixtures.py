"""Self-contained desk-scale test geometry.

Builds an idealized half-ellipsoid ventricular shell (tetrahedral myocardium
with circumferential fibers), the two endocardial surface patches used to
grow the trees, electrode positions, and a default run configuration.
Also provides structured cube meshes for solver accuracy checks.
"""

from __future__ import annotations

import json
import os

import numpy as np
from numpy.typing import NDArray

from .ecg import default_electrodes, save_electrodes
from .meshes import SurfaceMesh, VolumeMesh, save_surface_obj, save_volume

__all__ = [
    "ellipsoid_shell",
    "cube_mesh",
    "default_run_config",
    "write_fixture_set",
]


def _split_prism(bottom, top):
    """Three tets per prism with face diagonals through the smallest global
    vertex index, so adjacent prisms always agree on shared quad faces."""
    k = int(np.argmin(bottom))
    b = (bottom[k], bottom[(k + 1) % 3], bottom[(k + 2) % 3])
    t = (top[k], top[(k + 1) % 3], top[(k + 2) % 3])
    v0, v1, v2, v3, v4, v5 = b[0], b[1], b[2], t[0], t[1], t[2]
    if min(v1, v5) < min(v2, v4):
        return [(v0, v1, v2, v5), (v0, v1, v5, v4), (v0, v4, v5, v3)]
    return [(v0, v1, v2, v4), (v0, v4, v2, v5), (v0, v4, v5, v3)]


def _fix_orientation(vertices: NDArray[np.float64],
                     tets: NDArray[np.int64]) -> NDArray[np.int64]:
    p = vertices[tets]
    vol = np.einsum("ij,ij->i",
                    np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
                    p[:, 3] - p[:, 0])
    flip = vol < 0
    tets = tets.copy()
    tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
    return tets


def _shell_grid_triangles(n_theta: int, n_phi: int) -> list[tuple[int, int, int]]:
    """Triangulate the (phi, theta) surface grid plus the apex fan.

    Column index: j * n_theta + i for row j, azimuth i; apex = n_phi * n_theta.
    Quad diagonals go through the smallest column index for consistency with
    the prism splitter.
    """
    apex = n_phi * n_theta
    tris = []
    for j in range(n_phi - 1):
        for i in range(n_theta):
            i2 = (i + 1) % n_theta
            c00 = j * n_theta + i
            c10 = j * n_theta + i2
            c01 = (j + 1) * n_theta + i
            c11 = (j + 1) * n_theta + i2
            if min(c00, c11) < min(c10, c01):
                tris.append((c00, c10, c11))
                tris.append((c00, c11, c01))
            else:
                tris.append((c00, c10, c01))
                tris.append((c10, c11, c01))
    for i in range(n_theta):
        i2 = (i + 1) % n_theta
        tris.append(((n_phi - 1) * n_theta + i, (n_phi - 1) * n_theta + i2,
                     apex))
    return tris


def _shell_nodes(n_theta: int, n_phi: int, semi: tuple[float, float, float]
                 ) -> NDArray[np.float64]:
    """Half-ellipsoid node shell: basal rim at z = 0, apex at z = -c."""
    a, b, c = semi
    out = np.empty((n_phi * n_theta + 1, 3))
    for j in range(n_phi):
        s = 0.5 * np.pi * j / n_phi
        for i in range(n_theta):
            th = 2.0 * np.pi * i / n_theta
            out[j * n_theta + i] = (a * np.cos(s) * np.cos(th),
                                    b * np.cos(s) * np.sin(th),
                                    -c * np.sin(s))
    out[-1] = (0.0, 0.0, -c)
    return out


def ellipsoid_shell(n_theta: int = 24, n_phi: int = 10, n_layers: int = 3,
                    inner: tuple[float, float, float] = (45.0, 45.0, 75.0),
                    wall: float = 10.0
                    ) -> tuple[VolumeMesh, SurfaceMesh, SurfaceMesh]:
    """Half-ellipsoid ventricular shell with two endocardial patches.

    Returns (myocardium, left endocardium (x < 0), right endocardium (x > 0)).
    The endocardial patches coincide with the innermost shell vertices, so
    PMJs land inside or on the volume mesh. Fibers run circumferentially.
    """
    if n_theta % 4 != 0:
        raise ValueError("n_theta must be a multiple of 4 (meridian split)")
    tris2d = _shell_grid_triangles(n_theta, n_phi)
    n2 = n_phi * n_theta + 1
    shells = []
    for r in range(n_layers + 1):
        t = r / n_layers
        shells.append(_shell_nodes(
            n_theta, n_phi,
            (inner[0] + t * wall, inner[1] + t * wall, inner[2] + t * wall)))
    vertices = np.concatenate(shells)
    tets = []
    for r in range(n_layers):
        lo, hi = r * n2, (r + 1) * n2
        for p, q, s in tris2d:
            tets.extend(_split_prism((lo + p, lo + q, lo + s),
                                     (hi + p, hi + q, hi + s)))
    tets = _fix_orientation(vertices, np.asarray(tets, dtype=np.int64))

    cent = vertices[tets].mean(axis=1)
    fiber = np.column_stack([-cent[:, 1], cent[:, 0],
                             np.zeros(len(cent))])
    nrm = np.linalg.norm(fiber, axis=1)
    small = nrm < 1e-9
    fiber[small] = (1.0, 0.0, 0.0)
    nrm[small] = 1.0
    fiber /= nrm[:, None]
    vm = VolumeMesh(vertices, tets, fiber)

    inner_pts = shells[0]
    left = _extract_patch(inner_pts, tris2d, side=-1.0)
    right = _extract_patch(inner_pts, tris2d, side=+1.0)
    return vm, left, right


def _extract_patch(points: NDArray[np.float64], tris: list, side: float
                   ) -> SurfaceMesh:
    """Endocardial patch on one side of the x = 0 meridian plane."""
    keep = [t for t in tris
            if side * points[list(t)][:, 0].mean() > 1e-9]
    used = sorted({v for t in keep for v in t})
    remap = {v: i for i, v in enumerate(used)}
    new_tris = np.asarray([[remap[v] for v in t] for t in keep],
                          dtype=np.int64)
    return SurfaceMesh(points[used], new_tris)


# --------------------------------------------------------------------------- #
# Structured cube meshes for solver accuracy checks
# --------------------------------------------------------------------------- #

def cube_mesh(n: int, size: float = 20.0,
              fiber: tuple[float, float, float] = (1.0, 0.0, 0.0)
              ) -> VolumeMesh:
    """Axis-aligned cube [0, size]^3 with n divisions per edge, split into
    6 tets per hexahedron along the main diagonal (conforming by symmetry)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    axis = np.linspace(0.0, size, n + 1)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    vertices = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    # Kuhn subdivision: all 6 tets share the (0,0,0)-(1,1,1) diagonal
    corners = [
        ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)),
        ((0, 0, 0), (1, 1, 0), (0, 1, 0), (1, 1, 1)),
        ((0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)),
        ((0, 0, 0), (0, 1, 1), (0, 0, 1), (1, 1, 1)),
        ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)),
        ((0, 0, 0), (1, 0, 1), (1, 0, 0), (1, 1, 1)),
    ]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for tet in corners:
                    tets.append([vid(i + a, j + b, k + c) for a, b, c in tet])
    tets = _fix_orientation(vertices, np.asarray(tets, dtype=np.int64))
    f = np.tile(np.asarray(fiber, dtype=np.float64)
                / np.linalg.norm(fiber), (len(tets), 1))
    return VolumeMesh(vertices, tets, f)


# --------------------------------------------------------------------------- #
# Default run configuration
# --------------------------------------------------------------------------- #

# Reference parameter values for the synthetic identification target:
# (l_i_L, l_i_R, l_F1_L, l_F2_L, l_F1_R, l_F2_R,
#  a_F1_L, a_F2_L, a_F1_R, a_F2_R, RT, CV)
SYNTHETIC_THETA = (35.93, 79.86, 9.42, 18.25, 43.41, 11.59,
                   1.44, 2.36, 2.36, 2.36, -75.0, 2.0)


def default_run_config(fixture_dir: str) -> dict:
    """Configuration document with every default spelled out and overridable."""
    bounds = {
        "l_i_L": [30.0, 100.0], "l_i_R": [30.0, 100.0],
        "l_F1_L": [2.0, 50.0], "l_F2_L": [2.0, 50.0],
        "l_F1_R": [2.0, 50.0], "l_F2_R": [2.0, 50.0],
        "a_F1_L": [-np.pi / 4, 3 * np.pi / 4],
        "a_F2_L": [-np.pi / 4, 3 * np.pi / 4],
        "a_F1_R": [-np.pi / 4, 3 * np.pi / 4],
        "a_F2_R": [-np.pi / 4, 3 * np.pi / 4],
        "RT": [-75.0, 50.0], "CV": [2.0, 4.0],
    }
    return {
        "myocardium": os.path.join(fixture_dir, "myocardium.txt"),
        "endo_left": os.path.join(fixture_dir, "endo_left.obj"),
        "endo_right": os.path.join(fixture_dir, "endo_right.obj"),
        "electrodes": os.path.join(fixture_dir, "electrodes.json"),
        "bounds": bounds,
        "growth": {
            "branch_length": 8.0,
            "segments_per_branch": 4,
            "repulsion": 0.1,
            "branch_angle": 0.25,
            "generations": 20,
            "root_uv": [0.0, 0.0],
            "initial_direction_uv": [1.0, 0.0],
        },
        "conductivity": {
            "sigma_il": 3.0, "sigma_el": 3.0,
            "sigma_it": 0.3, "sigma_et": 1.2,
            "alpha_scale": 0.1,
        },
        "coupling": {"max_outer_iters": 20, "tol": 1e-3},
        "action_potential": {
            "resting": -85.0, "plateau": 15.0, "upstroke_width": 8.0,
            "apd": 280.0, "repol_width": 30.0,
        },
        "dt": 1.0,
        "budget": {
            "n_init": 60, "n_bo": 60, "n_prior_samples": 200_000,
            "n_posterior": 30, "retrain_after": 50,
            "accept_threshold": 0.9, "max_forward_evals": 2000,
        },
        "seed": 20260823,
        "jobs": 1,
        "mode": "synthetic",
        "synthetic": {
            "theta": list(SYNTHETIC_THETA),
            "n_beats": 20,
            "noise_fraction": 0.12,
        },
        "beats_dir": None,
    }


def write_fixture_set(out_dir: str, n_theta: int = 24, n_phi: int = 10,
                      n_layers: int = 3) -> dict:
    """Generate and save the full fixture set; returns the written config."""
    os.makedirs(out_dir, exist_ok=True)
    vm, left, right = ellipsoid_shell(n_theta=n_theta, n_phi=n_phi,
                                      n_layers=n_layers)
    save_volume(vm, os.path.join(out_dir, "myocardium.txt"))
    save_surface_obj(left, os.path.join(out_dir, "endo_left.obj"))
    save_surface_obj(right, os.path.join(out_dir, "endo_right.obj"))
    save_electrodes(default_electrodes(vm),
                    os.path.join(out_dir, "electrodes.json"))
    # paths are resolved relative to the config file, which sits in out_dir
    config = default_run_config("")
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(config, fh, indent=2)
    return config
