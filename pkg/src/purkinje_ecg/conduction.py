"""Coupled Purkinje/myocardium activation solvers.

The tree solve is Dijkstra on the branch graph; the myocardial solve is an
anisotropic fast-iterative eikonal method on tets (compiled kernel when
available, pure-Python fallback otherwise). The bidirectional coupling is a
monotone fixed-point iteration over the PMJ boundary values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import SolverError
from .meshes import VolumeMesh
from .tree import PurkinjeTree

if os.environ.get("PURKINJE_ECG_FORCE_PY"):
    from . import _fim_py as _fim_impl
else:
    try:
        from . import _fim as _fim_impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fim_py as _fim_impl


def fim_backend() -> str:
    """Name of the eikonal kernel in use ('compiled' or 'python')."""
    return _fim_impl.BACKEND


# Calibration constant mapping sqrt(conductivity in mS/cm) to a propagation
# velocity in mm/ms. With the default conductivities and alpha = 0.1 this
# yields ~0.61 mm/ms along fibers and ~0.24 mm/ms across.
CONDUCTIVITY_TO_VELOCITY = 5.0


@dataclass(frozen=True)
class ConductivityModel:
    """Monodomain conductivities (mS/cm) and the dimensionless scaling alpha."""

    sigma_il: float = 3.0
    sigma_el: float = 3.0
    sigma_it: float = 0.3
    sigma_et: float = 1.2
    alpha_scale: float = 0.1

    def __post_init__(self):
        for name in ("sigma_il", "sigma_el", "sigma_it", "sigma_et"):
            if getattr(self, name) <= 0:
                raise SolverError(f"{name} must be > 0")
        if not 0 < self.alpha_scale <= 1:
            raise SolverError("alpha_scale must be in (0, 1]")

    @property
    def d_longitudinal(self) -> float:
        """Longitudinal eigenvalue of D in conductivity units."""
        return (self.alpha_scale ** 2 * self.sigma_il * self.sigma_el
                / (self.sigma_il + self.sigma_el))

    @property
    def d_transverse(self) -> float:
        return (self.alpha_scale ** 2 * self.sigma_it * self.sigma_et
                / (self.sigma_it + self.sigma_et))


def intracellular_tensor(cm: ConductivityModel,
                         fiber: NDArray[np.float64]) -> NDArray[np.float64]:
    """G_i = sigma_it I + (sigma_il - sigma_it) f f^T, per tet (mS/cm)."""
    f = np.atleast_2d(fiber)
    eye = np.eye(3)
    out = (cm.sigma_it * eye[None, :, :]
           + (cm.sigma_il - cm.sigma_it) * f[:, :, None] * f[:, None, :])
    return out if np.asarray(fiber).ndim == 2 else out[0]


def monodomain_tensor(cm: ConductivityModel,
                      fiber: NDArray[np.float64]) -> NDArray[np.float64]:
    """D = alpha^2 G_i (G_i + G_e)^-1 G_e in conductivity units (mS/cm).

    For coaxial G_i, G_e this reduces to harmonic-mean eigenvalues along and
    across the fiber.
    """
    f = np.atleast_2d(np.asarray(fiber, dtype=np.float64))
    if np.any(np.abs(np.linalg.norm(f, axis=1) - 1.0) > 1e-8):
        raise SolverError("fiber must be unit length")
    eye = np.eye(3)
    dl = cm.d_longitudinal
    dt = cm.d_transverse
    out = dt * eye[None, :, :] + (dl - dt) * f[:, :, None] * f[:, None, :]
    return out if np.asarray(fiber).ndim == 2 else out[0]


def velocity_tensor(cm: ConductivityModel,
                    fiber: NDArray[np.float64]) -> NDArray[np.float64]:
    """D scaled so sqrt(eigenvalue) is a velocity in mm/ms."""
    return CONDUCTIVITY_TO_VELOCITY ** 2 * monodomain_tensor(cm, fiber)


def tensor_from_fibers(cm: ConductivityModel,
                       fiber: NDArray[np.float64]) -> NDArray[np.float64]:
    """Velocity-scaled monodomain tensor for one fiber direction ((mm/ms)^2)."""
    return velocity_tensor(cm, fiber)


@dataclass
class ActivationField:
    """Nodal activation times (ms) for both trees and the myocardium."""

    tau_tree: dict[str, NDArray[np.float64]]
    tau_myo: NDArray[np.float64]
    converged: bool = True
    n_outer_iters: int = 0

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("vertex_id,tau_ms\n")
            for i, t in enumerate(self.tau_myo):
                fh.write(f"{i},{float(t)!r}\n")


# --------------------------------------------------------------------------- #
# Tree solver (Dijkstra)
# --------------------------------------------------------------------------- #

def solve_tree(tree: PurkinjeTree, cv: float,
               sources: list[tuple[int, float]]) -> NDArray[np.float64]:
    """Activation times on the tree from (node, time) sources at velocity cv.

    cv is in m/s (numerically equal to mm/ms); disconnected nodes get +inf.
    """
    if not sources:
        raise SolverError("solve_tree needs at least one source")
    if cv <= 0:
        raise SolverError("conduction velocity must be > 0")
    n = tree.n_nodes
    w = tree.edge_lengths / cv
    rows = np.concatenate([tree.edges[:, 0], tree.edges[:, 1]])
    cols = np.concatenate([tree.edges[:, 1], tree.edges[:, 0]])
    data = np.concatenate([w, w])
    # virtual source node n, connected one-way to each source at its time
    src_nodes = np.asarray([s[0] for s in sources], dtype=np.int64)
    src_times = np.asarray([s[1] for s in sources], dtype=np.float64)
    rows = np.concatenate([rows, np.full(len(sources), n)])
    cols = np.concatenate([cols, src_nodes])
    data = np.concatenate([data, src_times])
    graph = sp.csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
    dist = dijkstra(graph, directed=True, indices=n)
    return dist[:n]


# --------------------------------------------------------------------------- #
# Myocardial solver (fast iterative method)
# --------------------------------------------------------------------------- #

def _csr_from_lists(n: int, lists: list[list[int]]):
    off = np.zeros(n + 1, dtype=np.int64)
    for i, lst in enumerate(lists):
        off[i + 1] = off[i] + len(lst)
    idx = np.empty(off[-1], dtype=np.int64)
    for i, lst in enumerate(lists):
        idx[off[i]:off[i + 1]] = lst
    return off, idx


def _pack_sym(mats: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.ascontiguousarray(np.stack(
        [mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2],
         mats[:, 1, 1], mats[:, 1, 2], mats[:, 2, 2]], axis=1))


class EikonalSolver:
    """Precomputed anisotropic eikonal problem on one volume mesh.

    Immutable after construction; solve() is a pure function of its sources.
    """

    def __init__(self, vm: VolumeMesh,
                 tensors: NDArray[np.float64] | None = None,
                 cm: ConductivityModel | None = None):
        if tensors is None:
            if cm is None:
                cm = ConductivityModel()
            tensors = velocity_tensor(cm, vm.fiber)
        tensors = np.asarray(tensors, dtype=np.float64)
        if tensors.shape != (len(vm.tets), 3, 3):
            raise SolverError("need one 3x3 tensor per tet")
        self.vm = vm
        self.tensors = tensors
        self.minv = _pack_sym(np.linalg.inv(tensors))
        n = vm.n_vertices
        v2t: list[list[int]] = [[] for _ in range(n)]
        nbr: list[set[int]] = [set() for _ in range(n)]
        for t, tet in enumerate(vm.tets):
            for v in tet:
                v2t[v].append(t)
            for a in tet:
                for b in tet:
                    if a != b:
                        nbr[a].add(int(b))
        self.v2t_off, self.v2t_idx = _csr_from_lists(n, v2t)
        self.nbr_off, self.nbr_idx = _csr_from_lists(
            n, [sorted(s) for s in nbr])
        self._verts = np.ascontiguousarray(vm.vertices)
        self._tets = np.ascontiguousarray(vm.tets, dtype=np.int64)
        self._centroid_tree = cKDTree(vm.vertices[vm.tets].mean(axis=1))
        self._vertex_tree = cKDTree(vm.vertices)
        self._tet_a = None      # lazy caches for batched point location
        self._tet_inv = None

    # -- PMJ handling ------------------------------------------------------ #

    def locate_point(self, p: NDArray[np.float64],
                     slack: float = 1e-8) -> int:
        """Tet containing p, or -1. Candidates come from nearby centroids."""
        p = np.asarray(p, dtype=np.float64)
        k = min(64, len(self._tets))
        _, cand = self._centroid_tree.query(p, k=k)
        verts = self._verts
        for t in np.atleast_1d(cand):
            tet = self._tets[t]
            a, b, c, d = verts[tet]
            mat = np.column_stack([b - a, c - a, d - a])
            try:
                lam = np.linalg.solve(mat, p - a)
            except np.linalg.LinAlgError:
                continue
            if (lam >= -slack).all() and lam.sum() <= 1.0 + slack:
                return int(t)
        return -1

    def attach_point(self, p: NDArray[np.float64],
                     snap_mm: float = 2.0) -> tuple[int, int]:
        """Resolve an off-node source point.

        Returns (tet id, -1) when a containing tet is found, or (-1, vertex)
        when the point snaps to the nearest mesh vertex within snap_mm.
        Raises SolverError otherwise.
        """
        t = self.locate_point(p)
        if t >= 0:
            return t, -1
        d, v = self._vertex_tree.query(p)
        if d <= snap_mm:
            return -1, int(v)
        raise SolverError(
            f"source point {p} is outside the mesh (nearest vertex {d:.3f} mm)")

    def attach_points(self, pts: NDArray[np.float64], snap_mm: float = 2.0,
                      slack: float = 1e-8
                      ) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        """Vectorized attach_point for many source points at once.

        Returns (tet ids, snap vertex ids); exactly one of the pair is >= 0
        per point. Raises SolverError listing every unresolvable point.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        npt = len(pts)
        if self._tet_inv is None:
            a = self._verts[self._tets[:, 0]]
            mats = np.stack([self._verts[self._tets[:, k]] - a
                             for k in (1, 2, 3)], axis=2)
            self._tet_a = a
            self._tet_inv = np.linalg.inv(mats)
        k = min(64, len(self._tets))
        _, cand = self._centroid_tree.query(pts, k=k)
        cand = cand.reshape(npt, k)
        tet_out = np.full(npt, -1, dtype=np.int64)
        pending = np.arange(npt)
        for j in range(k):
            tids = cand[pending, j]
            lam = np.einsum("pde,pe->pd", self._tet_inv[tids],
                            pts[pending] - self._tet_a[tids])
            ok = (lam >= -slack).all(axis=1) & (lam.sum(axis=1) <= 1.0 + slack)
            tet_out[pending[ok]] = tids[ok]
            pending = pending[~ok]
            if not pending.size:
                break
        snap_out = np.full(npt, -1, dtype=np.int64)
        if pending.size:
            d, v = self._vertex_tree.query(pts[pending])
            good = d <= snap_mm
            snap_out[pending[good]] = v[good]
            bad = pending[~good]
            if bad.size:
                raise SolverError(
                    f"{bad.size} source points outside the mesh "
                    f"(first: {pts[bad[0]]}, nearest vertex "
                    f"{d[~good][0]:.3f} mm)")
        return tet_out, snap_out

    def metric_distance(self, tet: int, a: NDArray[np.float64],
                        b: NDArray[np.float64]) -> float:
        """sqrt(D^-1 (a-b) . (a-b)) using the tet's element-constant tensor."""
        m = self.minv[tet]
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        return float(np.sqrt(
            d[0] * (m[0] * d[0] + m[1] * d[1] + m[2] * d[2])
            + d[1] * (m[1] * d[0] + m[3] * d[1] + m[4] * d[2])
            + d[2] * (m[2] * d[0] + m[4] * d[1] + m[5] * d[2])))

    # -- solves ------------------------------------------------------------ #

    def solve_from_times(self, times0: NDArray[np.float64],
                         tol: float = 1e-9) -> NDArray[np.float64]:
        """Run the kernel from prescribed initial vertex times (+inf = free)."""
        times0 = np.ascontiguousarray(times0, dtype=np.float64)
        return _fim_impl.fim_solve(
            self._verts, self._tets, self.minv, self.v2t_off, self.v2t_idx,
            self.nbr_off, self.nbr_idx, times0, tol)

    def _seed_vertex_source(self, times0: NDArray[np.float64], v: int,
                            time: float, ball_fraction: float) -> None:
        """Seed a vertex point source.

        When the tensor field is uniform around the source, vertices inside
        a fixed-radius ball get their exact arrival times; this removes the
        source-singularity error that otherwise limits convergence to below
        first order. Heterogeneous neighborhoods fall back to seeding the
        one-ring element-exactly.
        """
        times0[v] = min(times0[v], time)
        ring = self.v2t_idx[self.v2t_off[v]:self.v2t_off[v + 1]]
        if len(ring) == 0:
            return
        m0 = self.minv[ring[0]]
        radius = ball_fraction * float(np.linalg.norm(
            self.vm.vertices.max(axis=0) - self.vm.vertices.min(axis=0)))
        ball = self._vertex_tree.query_ball_point(self._verts[v], radius)
        ball_tets = {int(t) for u in ball
                     for t in self.v2t_idx[self.v2t_off[u]:self.v2t_off[u + 1]]}
        homogeneous = all(
            np.allclose(self.minv[t], m0, rtol=1e-12, atol=0.0)
            for t in ball_tets)
        if homogeneous:
            targets = np.asarray(ball, dtype=np.int64)
            d = self._verts[targets] - self._verts[v]
            dist = np.sqrt(
                d[:, 0] * (m0[0] * d[:, 0] + m0[1] * d[:, 1] + m0[2] * d[:, 2])
                + d[:, 1] * (m0[1] * d[:, 0] + m0[3] * d[:, 1]
                             + m0[4] * d[:, 2])
                + d[:, 2] * (m0[2] * d[:, 0] + m0[4] * d[:, 1]
                             + m0[5] * d[:, 2]))
            np.minimum.at(times0, targets, time + dist)
            return
        for t in ring:
            for u in self._tets[t]:
                cand = time + self.metric_distance(
                    t, self._verts[u], self._verts[v])
                times0[u] = min(times0[u], cand)

    def solve(self, sources, tol: float = 1e-9,
              source_ball_fraction: float = 0.1) -> NDArray[np.float64]:
        """Solve from a list of sources.

        Each source is (vertex_id, time) with an int id, or (point, time)
        with a 3-vector for off-node points (element-exact seeding of the
        containing tet's vertices). Vertex sources in locally homogeneous
        media are seeded exactly inside a ball of source_ball_fraction times
        the mesh diameter.

        The field is the pointwise minimum over per-source solves, matching
        the defining min-over-geodesics semantics exactly (aggregate seeding
        is available through solve_from_times for large source sets).
        """
        if not sources:
            raise SolverError("solve_myocardium needs at least one source")
        out = None
        for loc, time in sources:
            times0 = np.full(self.vm.n_vertices, np.inf)
            if np.isscalar(loc) or isinstance(loc, (int, np.integer)):
                self._seed_vertex_source(times0, int(loc), time,
                                         source_ball_fraction)
            else:
                p = np.asarray(loc, dtype=np.float64)
                tet, snap_v = self.attach_point(p)
                if tet < 0:
                    times0[snap_v] = min(times0[snap_v], time)
                else:
                    for v in self._tets[tet]:
                        cand = time + self.metric_distance(
                            tet, self._verts[v], p)
                        times0[v] = min(times0[v], cand)
            tau = self.solve_from_times(times0, tol)
            out = tau if out is None else np.minimum(out, tau)
        return out


def solve_myocardium(vm: VolumeMesh, tensors: NDArray[np.float64],
                     sources, tol: float = 1e-9) -> NDArray[np.float64]:
    """One-shot convenience wrapper around EikonalSolver."""
    return EikonalSolver(vm, tensors=tensors).solve(sources, tol=tol)


# --------------------------------------------------------------------------- #
# Bidirectional coupling
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class CouplingConfig:
    """Tree conduction velocity, per-tree root times and iteration control."""

    cv_purkinje: float = 3.0                 # m/s
    root_time: dict[str, float] = field(default_factory=dict)  # ms per tree
    max_outer_iters: int = 20
    tol: float = 1e-3                        # ms

    def __post_init__(self):
        if self.tol <= 0:
            raise SolverError("tol must be > 0")
        if self.cv_purkinje <= 0:
            raise SolverError("cv_purkinje must be > 0")


def root_times_from_rt(rt: float) -> dict[str, float]:
    """Map the signed inter-ventricular delay RT (ms) onto per-tree onsets.

    Positive RT delays the right tree; negative RT delays the left tree.
    """
    return {"right": max(rt, 0.0), "left": max(-rt, 0.0)}


class _CoupledTree:
    """Per-tree precomputation for the fixed-point loop."""

    def __init__(self, tree: PurkinjeTree, solver: EikonalSolver):
        self.tree = tree
        self.pmjs = tree.pmjs
        self.points = tree.nodes[tree.pmjs]
        if len(self.points):
            tet_ids, snap_ids = solver.attach_points(self.points)
        else:
            tet_ids = np.empty(0, dtype=np.int64)
            snap_ids = np.empty(0, dtype=np.int64)
        self.tet_ids = tet_ids
        self.snap_ids = snap_ids
        self.in_tet = tet_ids >= 0
        # element-exact seeding distances to the containing tet's vertices
        idx = np.where(self.in_tet)[0]
        self.tet_verts = solver._tets[tet_ids[idx]]            # (nc, 4)
        diff = (solver._verts[self.tet_verts]
                - self.points[idx][:, None, :])                # (nc, 4, 3)
        m = solver.minv[tet_ids[idx]][:, None, :]              # (nc, 1, 6)
        self.tet_dists = np.sqrt(
            diff[..., 0] * (m[..., 0] * diff[..., 0]
                            + m[..., 1] * diff[..., 1]
                            + m[..., 2] * diff[..., 2])
            + diff[..., 1] * (m[..., 1] * diff[..., 0]
                              + m[..., 3] * diff[..., 1]
                              + m[..., 4] * diff[..., 2])
            + diff[..., 2] * (m[..., 2] * diff[..., 0]
                              + m[..., 4] * diff[..., 1]
                              + m[..., 5] * diff[..., 2]))     # (nc, 4)

    def myo_times(self, tau_myo: NDArray[np.float64]) -> NDArray[np.float64]:
        """Earliest myocardial arrival at each PMJ (antidromic sources)."""
        out = np.full(len(self.points), np.inf)
        if self.tet_verts.size:
            out[self.in_tet] = np.min(tau_myo[self.tet_verts] + self.tet_dists,
                                      axis=1)
        snapped = ~self.in_tet
        out[snapped] = tau_myo[self.snap_ids[snapped]]
        return out

    def seed_myocardium(self, times0: NDArray[np.float64],
                        tau_pmj: NDArray[np.float64]) -> None:
        """Element-exact orthodromic seeding into the initial-time vector."""
        t = tau_pmj[self.in_tet]
        if self.tet_verts.size:
            np.minimum.at(times0, self.tet_verts.ravel(),
                          (t[:, None] + self.tet_dists).ravel())
        snapped = ~self.in_tet
        if np.any(snapped):
            np.minimum.at(times0, self.snap_ids[snapped], tau_pmj[snapped])


def solve_coupled(trees: dict[str, PurkinjeTree], vm: VolumeMesh,
                  cm: ConductivityModel, cc: CouplingConfig,
                  solver: EikonalSolver | None = None) -> ActivationField:
    """Alternate tree and myocardium solves until the coupled fixed point.

    Starts from tau_myo = +inf; fields are kept pointwise non-increasing
    across outer iterations, which guarantees termination.
    """
    if solver is None:
        solver = EikonalSolver(vm, cm=cm)
    coupled = {name: _CoupledTree(t, solver) for name, t in trees.items()}
    tau_tree = {name: np.full(t.n_nodes, np.inf) for name, t in trees.items()}
    tau_myo = np.full(vm.n_vertices, np.inf)

    converged = False
    it = 0
    for it in range(1, cc.max_outer_iters + 1):
        max_change = 0.0
        # tree sweeps: root + antidromic sources from the current tau_myo
        for name, ct in coupled.items():
            sources = [(int(ct.tree.root), float(cc.root_time.get(name, 0.0)))]
            t_m = ct.myo_times(tau_myo)
            for i, node in enumerate(ct.pmjs):
                if np.isfinite(t_m[i]):
                    sources.append((int(node), float(t_m[i])))
            new = solve_tree(ct.tree, cc.cv_purkinje, sources)
            new = np.minimum(new, tau_tree[name])
            diff = _finite_max_diff(tau_tree[name], new)
            max_change = max(max_change, diff)
            tau_tree[name] = new
        # myocardium sweep: orthodromic sources at every PMJ
        times0 = np.full(vm.n_vertices, np.inf)
        for name, ct in coupled.items():
            ct.seed_myocardium(times0, tau_tree[name][ct.pmjs])
        new_myo = solver.solve_from_times(times0)
        new_myo = np.minimum(new_myo, tau_myo)
        diff = _finite_max_diff(tau_myo, new_myo)
        max_change = max(max_change, diff)
        tau_myo = new_myo
        if max_change < cc.tol:
            converged = True
            break
    return ActivationField(tau_tree=tau_tree, tau_myo=tau_myo,
                           converged=converged, n_outer_iters=it)


def _finite_max_diff(old: NDArray[np.float64], new: NDArray[np.float64]) -> float:
    both_inf = ~np.isfinite(old) & ~np.isfinite(new)
    d = np.abs(old - new)
    d[both_inf] = 0.0
    newly_finite = ~np.isfinite(old) & np.isfinite(new)
    d[newly_finite] = np.inf
    return float(d.max()) if d.size else 0.0


# --------------------------------------------------------------------------- #
# Exports
# --------------------------------------------------------------------------- #

def write_vtk(vm: VolumeMesh, scalars: NDArray[np.float64], path: str,
              name: str = "activation_ms") -> None:
    """Legacy-ASCII VTK unstructured grid with one point scalar field."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("activation field\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {vm.n_vertices} double\n")
        for v in vm.vertices:
            fh.write(f"{v[0]} {v[1]} {v[2]}\n")
        m = len(vm.tets)
        fh.write(f"CELLS {m} {5 * m}\n")
        for t in vm.tets:
            fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write("\n".join(["10"] * m) + "\n")
        fh.write(f"POINT_DATA {vm.n_vertices}\n")
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for s in scalars:
            fh.write(f"{s if np.isfinite(s) else 1e30}\n")
