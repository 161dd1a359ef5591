"""Mesh data structures, I/O, and harmonic flattening to the unit disk.

Surfaces are triangulated manifolds with exactly one boundary loop (the basal
ring). Flattening solves the discrete Laplace equation per coordinate with
cotangent weights and an arc-length boundary parameterization onto the unit
circle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.linalg import factorized
from scipy.spatial import cKDTree

from .errors import MeshError

__all__ = [
    "SurfaceMesh",
    "VolumeMesh",
    "FlatMap",
    "load_surface",
    "load_volume",
    "save_volume",
    "harmonic_flatten",
    "map_to_surface",
]


# --------------------------------------------------------------------------- #
# Surface meshes
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SurfaceMesh:
    """Triangulated surface with a single boundary loop.

    Attributes:
        vertices: (n, 3) float array, mm.
        triangles: (m, 3) int array of vertex indices.
        boundary_loop: ordered vertex indices of the basal ring, following the
            triangle winding direction.
    """

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int64]
    boundary_loop: NDArray[np.int64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError("vertices must be (n, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must be (m, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise MeshError("triangle references an invalid vertex")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if self.boundary_loop is None:
            object.__setattr__(self, "boundary_loop", _boundary_loop(verts, tris))
        else:
            object.__setattr__(
                self, "boundary_loop",
                np.ascontiguousarray(self.boundary_loop, dtype=np.int64))
        _check_connected(len(verts), tris)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> NDArray[np.float64]:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def _edge_counts(triangles: NDArray[np.int64]) -> dict:
    """Map undirected edge -> number of incident triangles."""
    counts: dict = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(min(a, b)), int(max(a, b)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _boundary_loop(vertices, triangles) -> NDArray[np.int64]:
    """Extract the single boundary loop, oriented with the triangle winding."""
    counts = _edge_counts(triangles)
    if any(c > 2 for c in counts.values()):
        raise MeshError("non-manifold mesh: edge shared by more than 2 triangles")
    boundary = {e for e, c in counts.items() if c == 1}
    if not boundary:
        raise MeshError("mesh has no boundary loop")
    # directed successor map following the winding of the unique incident triangle
    succ: dict = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(min(a, b)), int(max(a, b)))
            if key in boundary:
                if int(a) in succ:
                    raise MeshError("non-manifold boundary vertex")
                succ[int(a)] = int(b)
    start = min(succ)
    loop = [start]
    cur = succ[start]
    while cur != start:
        loop.append(cur)
        if cur not in succ:
            raise MeshError("open boundary chain (mesh not manifold-with-boundary)")
        cur = succ[cur]
        if len(loop) > len(succ):
            raise MeshError("boundary traversal did not close")
    if len(loop) != len(succ):
        raise MeshError("mesh has multiple boundary loops")
    loop_arr = np.asarray(loop, dtype=np.int64)
    interior = np.setdiff1d(np.arange(len(vertices)), loop_arr)
    if interior.size == 0:
        raise MeshError("mesh has no interior vertices (degenerate patch)")
    return loop_arr


def _check_connected(n_vertices: int, triangles) -> None:
    if len(triangles) == 0:
        raise MeshError("mesh has no triangles")
    rows = np.concatenate([triangles[:, 0], triangles[:, 1], triangles[:, 2]])
    cols = np.concatenate([triangles[:, 1], triangles[:, 2], triangles[:, 0]])
    adj = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    n_comp, _ = sp.csgraph.connected_components(adj, directed=False)
    if n_comp != 1:
        raise MeshError(f"mesh is disconnected ({n_comp} components)")


def load_surface(path: str, fmt: str | None = None) -> SurfaceMesh:
    """Load an OBJ or OFF surface. Format inferred from the extension if omitted."""
    if fmt is None:
        fmt = "OFF" if str(path).lower().endswith(".off") else "OBJ"
    fmt = fmt.upper()
    if fmt == "OBJ":
        verts, tris = _read_obj(path)
    elif fmt == "OFF":
        verts, tris = _read_off(path)
    else:
        raise MeshError(f"unknown surface format {fmt!r}")
    return SurfaceMesh(np.asarray(verts), np.asarray(tris))


def _read_obj(path):
    verts, tris = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{ln}: bad vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"{path}:{ln}: only triangular faces supported")
                tris.append(idx)
    if not verts or not tris:
        raise MeshError(f"{path}: no geometry found")
    return verts, tris


def _read_off(path):
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = []
        for _ in range(nv):
            verts.append([float(t) for t in tokens[pos:pos + 3]])
            pos += 3
        tris = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            if cnt != 3:
                raise MeshError(f"{path}: only triangular faces supported")
            tris.append([int(t) for t in tokens[pos + 1:pos + 4]])
            pos += 1 + cnt
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: OFF parse failure: {exc}") from exc
    return verts, tris


def save_surface_obj(mesh: SurfaceMesh, path: str) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# --------------------------------------------------------------------------- #
# Volume meshes
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class VolumeMesh:
    """Tetrahedral myocardium with a unit fiber vector per tet.

    Attributes:
        vertices: (n, 3) float array, mm.
        tets: (m, 4) int array, positively oriented.
        fiber: (m, 3) unit vectors.
    """

    vertices: NDArray[np.float64]
    tets: NDArray[np.int64]
    fiber: NDArray[np.float64]

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        fiber = np.ascontiguousarray(self.fiber, dtype=np.float64)
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError("tets must be (m, 4)")
        if fiber.shape != (len(tets), 3):
            raise MeshError("fiber must be one unit vector per tet")
        vols = _tet_volumes(verts, tets)
        if np.any(vols <= 0):
            raise MeshError("all tets must be positively oriented (volume > 0)")
        norms = np.linalg.norm(fiber, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-8):
            raise MeshError("fiber vectors must be unit length")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "fiber", fiber)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def tet_volumes(self) -> NDArray[np.float64]:
        return _tet_volumes(self.vertices, self.tets)

    def match_surface_vertices(self, surface: SurfaceMesh,
                               tol: float = 1e-9) -> NDArray[np.int64]:
        """Map surface vertex ids to coincident volume vertex ids."""
        tree = cKDTree(self.vertices)
        d, idx = tree.query(surface.vertices)
        if np.any(d > tol):
            raise MeshError("surface vertex has no coincident volume vertex")
        return idx.astype(np.int64)


def _tet_volumes(vertices, tets):
    p = vertices[tets]
    return np.einsum(
        "ij,ij->i",
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
        p[:, 3] - p[:, 0]) / 6.0


def load_volume(path: str) -> VolumeMesh:
    """Read the plain-text node/element format (v/t/f lines)."""
    verts, tets, fibers = [], [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif tag == "t":
                    tets.append([int(x) for x in parts[1:5]])
                elif tag == "f":
                    fibers.append([float(x) for x in parts[1:4]])
                else:
                    raise MeshError(f"{path}:{ln}: unknown record {tag!r}")
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{ln}: parse failure") from exc
    if not verts or not tets:
        raise MeshError(f"{path}: no volume geometry found")
    return VolumeMesh(np.asarray(verts), np.asarray(tets), np.asarray(fibers))


def save_volume(vm: VolumeMesh, path: str) -> None:
    with open(path, "w") as fh:
        for v in vm.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in vm.tets:
            fh.write(f"t {t[0]} {t[1]} {t[2]} {t[3]}\n")
        for f in vm.fiber:
            fh.write(f"f {float(f[0])!r} {float(f[1])!r} {float(f[2])!r}\n")


# --------------------------------------------------------------------------- #
# Harmonic flattening
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class FlatMap:
    """Harmonic parameterization onto the closed unit disk.

    Attributes:
        uv: (n, 2) coordinates per surface vertex; boundary on the unit circle.
        scale: per-triangle length factor s (mm per uv-unit), sqrt(A3D/A2D).
    """

    uv: NDArray[np.float64]
    scale: NDArray[np.float64]

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump({"uv": self.uv.tolist(), "scale": self.scale.tolist()}, fh)

    @classmethod
    def from_json(cls, path: str) -> "FlatMap":
        with open(path) as fh:
            data = json.load(fh)
        return cls(np.asarray(data["uv"], dtype=np.float64),
                   np.asarray(data["scale"], dtype=np.float64))


def _cotangent_weights(mesh: SurfaceMesh) -> sp.csr_matrix:
    """Symmetric cotangent weight matrix, negative entries clamped to zero."""
    n = mesh.n_vertices
    tris = mesh.triangles
    p = mesh.vertices[tris]
    w = sp.lil_matrix((n, n))
    rows, cols, vals = [], [], []
    for k in range(3):
        i = tris[:, (k + 1) % 3]
        j = tris[:, (k + 2) % 3]
        o = p[:, k]
        e1 = p[:, (k + 1) % 3] - o
        e2 = p[:, (k + 2) % 3] - o
        cos = np.einsum("ij,ij->i", e1, e2)
        sin = np.linalg.norm(np.cross(e1, e2), axis=1)
        cot = cos / np.maximum(sin, 1e-300)
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([0.5 * cot, 0.5 * cot])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    w.data = np.maximum(w.data, 0.0)  # clamp preserves the maximum principle
    w.eliminate_zeros()
    return w


def harmonic_flatten(mesh: SurfaceMesh) -> FlatMap:
    """Flatten the surface onto the unit disk by solving Laplace's equation
    once per coordinate, with the basal ring mapped to the circle by
    cumulative arc length (start vertex = lowest-index boundary vertex)."""
    n = mesh.n_vertices
    loop = mesh.boundary_loop
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    total = seg.sum()
    if total <= 0:
        raise MeshError("degenerate boundary loop")
    theta = 2.0 * np.pi * np.concatenate([[0.0], np.cumsum(seg[:-1])]) / total
    uv_bnd = np.column_stack([np.cos(theta), np.sin(theta)])

    w = _cotangent_weights(mesh)
    deg = np.asarray(w.sum(axis=1)).ravel()
    lap = sp.diags(deg) - w

    is_bnd = np.zeros(n, dtype=bool)
    is_bnd[loop] = True
    interior = np.where(~is_bnd)[0]

    uv = np.zeros((n, 2))
    uv[loop] = uv_bnd
    a_ii = lap[interior][:, interior].tocsc()
    a_ib = lap[interior][:, loop]
    try:
        solve = factorized(a_ii)
    except RuntimeError as exc:
        raise MeshError(f"singular Laplacian system: {exc}") from exc
    for c in range(2):
        rhs = -a_ib @ uv_bnd[:, c]
        uv[interior, c] = solve(rhs)

    a3 = mesh.triangle_areas()
    q = uv[mesh.triangles]
    a2 = 0.5 * np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
    if np.any(np.abs(a2) < 1e-300):
        raise MeshError("degenerate zero-area triangle in the flattened map")
    scale = np.sqrt(a3 / np.abs(a2))
    return FlatMap(uv, scale)


# --------------------------------------------------------------------------- #
# Point location and inverse mapping
# --------------------------------------------------------------------------- #

class FlatLocator:
    """Point location in the flattened triangulation, with barycentric
    evaluation of the 3D embedding. Immutable after construction."""

    def __init__(self, fm: FlatMap, mesh: SurfaceMesh, slack: float = 1e-10):
        self.fm = fm
        self.mesh = mesh
        self.slack = slack
        tris = mesh.triangles
        uv = fm.uv
        self._centroids = uv[tris].mean(axis=1)
        self._tree = cKDTree(self._centroids)
        # cached per-triangle affine inverse for barycentric coordinates
        a = uv[tris[:, 0]]
        b = uv[tris[:, 1]]
        c = uv[tris[:, 2]]
        m00 = b[:, 0] - a[:, 0]
        m01 = c[:, 0] - a[:, 0]
        m10 = b[:, 1] - a[:, 1]
        m11 = c[:, 1] - a[:, 1]
        det = m00 * m11 - m01 * m10
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        self._a = a
        self._inv = np.stack(
            [m11 / det, -m01 / det, -m10 / det, m00 / det], axis=1)

    def locate(self, points: NDArray[np.float64],
               k_max: int = 256) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Return (triangle id, barycentric coords) per query; id -1 if outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(pts)
        out_tri = np.full(n, -1, dtype=np.int64)
        out_bar = np.zeros((n, 3))
        pending = np.arange(n)
        ntri = len(self._centroids)
        k = 8
        while pending.size:
            kk = min(k, ntri)
            _, cand = self._tree.query(pts[pending], k=kk)
            cand = cand.reshape(len(pending), kk)
            # barycentric test for all (point, candidate) pairs at once
            d = pts[pending, None, :] - self._a[cand]          # (p, k, 2)
            inv = self._inv[cand]                              # (p, k, 4)
            l1 = inv[..., 0] * d[..., 0] + inv[..., 1] * d[..., 1]
            l2 = inv[..., 2] * d[..., 0] + inv[..., 3] * d[..., 1]
            l0 = 1.0 - l1 - l2
            s = self.slack
            ok = (l0 >= -s) & (l1 >= -s) & (l2 >= -s) & np.isfinite(l1)
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            rows = np.where(hit)[0]
            pi = pending[rows]
            tri = cand[rows, first[rows]]
            out_tri[pi] = tri
            out_bar[pi, 0] = l0[rows, first[rows]]
            out_bar[pi, 1] = l1[rows, first[rows]]
            out_bar[pi, 2] = l2[rows, first[rows]]
            pending = pending[~hit]
            if kk >= min(k_max, ntri):
                break
            k *= 4
        return out_tri, out_bar

    def to_surface(self, points: NDArray[np.float64]):
        """Map uv points to 3D via barycentric interpolation.

        Returns (xyz (n,3), tri ids (n,)); tri id -1 marks points outside the
        mapped domain (their xyz row is NaN).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tri, bar = self.locate(pts)
        xyz = np.full((len(pts), 3), np.nan)
        ok = tri >= 0
        if np.any(ok):
            verts = self.mesh.vertices[self.mesh.triangles[tri[ok]]]
            xyz[ok] = np.einsum("ij,ijk->ik", bar[ok], verts)
        return xyz, tri


def map_to_surface(fm: FlatMap, mesh: SurfaceMesh, u) -> tuple[NDArray[np.float64], int]:
    """Map a single uv point inside the disk to its 3D surface position.

    Raises MeshError if the point lies outside every mapped triangle.
    """
    loc = FlatLocator(fm, mesh)
    xyz, tri = loc.to_surface(np.asarray(u, dtype=np.float64)[None, :])
    if tri[0] < 0:
        raise MeshError(f"uv point {u} is outside the mapped domain")
    return xyz[0], int(tri[0])
