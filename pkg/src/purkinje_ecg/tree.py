"""Fractal Purkinje tree growth in the flattened disk.

Growth happens entirely in uv space; every committed node is mapped back to
the 3D surface through the flat map. Branches of one generation advance
segment-by-segment in lockstep so the repulsion term sees concurrent
siblings. All randomness-free: identical inputs give bit-identical trees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import GrowthError
from .meshes import FlatLocator, FlatMap, SurfaceMesh

__all__ = [
    "TreeGrowthConfig",
    "VentricleParams",
    "PurkinjeTree",
    "grow_tree",
    "closest_point_gradient",
]


@dataclass(frozen=True)
class TreeGrowthConfig:
    """Fixed growth constants shared by the whole tree."""

    branch_length: float = 8.0       # l_b, mm
    segments_per_branch: int = 8     # N_s
    repulsion: float = 0.1           # w
    branch_angle: float = 0.15       # rad
    generations: int = 20
    root_uv: tuple[float, float] = (0.0, 0.0)
    initial_direction_uv: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if self.branch_length <= 0:
            raise GrowthError("branch_length must be > 0")
        if self.segments_per_branch < 1:
            raise GrowthError("segments_per_branch must be >= 1")
        if self.repulsion < 0:
            raise GrowthError("repulsion must be >= 0")
        if self.generations < 0:
            raise GrowthError("generations must be >= 0")
        if np.hypot(*self.root_uv) >= 1.0:
            raise GrowthError("root_uv must lie inside the unit disk")


@dataclass(frozen=True)
class VentricleParams:
    """Per-ventricle geometric parameters (searched during inference)."""

    initial_length: float            # l_i, mm
    fascicle_lengths: tuple[float, float]   # l_F1, l_F2, mm
    fascicle_angles: tuple[float, float]    # alpha_F1, alpha_F2, rad (CCW +)


@dataclass
class PurkinjeTree:
    """Polyline branch graph with root, branch points and PMJ leaves."""

    nodes: NDArray[np.float64]       # (n, 3) mm
    uv: NDArray[np.float64]          # (n, 2)
    edges: NDArray[np.int64]         # (n-1, 2)
    edge_lengths: NDArray[np.float64]
    root: int
    pmjs: NDArray[np.int64] = field(default=None)  # type: ignore[assignment]
    branch_points: NDArray[np.int64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64)
        self.edge_lengths = np.asarray(self.edge_lengths, dtype=np.float64)
        n = len(self.nodes)
        if len(self.edges) != n - 1:
            raise GrowthError("edge graph is not a tree (|edges| != |nodes|-1)")
        if np.any(self.edge_lengths <= 0):
            raise GrowthError("all edge lengths must be > 0")
        deg = np.zeros(n, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        if self.pmjs is None:
            leaves = np.where(deg == 1)[0]
            self.pmjs = leaves[leaves != self.root]
        else:
            self.pmjs = np.asarray(self.pmjs, dtype=np.int64)
        if self.branch_points is None:
            self.branch_points = np.where(deg == 3)[0]
        else:
            self.branch_points = np.asarray(self.branch_points, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def to_json(self, path: str) -> None:
        data = {
            "nodes": self.nodes.tolist(),
            "uv": self.uv.tolist(),
            "edges": self.edges.tolist(),
            "root": int(self.root),
            "pmjs": self.pmjs.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(data, fh)

    @classmethod
    def from_json(cls, path: str) -> "PurkinjeTree":
        with open(path) as fh:
            data = json.load(fh)
        nodes = np.asarray(data["nodes"], dtype=np.float64)
        edges = np.asarray(data["edges"], dtype=np.int64)
        lengths = np.linalg.norm(
            nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
        return cls(nodes=nodes, uv=np.asarray(data["uv"], dtype=np.float64),
                   edges=edges, edge_lengths=lengths, root=int(data["root"]),
                   pmjs=np.asarray(data["pmjs"], dtype=np.int64))

    def to_obj(self, path: str) -> None:
        """Polyline OBJ export for viewers."""
        with open(path, "w") as fh:
            for p in self.nodes:
                fh.write(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
            for a, b in self.edges:
                fh.write(f"l {a + 1} {b + 1}\n")


def closest_point_gradient(points: NDArray[np.float64],
                           x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Unit vector pointing away from the nearest accumulated uv point.

    Returns the zero vector when the nearest distance is below 1e-12
    (collision). The caller is responsible for excluding the growing
    branch's own recent points from `points`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise GrowthError("closest_point_gradient needs at least one point")
    x = np.asarray(x, dtype=np.float64)
    d = pts - x[None, :]
    dist = np.hypot(d[:, 0], d[:, 1])
    i = int(np.argmin(dist))
    if dist[i] < 1e-12:
        return np.zeros(2)
    return -d[i] / dist[i]


def _rotate(v: NDArray[np.float64], angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


class _Branch:
    """Mutable state of one growing branch."""

    __slots__ = ("bid", "tip_node", "tip_uv", "direction", "steps_left",
                 "step_mm", "scale", "step_index", "alive", "recent",
                 "generation")

    def __init__(self, bid, tip_node, tip_uv, direction, n_steps, step_mm,
                 scale, generation):
        self.bid = bid
        self.tip_node = tip_node
        self.tip_uv = np.asarray(tip_uv, dtype=np.float64)
        self.direction = np.asarray(direction, dtype=np.float64)
        self.steps_left = n_steps
        self.step_mm = step_mm
        self.scale = scale
        self.step_index = 0
        self.alive = True
        self.recent: list[int] = []   # own most recent node ids (window N_s)
        self.generation = generation


class _Grower:
    """Shared growth state: accumulated uv points and their branch tags."""

    def __init__(self, locator: FlatLocator, cfg: TreeGrowthConfig):
        self.loc = locator
        self.cfg = cfg
        self.nodes_uv: list[np.ndarray] = []
        self.nodes_xyz: list[np.ndarray] = []
        self.node_branch: list[int] = []
        self.edges: list[tuple[int, int]] = []
        self.edge_lengths: list[float] = []
        self._tree: cKDTree | None = None
        self._tree_size = 0

    def add_node(self, uv, xyz, bid) -> int:
        self.nodes_uv.append(np.asarray(uv, dtype=np.float64))
        self.nodes_xyz.append(np.asarray(xyz, dtype=np.float64))
        self.node_branch.append(bid)
        return len(self.nodes_uv) - 1

    def add_edge(self, a: int, b: int) -> None:
        length = float(np.linalg.norm(self.nodes_xyz[a] - self.nodes_xyz[b]))
        if length <= 0:
            length = 1e-12  # coincident mapped points on a degenerate triangle
        self.edges.append((a, b))
        self.edge_lengths.append(length)

    def refresh_index(self) -> None:
        if len(self.nodes_uv) != self._tree_size:
            self._tree = cKDTree(np.asarray(self.nodes_uv))
            self._tree_size = len(self.nodes_uv)

    def nearest_external_batch(self, xs: np.ndarray,
                               exclusions: list[set[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Per query point, the nearest snapshot point not in its exclusion set.

        Uses the index as last refreshed (call refresh_index() at sweep start).
        Returns (distances, node ids); (inf, -1) where everything is excluded.
        """
        n = self._tree_size
        nq = len(xs)
        out_d = np.full(nq, np.inf)
        out_i = np.full(nq, -1, dtype=np.int64)
        if n == 0 or nq == 0:
            return out_d, out_i
        max_excl = max((len(e) for e in exclusions), default=0)
        k = min(max(8, max_excl + 2), n)
        pending = np.arange(nq)
        while pending.size:
            dist, idx = self._tree.query(xs[pending], k=k)
            dist = dist.reshape(len(pending), k)
            idx = idx.reshape(len(pending), k)
            excl = np.full((len(pending), max(max_excl, 1)), -1, dtype=np.int64)
            for r, pi in enumerate(pending):
                ids = list(exclusions[pi])
                excl[r, :len(ids)] = ids
            masked = (idx[:, :, None] == excl[:, None, :]).any(axis=2)
            dist = np.where(masked, np.inf, dist)
            best = np.argmin(dist, axis=1)
            rows = np.arange(len(pending))
            found = np.isfinite(dist[rows, best])
            sel = pending[found]
            out_d[sel] = dist[rows[found], best[found]]
            out_i[sel] = idx[rows[found], best[found]]
            pending = pending[~found]
            if k == n:
                break
            k = min(4 * k, n)
        return out_d, out_i


def _advance_lockstep(g: _Grower, branches: list[_Branch],
                      collision_factor: float = 0.1) -> None:
    """Advance all given branches one segment per sweep until none is alive.

    Proposals, repulsion and collision checks within a sweep all see the
    point set as of the sweep start (simultaneous growth); commits happen in
    branch order, so the result is deterministic.
    """
    cfg = g.cfg
    w = cfg.repulsion
    ns_window = cfg.segments_per_branch
    while True:
        active = [b for b in branches if b.alive and b.steps_left > 0]
        if not active:
            break
        g.refresh_index()  # snapshot for this sweep
        for b in active:
            b.step_index += 1
        exclusions = []
        for b in active:
            ex = set(b.recent[-ns_window:])
            ex.add(b.tip_node)
            exclusions.append(ex)
        tips = np.asarray([b.tip_uv for b in active])
        dirs = np.asarray([b.direction for b in active])
        # repulsion (skipped on the first segment of each branch)
        if w > 0.0:
            dist, nid = g.nearest_external_batch(tips, exclusions)
            usable = np.isfinite(dist) & (dist >= 1e-12)
            usable &= np.asarray([b.step_index > 1 for b in active])
            if np.any(usable):
                nearest = np.asarray(
                    [g.nodes_uv[i] if i >= 0 else (0.0, 0.0) for i in nid])
                grad = np.zeros_like(tips)
                grad[usable] = (tips[usable] - nearest[usable]) \
                    / dist[usable, None]
                d = dirs + w * grad
                nrm = np.hypot(d[:, 0], d[:, 1])
                keep = nrm > 1e-300
                d[keep] /= nrm[keep, None]
                d[~keep] = dirs[~keep]
                dirs = np.where(usable[:, None], d, dirs)
        uv_steps = np.asarray([b.step_mm / b.scale for b in active])
        proposals = tips + uv_steps[:, None] * dirs
        inside = np.hypot(proposals[:, 0], proposals[:, 1]) < 1.0
        xyz, tri = g.loc.to_surface(proposals)
        col_dist, _ = g.nearest_external_batch(proposals, exclusions)
        collide = col_dist < collision_factor * uv_steps
        for i, b in enumerate(active):
            if not inside[i] or tri[i] < 0 or collide[i]:
                b.alive = False  # steps_left > 0 marks premature termination
                continue
            nid = g.add_node(proposals[i], xyz[i], b.bid)
            g.add_edge(b.tip_node, nid)
            b.recent.append(nid)
            b.tip_node = nid
            b.tip_uv = proposals[i]
            b.direction = dirs[i]
            b.scale = float(g.loc.fm.scale[tri[i]])
            b.steps_left -= 1
            if b.steps_left == 0:
                b.alive = False


def _polyline_steps(length: float, base_step: float) -> tuple[int, float]:
    """Number of segments and per-segment 3D length covering `length` exactly."""
    n = max(1, int(np.ceil(length / base_step - 1e-12)))
    return n, length / n


def grow_tree(fm: FlatMap, mesh: SurfaceMesh, cfg: TreeGrowthConfig,
              vp: VentricleParams) -> PurkinjeTree:
    """Grow one ventricular tree: initial branch, two fascicles, then binary
    fractal growth for cfg.generations levels."""
    loc = FlatLocator(fm, mesh)
    g = _Grower(loc, cfg)
    base_step = cfg.branch_length / cfg.segments_per_branch

    root_uv = np.asarray(cfg.root_uv, dtype=np.float64)
    xyz, tri = loc.to_surface(root_uv[None, :])
    if tri[0] < 0:
        raise GrowthError("root_uv does not map into the surface")
    root_id = g.add_node(root_uv, xyz[0], bid=0)
    root_scale = float(fm.scale[tri[0]])

    d0 = np.asarray(cfg.initial_direction_uv, dtype=np.float64)
    nrm = np.hypot(d0[0], d0[1])
    if nrm < 1e-300:
        raise GrowthError("initial_direction_uv must be nonzero")
    d0 = d0 / nrm

    # (1) initial branch
    n_steps, step_mm = _polyline_steps(vp.initial_length, base_step)
    trunk = _Branch(0, root_id, root_uv, d0, n_steps, step_mm, root_scale,
                    generation=-2)
    _advance_lockstep(g, [trunk])
    if trunk.tip_node == root_id:
        raise GrowthError("initial branch was blocked at the root")

    # (2) fascicles, rotated relative to the trunk's final segment direction
    fascicles = []
    next_bid = 1
    for length, angle in zip(vp.fascicle_lengths, vp.fascicle_angles):
        n_steps, step_mm = _polyline_steps(length, base_step)
        fascicles.append(_Branch(
            next_bid, trunk.tip_node, trunk.tip_uv,
            _rotate(trunk.direction, angle), n_steps, step_mm, trunk.scale,
            generation=-1))
        next_bid += 1
    _advance_lockstep(g, fascicles)

    # (3) binary fractal growth from the fascicle tips
    parents = [b for b in fascicles if b.tip_node != trunk.tip_node]
    for _gen in range(cfg.generations):
        children = []
        for parent in parents:
            if parent.steps_left > 0:  # clipped or collided: tip stays a PMJ
                continue
            for sign in (+1.0, -1.0):
                n_steps, step_mm = _polyline_steps(cfg.branch_length, base_step)
                children.append(_Branch(
                    next_bid, parent.tip_node, parent.tip_uv,
                    _rotate(parent.direction, sign * cfg.branch_angle),
                    n_steps, step_mm, parent.scale, generation=_gen))
                next_bid += 1
        if not children:
            break
        _advance_lockstep(g, children)
        parents = [b for b in children if b.tip_node is not None
                   and b.recent]  # branches that added at least one node
    if len(g.nodes_uv) <= 1:
        raise GrowthError("all growth immediately blocked")
    return PurkinjeTree(
        nodes=np.asarray(g.nodes_xyz),
        uv=np.asarray(g.nodes_uv),
        edges=np.asarray(g.edges, dtype=np.int64),
        edge_lengths=np.asarray(g.edge_lengths),
        root=root_id,
    )
