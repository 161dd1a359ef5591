"""Bellman-Ford shortest-path oracle for serialized conduction trees.

The primary package solves tree activation with a Dijkstra variant; this
oracle relaxes the undirected edge list until a fixed point, which is the
textbook Bellman-Ford formulation. Disconnected nodes stay at +inf.
"""

from __future__ import annotations

import json

import numpy as np


def load_tree(path: str) -> dict:
    """Read a tree JSON artifact into arrays; edge lengths come from the
    embedded node geometry."""
    with open(path) as fh:
        data = json.load(fh)
    for key in ("nodes", "edges", "root", "pmjs"):
        if key not in data:
            raise ValueError(f"tree JSON {path} is missing {key!r}")
    nodes = np.asarray(data["nodes"], dtype=np.float64)
    edges = np.asarray(data["edges"], dtype=np.int64)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise ValueError("edges must be an (m, 2) list")
    if edges.size and (edges.min() < 0 or edges.max() >= len(nodes)):
        raise ValueError("edge endpoint out of range")
    lengths = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
    return {"nodes": nodes, "edges": edges, "lengths": lengths,
            "root": int(data["root"]),
            "pmjs": np.asarray(data["pmjs"], dtype=np.int64)}


def bellman_ford_times(tree: dict, cv: float,
                       sources: list[tuple[int, float]]) -> np.ndarray:
    """Node activation times for (node, time) sources at velocity cv.

    cv is in m/s (numerically mm/ms for mm geometry).
    """
    if cv <= 0:
        raise ValueError("cv must be positive")
    if not sources:
        raise ValueError("need at least one source")
    n = len(tree["nodes"])
    w = tree["lengths"] / cv
    a = tree["edges"][:, 0]
    b = tree["edges"][:, 1]
    dist = np.full(n, np.inf)
    for node, t in sources:
        if not 0 <= node < n:
            raise ValueError(f"source node {node} out of range")
        dist[node] = min(dist[node], float(t))
    for _ in range(max(n - 1, 1)):
        new = dist.copy()
        np.minimum.at(new, b, dist[a] + w)   # handles repeated endpoints
        np.minimum.at(new, a, dist[b] + w)
        if np.array_equal(new, dist):
            break
        dist = new
    return dist


def read_times_csv(path: str) -> np.ndarray:
    """Read a node,time CSV (header row, one node per line, ordered)."""
    rows = np.genfromtxt(path, delimiter=",", skip_header=1)
    rows = np.atleast_2d(rows)
    order = np.argsort(rows[:, 0])
    return rows[order, 1]
