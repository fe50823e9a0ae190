"""Topology metrics over the undirected simple view of a token graph.

Density, diameter (largest finite eccentricity), average local clustering,
and average shortest path over connected pairs. Distances come from
scipy's csgraph BFS; triangles from sparse A*A masked by A. Intended for
graphs up to a few thousand nodes (dense distance matrix).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path


@dataclass
class TopologyReport:
    nodes: int
    edges: int
    density: float
    diameter: int
    avg_clustering: float
    avg_shortest_path: float

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": self.edges,
            "density": self.density,
            "diameter": self.diameter,
            "avg_clustering": self.avg_clustering,
            "avg_shortest_path": self.avg_shortest_path,
        }


def _undirected_pairs(src: np.ndarray, dst: np.ndarray):
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    keep = lo != hi
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        return lo, hi
    keys = np.unique(lo * (hi.max() + 1) + hi)
    return keys // (hi.max() + 1), keys % (hi.max() + 1)


def analyze(edges, node_range) -> TopologyReport:
    """Metrics for the induced graph on [lo, hi).

    `edges` is an EdgeList (or anything with .src/.dst); every edge must lie
    inside the range.
    """
    lo_n, hi_n = int(node_range[0]), int(node_range[1])
    n = hi_n - lo_n
    if n < 1:
        raise ValueError("node range must be non-empty")
    src = np.asarray(edges.src, dtype=np.int64)
    dst = np.asarray(edges.dst, dtype=np.int64)
    if src.size and ((src < lo_n).any() or (src >= hi_n).any()
                     or (dst < lo_n).any() or (dst >= hi_n).any()):
        raise ValueError("edges fall outside the node range")

    u, v = _undirected_pairs(src - lo_n, dst - lo_n)
    m = u.shape[0]
    density = (2.0 * m / (n * (n - 1))) if n >= 2 else 0.0
    if m == 0:
        return TopologyReport(nodes=n, edges=0, density=0.0, diameter=0,
                              avg_clustering=0.0, avg_shortest_path=0.0)

    ones = np.ones(2 * m, dtype=np.int32)
    adj = sparse.csr_matrix(
        (ones, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))

    dist = shortest_path(adj, method="D", directed=False, unweighted=True)
    off = ~np.eye(n, dtype=bool)
    finite = np.isfinite(dist) & off
    if finite.any():
        diameter = int(dist[finite].max())
        avg_sp = float(dist[finite].mean())
    else:
        diameter, avg_sp = 0, 0.0

    deg = np.asarray(adj.sum(axis=1)).reshape(-1).astype(np.int64)
    common = (adj @ adj).multiply(adj)
    wedge_hits = np.asarray(common.sum(axis=1)).reshape(-1).astype(np.float64)
    denom = deg * (deg - 1)
    local = np.zeros(n, dtype=np.float64)
    ok = denom > 0
    local[ok] = wedge_hits[ok] / denom[ok]  # = 2*T_v / (deg*(deg-1))
    return TopologyReport(nodes=n, edges=m, density=density, diameter=diameter,
                          avg_clustering=float(local.mean()),
                          avg_shortest_path=avg_sp)
