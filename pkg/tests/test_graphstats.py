"""Topology metrics against an independent brute-force oracle.

The oracle is a hand-written Floyd-Warshall plus per-node neighbor-pair
triangle counting, practical up to ~50 nodes.
"""

import numpy as np
import pytest

from textgraphnet import graphgen as gg
from textgraphnet import graphstats as gs
from textgraphnet.synthetic import make_token_batch

INF = float("inf")


def oracle_metrics(n, undirected_pairs):
    """Floyd-Warshall distances + brute triangles on an explicit pair set."""
    pairs = {(min(a, b), max(a, b)) for a, b in undirected_pairs if a != b}
    dist = [[0.0 if i == j else INF for j in range(n)] for i in range(n)]
    adj = [set() for _ in range(n)]
    for a, b in pairs:
        dist[a][b] = dist[b][a] = 1.0
        adj[a].add(b)
        adj[b].add(a)
    for k in range(n):
        dk = dist[k]
        for i in range(n):
            dik = dist[i][k]
            if dik == INF:
                continue
            di = dist[i]
            for j in range(n):
                alt = dik + dk[j]
                if alt < di[j]:
                    di[j] = alt
    finite = [dist[i][j] for i in range(n) for j in range(n)
              if i != j and dist[i][j] < INF]
    diameter = int(max(finite)) if finite else 0
    avg_sp = sum(finite) / len(finite) if finite else 0.0
    clustering = 0.0
    for v in range(n):
        neigh = sorted(adj[v])
        d = len(neigh)
        if d < 2:
            continue
        tri = sum(1 for i in range(d) for j in range(i + 1, d)
                  if (neigh[i], neigh[j]) in pairs)
        clustering += 2.0 * tri / (d * (d - 1))
    clustering /= n
    density = 2.0 * len(pairs) / (n * (n - 1)) if n >= 2 else 0.0
    return dict(edges=len(pairs), density=density, diameter=diameter,
                avg_clustering=clustering, avg_shortest_path=avg_sp)


def edge_list(pairs, n_heads=1):
    src = np.array([a for a, b in pairs] + [b for a, b in pairs], dtype=np.int64)
    dst = np.array([b for a, b in pairs] + [a for a, b in pairs], dtype=np.int64)
    return gg.EdgeList(src=src, dst=dst,
                       head_of_edge=np.zeros(len(src), dtype=np.int64),
                       n_heads=n_heads)


def assert_matches(report, expect):
    assert report.edges == expect["edges"]
    assert report.diameter == expect["diameter"]
    np.testing.assert_allclose(report.density, expect["density"], rtol=1e-12)
    np.testing.assert_allclose(report.avg_clustering, expect["avg_clustering"],
                               rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(report.avg_shortest_path,
                               expect["avg_shortest_path"], rtol=1e-12)


class TestFrozenSmallGraphs:
    def test_triangle(self):
        rep = gs.analyze(edge_list([(0, 1), (1, 2), (0, 2)]), (0, 3))
        assert (rep.density, rep.diameter) == (1.0, 1)
        assert rep.avg_clustering == 1.0
        assert rep.avg_shortest_path == 1.0

    def test_path_of_four(self):
        rep = gs.analyze(edge_list([(0, 1), (1, 2), (2, 3)]), (0, 4))
        assert rep.density == 0.5
        assert rep.diameter == 3
        assert rep.avg_clustering == 0.0
        np.testing.assert_allclose(rep.avg_shortest_path, 10 / 6)

    def test_star(self):
        rep = gs.analyze(edge_list([(0, 1), (0, 2), (0, 3)]), (0, 4))
        assert rep.diameter == 2
        np.testing.assert_allclose(rep.avg_shortest_path, 1.5)
        assert rep.avg_clustering == 0.0

    def test_two_disconnected_triangles(self):
        pairs = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
        rep = gs.analyze(edge_list(pairs), (0, 6))
        assert rep.diameter == 1
        assert rep.avg_shortest_path == 1.0
        assert rep.avg_clustering == 1.0
        np.testing.assert_allclose(rep.density, 0.4)

    def test_isolated_node_counts_toward_clustering_average(self):
        pairs = [(0, 1), (1, 2), (0, 2)]
        rep = gs.analyze(edge_list(pairs), (0, 4))
        np.testing.assert_allclose(rep.avg_clustering, 0.75)
        assert rep.diameter == 1

    def test_empty_graph(self):
        edges = gg.EdgeList(src=np.empty(0, dtype=np.int64),
                            dst=np.empty(0, dtype=np.int64),
                            head_of_edge=np.empty(0, dtype=np.int64), n_heads=1)
        rep = gs.analyze(edges, (0, 5))
        assert rep.edges == 0 and rep.density == 0.0
        assert rep.diameter == 0 and rep.avg_shortest_path == 0.0

    def test_duplicate_and_reversed_edges_collapse(self):
        src = np.array([0, 1, 0, 1], dtype=np.int64)
        dst = np.array([1, 0, 1, 2], dtype=np.int64)
        edges = gg.EdgeList(src=src, dst=dst,
                            head_of_edge=np.zeros(4, dtype=np.int64), n_heads=1)
        rep = gs.analyze(edges, (0, 3))
        assert rep.edges == 2

    def test_offset_node_range(self):
        pairs = [(10, 11), (11, 12)]
        rep = gs.analyze(edge_list(pairs), (10, 13))
        assert rep.diameter == 2
        assert rep.edges == 2

    def test_out_of_range_edges_rejected(self):
        with pytest.raises(ValueError):
            gs.analyze(edge_list([(0, 5)]), (0, 3))
        with pytest.raises(ValueError):
            gs.analyze(edge_list([(0, 1)]), (1, 3))


class TestOracleAgreement:
    def test_random_graphs_match_floyd_warshall(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            n = int(rng.integers(2, 50))
            p = float(rng.uniform(0.05, 0.5))
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if rng.random() < p]
            if not pairs:
                continue
            rep = gs.analyze(edge_list(pairs), (0, n))
            assert_matches(rep, oracle_metrics(n, pairs))

    def test_ring_plus_chords_matches(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            n = int(rng.integers(8, 40))
            pairs = [(i, (i + 1) % n) for i in range(n)]
            pairs += [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                      for _ in range(n // 2)]
            pairs = [(a, b) for a, b in pairs if a != b]
            rep = gs.analyze(edge_list(pairs), (0, n))
            assert_matches(rep, oracle_metrics(n, pairs))

    def test_generated_token_graphs_match(self):
        cfg = gg.GraphConfig(n_lattice=6, n_random=4, heads=1, p_keep=1.0)
        for seed in range(6):
            batch = make_token_batch([int(np.random.default_rng(seed).integers(5, 45))],
                                     seed=seed)
            edges = gg.generate_graph(batch, cfg, subsample=False)
            n = batch.n_tokens
            pairs = list(zip(edges.src.tolist(), edges.dst.tolist()))
            rep = gs.analyze(edges, (0, n))
            assert_matches(rep, oracle_metrics(n, pairs))
