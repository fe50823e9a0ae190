"""Real-time text-graph construction.

Each token gets deterministic lattice edges (modular ring offsets within its
document) plus seeded random edges. Random targets are drawn in pairs: each
draw emits both directions, so `n_random` counts emitted edge slots and every
token contributes exactly n_lattice + n_random raw directed edges. All edges
stay inside their document's token range; generation is O(n) in batch tokens.

Randomness is keyed per document by content hash (plus an epoch/step salt),
so identical documents receive identical graphs wherever they appear in a
batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

logger = logging.getLogger(__name__)


@dataclass
class GraphConfig:
    lattice_begin: int = 2   # m: first ring offset
    lattice_step: int = 2    # s: offset increment
    n_lattice: int = 10      # k1: lattice edges per token
    n_random: int = 6        # k2: random edge slots per token
    heads: int = 4           # H: attention heads edges are chunked into
    p_keep: float = 0.75     # kept fraction per head in edge sub-sampling
    rng_seed: int = 0

    def __post_init__(self):
        if self.lattice_begin < 1 or self.lattice_step < 1:
            raise ValueError("lattice_begin and lattice_step must be >= 1")
        if self.n_lattice < 0 or self.n_random < 0:
            raise ValueError("edge counts must be non-negative")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if not 0.0 < self.p_keep <= 1.0:
            raise ValueError("p_keep must be in (0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "GraphConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class EdgeList:
    """Directed edges over batch token positions, chunked into heads.

    Edges of head h occupy the contiguous block [h*E/H, (h+1)*E/H); E is
    always divisible by the head count. `raw_pair_count` records the edge
    slots emitted before self-loop/duplicate removal.
    """

    src: np.ndarray
    dst: np.ndarray
    head_of_edge: np.ndarray
    n_heads: int
    raw_pair_count: int = 0

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    @property
    def edges_per_head(self) -> int:
        return self.n_edges // self.n_heads

    def head_slice(self, h: int) -> slice:
        eh = self.edges_per_head
        return slice(h * eh, (h + 1) * eh)

    def undirected_pairs(self) -> np.ndarray:
        """Canonical (min,max) unique pairs; used by topology statistics."""
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        keys = np.unique(lo.astype(np.int64) * (hi.max() + 1 if hi.size else 1) + hi)
        return keys


def _salt_keys(salt):
    if isinstance(salt, (tuple, list)):
        return tuple(int(s) for s in salt)
    return (int(salt),)


def _doc_random_targets(gen, n_tokens: int, lower: int, pos_in_doc: np.ndarray,
                        n_draws: int) -> np.ndarray:
    """Random in-document targets: r = int((2|D|+1)*rand()),
    target = ((r mod |D|) + p_n + 1) mod |D| + l_n."""
    d = n_tokens
    if n_draws == 0:
        return np.empty((pos_in_doc.shape[0], 0), dtype=np.int64)
    r = (gen.random((pos_in_doc.shape[0], n_draws)) * (2 * d + 1)).astype(np.int64)
    return ((r % d) + pos_in_doc[:, None] + 1) % d + lower


def calc_graph_metadata(batch, cfg: GraphConfig, salt=0):
    """Per-token lattice and random target arrays.

    Returns (R_b, L_b, p_b): R_b has one column per random draw (each draw
    later emits both directions), L_b one column per lattice offset. All
    targets lie inside the owning document's token range.
    """
    p_b = batch.token_pos_in_batch
    p_n = batch.token_pos_in_doc
    doc_sizes = batch.tokens_per_doc[batch.token_doc_id]
    doc_lower = batch.doc_lower_bounds[batch.token_doc_id]

    offsets = cfg.lattice_begin + cfg.lattice_step * np.arange(cfg.n_lattice, dtype=np.int64)
    l_b = (p_n[:, None] + offsets[None, :]) % doc_sizes[:, None] + doc_lower[:, None]

    n_draws = (cfg.n_random + 1) // 2
    r_b = np.empty((batch.n_tokens, n_draws), dtype=np.int64)
    salt_keys = _salt_keys(salt)
    for d in range(batch.n_docs):
        lo, hi = batch.doc_token_range(d)
        gen = rngmod.substream(cfg.rng_seed, rngmod.STREAM_GRAPH,
                               int(batch.doc_hashes[d]), *salt_keys)
        r_b[lo:hi] = _doc_random_targets(gen, hi - lo, lo, p_n[lo:hi], n_draws)
    return r_b, l_b, p_b


def _dedup_stable(src: np.ndarray, dst: np.ndarray, n_tokens: int):
    keys = src * np.int64(n_tokens) + dst
    _, first = np.unique(keys, return_index=True)
    keep = np.sort(first)
    return src[keep], dst[keep]


def _trim_to_heads(src, dst, heads: int, scores=None):
    """Drop the E mod H lowest-score edges (ties: later index first); without
    scores, drop from the tail."""
    extra = src.shape[0] % heads
    if extra == 0:
        return src, dst
    if scores is None:
        return src[:-extra], dst[:-extra]
    order = np.lexsort((-np.arange(src.shape[0]), scores))
    drop = order[:extra]
    keep = np.setdiff1d(np.arange(src.shape[0]), drop, assume_unique=True)
    return src[keep], dst[keep]


def create_edges(r_b: np.ndarray, l_b: np.ndarray, p_b: np.ndarray,
                 cfg: GraphConfig, subsample_p=None) -> EdgeList:
    """Pair sources with targets: lattice edges first (token-major), then
    random edges with both directions of each draw adjacent. Self-loops and
    duplicate (src,dst) pairs are removed keeping first occurrence; the edge
    count is trimmed to a multiple of the head count and chunked
    contiguously."""
    n = p_b.shape[0]
    k1 = l_b.shape[1]
    src_parts = [np.repeat(p_b, k1)]
    dst_parts = [l_b.reshape(-1)]

    pair_draws = cfg.n_random // 2
    if pair_draws:
        fwd_src = np.repeat(p_b, pair_draws)
        fwd_dst = r_b[:, :pair_draws].reshape(-1)
        src_parts.append(np.stack([fwd_src, fwd_dst], axis=1).reshape(-1))
        dst_parts.append(np.stack([fwd_dst, fwd_src], axis=1).reshape(-1))
    if cfg.n_random % 2:
        src_parts.append(p_b.copy())
        dst_parts.append(r_b[:, -1])

    src = np.concatenate(src_parts).astype(np.int64)
    dst = np.concatenate(dst_parts).astype(np.int64)
    raw = src.shape[0]
    assert raw == n * (k1 + cfg.n_random)

    loops = src != dst
    src, dst = src[loops], dst[loops]
    src, dst = _dedup_stable(src, dst, n)
    scores = None
    if subsample_p is not None:
        scores = subsample_p[src] + subsample_p[dst]
    src, dst = _trim_to_heads(src, dst, cfg.heads, scores)

    eh = src.shape[0] // cfg.heads
    head_of_edge = np.repeat(np.arange(cfg.heads, dtype=np.int64), eh)
    return EdgeList(src=src, dst=dst, head_of_edge=head_of_edge,
                    n_heads=cfg.heads, raw_pair_count=raw)


def subsample_edges(edges: EdgeList, subsample_p: np.ndarray,
                    p_keep: float) -> EdgeList:
    """Keep the top int(p_keep * E/H) edges per head by score
    p_E = subsample_p[src] + subsample_p[dst]; ties prefer the lower edge
    index. Original edge order is preserved within each head."""
    if not 0.0 < p_keep <= 1.0:
        raise ValueError("p_keep must be in (0, 1]")
    eh = edges.edges_per_head
    keep_count = int(p_keep * eh)
    if keep_count == 0 and eh > 0:
        logger.warning("edge sub-sampling keeps zero edges per head "
                       "(p_keep=%g, %d edges/head)", p_keep, eh)
    kept_src, kept_dst = [], []
    for h in range(edges.n_heads):
        sl = edges.head_slice(h)
        src_h, dst_h = edges.src[sl], edges.dst[sl]
        scores = subsample_p[src_h] + subsample_p[dst_h]
        order = np.lexsort((np.arange(src_h.shape[0]), -scores))
        keep = np.sort(order[:keep_count])
        kept_src.append(src_h[keep])
        kept_dst.append(dst_h[keep])
    head_of_edge = np.repeat(np.arange(edges.n_heads, dtype=np.int64), keep_count)
    return EdgeList(src=np.concatenate(kept_src), dst=np.concatenate(kept_dst),
                    head_of_edge=head_of_edge, n_heads=edges.n_heads,
                    raw_pair_count=edges.raw_pair_count)


def update_graph(edges: EdgeList, attention: np.ndarray, keep_per_node: int,
                 batch, cfg: GraphConfig, salt=0) -> EdgeList:
    """Retain each source node's top keep_per_node edges by attention weight
    and refill the removed budget with fresh in-document random edges.

    Refills are drawn from a dedicated stream keyed by (seed, document
    content hash, salt); draws colliding with existing edges or self-loops
    are rejected for up to 8 rounds, after which the shortfall is accepted.
    """
    if attention.shape[0] != edges.n_edges:
        raise ValueError("attention must align with edges")
    if keep_per_node < 0:
        raise ValueError("keep_per_node must be >= 0")
    e = edges.n_edges
    n = batch.n_tokens
    counts = np.bincount(edges.src, minlength=n)
    if e == 0 or (counts <= keep_per_node).all():
        return edges

    order = np.lexsort((np.arange(e), -attention, edges.src))
    src_sorted = edges.src[order]
    starts = np.zeros(n, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    rank = np.arange(e) - starts[src_sorted]
    kept_idx = np.sort(order[rank < keep_per_node])
    kept_src = edges.src[kept_idx]
    kept_dst = edges.dst[kept_idx]

    removed = np.maximum(counts - keep_per_node, 0)
    existing = set(zip(kept_src.tolist(), kept_dst.tolist()))
    refill_src, refill_dst = [], []
    salt_keys = _salt_keys(salt)
    for d in range(batch.n_docs):
        lo, hi = batch.doc_token_range(d)
        need = {int(t): int(removed[t]) for t in range(lo, hi) if removed[t] > 0}
        if not need:
            continue
        size = hi - lo
        gen = rngmod.substream(cfg.rng_seed, rngmod.STREAM_UPDATE,
                               int(batch.doc_hashes[d]), *salt_keys)
        for _ in range(8):
            if not need:
                break
            pending = sorted(need)
            draws = (gen.random(sum(need.values())) * (2 * size + 1)).astype(np.int64)
            i = 0
            for tok in pending:
                want = need[tok]
                got = 0
                p_n = tok - lo
                for r in draws[i:i + want]:
                    t = int(((r % size) + p_n + 1) % size + lo)
                    if t != tok and (tok, t) not in existing:
                        existing.add((tok, t))
                        refill_src.append(tok)
                        refill_dst.append(t)
                        got += 1
                i += want
                if got == want:
                    del need[tok]
                else:
                    need[tok] = want - got
        if need:
            logger.debug("update_graph shortfall: %d edges unfilled in doc %d",
                         sum(need.values()), d)

    src = np.concatenate([kept_src, np.array(refill_src, dtype=np.int64)])
    dst = np.concatenate([kept_dst, np.array(refill_dst, dtype=np.int64)])
    extra = src.shape[0] % edges.n_heads
    if extra:
        src, dst = src[:-extra], dst[:-extra]
    eh = src.shape[0] // edges.n_heads
    head_of_edge = np.repeat(np.arange(edges.n_heads, dtype=np.int64), eh)
    return EdgeList(src=src, dst=dst, head_of_edge=head_of_edge,
                    n_heads=edges.n_heads, raw_pair_count=edges.raw_pair_count)


def generate_graph(batch, cfg: GraphConfig, salt=0, subsample: bool = True) -> EdgeList:
    """Metadata + edge creation (+ optional per-head edge sub-sampling)."""
    r_b, l_b, p_b = calc_graph_metadata(batch, cfg, salt)
    edges = create_edges(r_b, l_b, p_b, cfg, subsample_p=batch.subsample_p)
    if subsample and cfg.p_keep < 1.0:
        edges = subsample_edges(edges, batch.subsample_p, cfg.p_keep)
    return edges


def check_boundaries(edges: EdgeList, batch) -> bool:
    """True iff every edge stays inside its document's token range."""
    doc_of = batch.token_doc_id
    return bool(np.array_equal(doc_of[edges.src], doc_of[edges.dst]))
