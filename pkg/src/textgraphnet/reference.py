"""Brute-force reference implementations for the verification suites.

Deliberately naive: explicit loops and dense matrices, so each function can
be checked by eye against the definition it shadows. Used by the layer
tests and the acceptance runner; never on any production path.
"""

import numpy as np


def dense_gatv2(x, src, dst, theta_dst, theta_src, attn, slope=0.2):
    """Dense masked-attention evaluation of the GATv2 layer.

    Builds the full N x N score matrix, masks to existing edges plus the
    diagonal (implicit self loop), softmaxes per destination row, and
    aggregates source-transformed values. Assumes no duplicate directed
    edges. Returns (out [N,d], alpha_edge aligned with (src, dst) order).
    """
    n = x.shape[0]
    hd = x @ theta_dst.T
    hs = x @ theta_src.T
    a = attn[:, 0]
    mask = np.zeros((n, n), dtype=bool)
    mask[dst, src] = True
    np.fill_diagonal(mask, True)
    scores = np.full((n, n), -np.inf)
    for i in range(n):
        for j in range(n):
            if mask[i, j]:
                pre = hd[i] + hs[j]
                act = np.where(pre > 0.0, pre, slope * pre)
                scores[i, j] = act @ a
    alpha = np.zeros((n, n))
    for i in range(n):
        row = scores[i][mask[i]]
        e = np.exp(row - row.max())
        alpha[i, mask[i]] = e / e.sum()
    out = alpha @ hs
    return out, alpha[dst, src]


def scalar_sparse_attention(x, src, dst, n_heads, w_query, w_key,
                            w_aggregate, w_update, per_node_softmax=False):
    """Index-by-index transcription of the sparse edge-attention layer.

    Per head h over its contiguous edge chunk: endpoint features are summed
    over the two slots inside the query/key/aggregate contractions, the
    attention softmax runs over the head's whole chunk (scaled by 1/sqrt(M)),
    and each edge adds its weighted aggregate value to both endpoints.
    """
    n, d = x.shape
    m = d // n_heads
    n_edges = src.shape[0]
    eh = n_edges // n_heads
    scale = 1.0 / np.sqrt(m)
    y = np.zeros((n, d))
    alpha_all = np.zeros(n_edges)
    for h in range(n_heads):
        xh = x[:, h * m:(h + 1) * m]
        s_idx = src[h * eh:(h + 1) * eh]
        d_idx = dst[h * eh:(h + 1) * eh]
        q = np.zeros((eh, m))
        k = np.zeros((eh, m))
        v_agg = np.zeros((eh, m))
        for j in range(eh):
            endpoints = (xh[s_idx[j]], xh[d_idx[j]])
            for mm in range(m):
                q[j, mm] = sum(endpoints[p][ll] * w_query[h][ll, mm]
                               for p in (0, 1) for ll in range(m))
                k[j, mm] = sum(endpoints[p][ll] * w_key[h][ll, mm]
                               for p in (0, 1) for ll in range(m))
                v_agg[j, mm] = sum(endpoints[p][ll] * w_aggregate[h][ll, mm]
                                   for p in (0, 1) for ll in range(m))
        scores = np.array([q[j] @ k[j] for j in range(eh)])
        alpha = np.zeros(eh)
        if per_node_softmax:
            for i in np.unique(s_idx):
                grp = np.flatnonzero(s_idx == i)
                e = np.exp(scores[grp] - scores[grp].max())
                alpha[grp] = e / e.sum() * scale
        elif eh:
            e = np.exp(scores - scores.max())
            alpha = e / e.sum() * scale
        y_h = np.array([[sum(xh[i, ll] * w_update[h][ll, mm] for ll in range(m))
                         for mm in range(m)] for i in range(n)])
        for j in range(eh):
            y_h[s_idx[j]] += alpha[j] * v_agg[j]
            y_h[d_idx[j]] += alpha[j] * v_agg[j]
        y[:, h * m:(h + 1) * m] = y_h
        alpha_all[h * eh:(h + 1) * eh] = alpha
    return y, alpha_all


def random_edge_instance(rng, max_nodes=8, n_heads=1):
    """Random directed graph without self loops or duplicate edges.

    Edge count is a multiple of n_heads (possibly zero). Returns
    (n_nodes, src, dst).
    """
    n = int(rng.integers(1, max_nodes + 1))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    max_e = (len(pairs) // n_heads) * n_heads
    n_e = int(rng.integers(0, max_e + 1)) // n_heads * n_heads
    if n_e:
        chosen = rng.choice(len(pairs), size=n_e, replace=False)
        src = np.array([pairs[c][0] for c in chosen], dtype=np.int64)
        dst = np.array([pairs[c][1] for c in chosen], dtype=np.int64)
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
    return n, src, dst
