"""Central-difference gradient suite over every layer and a tiny model.

Each check builds a layer from a fixed seed, projects its output to a
scalar with a random matrix, and compares tape gradients against central
differences in float64 (h=1e-5, dropout off). Seeds are frozen: they are
chosen so no parameter coordinate has an exactly-zero gradient, where the
finite difference would measure only rounding noise against the 1e-8
relative floor. The token-conv bias is such a coordinate by construction
(a per-channel shift cancels inside column standardization) and is always
excluded via fd_checkable_parameters.
"""

import time

import numpy as np

from . import tensorcore as tc
from .graphgen import EdgeList, GraphConfig
from .layers import (
    CharConvBlock,
    CharEmbedding,
    CharToToken,
    CnnGnnLayer,
    Conv1d,
    EmbeddingInject,
    FeatureNorm,
    GATv2Layer,
    Linear,
    MlpHead,
    SentimentInject,
    SparseEdgeAttention,
    fd_checkable_parameters,
    global_pool,
)
from .model import ModelConfig, TextGraphModel
from .synthetic import make_token_batch

LAYER_TOL = 1e-4
END_TO_END_TOL = 1e-3


def _edges(src, dst, n_heads=1) -> EdgeList:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    heads = np.repeat(np.arange(n_heads), src.shape[0] // n_heads)
    return EdgeList(src=src, dst=dst, head_of_edge=heads, n_heads=n_heads)


def _projected(out, proj):
    return tc.reduce_sum(tc.mul(out, tc.Tensor(proj)))


def layer_checks() -> list:
    """[(layer name, max relative error)] for every layer type."""
    results = []

    def run(name, fn, params):
        results.append((name, tc.grad_check(fn, params)))

    rng = np.random.default_rng(41)
    lin = Linear(3, 2, rng)
    x = tc.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    proj = rng.standard_normal((4, 2))
    run("linear", lambda: _projected(lin(x), proj), lin.parameters() + [x])

    rng = np.random.default_rng(42)
    conv = Conv1d(2, 3, 3, rng)
    x = tc.Tensor(rng.standard_normal((2, 7)), requires_grad=True)
    proj = rng.standard_normal((3, 7))
    run("conv1d", lambda: _projected(conv(x), proj), conv.parameters() + [x])

    rng = np.random.default_rng(43)
    emb = CharEmbedding(6, 3, rng)
    ids = np.array([0, 2, 2, 5, 1])
    proj = rng.standard_normal((5, 3))
    run("char_embedding", lambda: _projected(emb(ids), proj), emb.parameters())

    rng = np.random.default_rng(44)
    block = CharConvBlock(2, rng)
    x = tc.Tensor(rng.standard_normal((2, 9)), requires_grad=True)
    proj = rng.standard_normal((2, 9))
    run("char_conv_block", lambda: _projected(block(x), proj),
        block.parameters() + [x])

    rng = np.random.default_rng(45)
    c2t = CharToToken(3, rng)
    x = tc.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    index = np.array([0, 0, 1, 1, 1, 2])
    proj = rng.standard_normal((3, 3))
    run("char_to_token", lambda: _projected(c2t(x, index, 3), proj),
        c2t.parameters() + [x])

    rng = np.random.default_rng(46)
    norm = FeatureNorm(3)
    x = tc.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    proj = rng.standard_normal((6, 3))
    run("feature_norm", lambda: _projected(norm(x), proj),
        norm.parameters() + [x])

    rng = np.random.default_rng(0)
    gat = GATv2Layer(3, rng)
    x = tc.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    edges = _edges([0, 1, 2, 3, 0], [1, 2, 3, 0, 2])
    proj = rng.standard_normal((4, 3))
    run("gatv2", lambda: _projected(gat(x, edges)[0], proj),
        gat.parameters() + [x])

    rng = np.random.default_rng(47)
    att = SparseEdgeAttention(4, 2, rng)
    x = tc.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    edges = _edges([0, 1, 2, 3], [1, 2, 3, 4], n_heads=2)
    proj = rng.standard_normal((5, 4))
    run("sparse_edge_attention", lambda: _projected(att(x, edges)[0], proj),
        att.parameters() + [x])

    rng = np.random.default_rng(0)
    batch = make_token_batch([5])
    edges = _edges([0, 1, 2, 3], [1, 2, 3, 4], n_heads=2)
    proj = rng.standard_normal((5, 4))
    for variant in ("gatv2", "sparse_attention"):
        layer = CnnGnnLayer(4, rng, variant=variant, n_heads=2)
        x = tc.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        params = list(fd_checkable_parameters(layer).values())
        run(f"cnn_gnn[{variant}]",
            lambda: _projected(layer(x, edges, batch)[0], proj), params + [x])

    rng = np.random.default_rng(48)
    pol = rng.uniform(-1, 1, 5)
    subj = rng.uniform(0, 1, 5)
    proj = rng.standard_normal((5, 4))
    for stype in (1, 2, 3):
        inj = SentimentInject(4, rng, stype=stype, expand=4)
        x = tc.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        run(f"sentiment_inject[{stype}]",
            lambda: _projected(inj(x, pol, subj), proj), inj.parameters() + [x])

    rng = np.random.default_rng(49)
    einj = EmbeddingInject(3, 2, rng)
    x = tc.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    e_tok = tc.Tensor(rng.standard_normal((4, 2)))
    proj = rng.standard_normal((4, 3))
    run("embedding_inject", lambda: _projected(einj(x, e_tok), proj),
        einj.parameters() + [x])

    rng = np.random.default_rng(50)
    x = tc.Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    doc_id = np.array([0, 0, 0, 1, 1])
    proj = rng.standard_normal((2, 3))
    run("global_pool", lambda: _projected(global_pool(x, doc_id, 2), proj),
        [x])

    rng = np.random.default_rng(51)
    head = MlpHead(3, 2, rng)
    x = tc.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    proj = rng.standard_normal((4, 2))
    run("mlp_head", lambda: _projected(head(x), proj), head.parameters() + [x])

    return results


def end_to_end_check() -> float:
    """Max relative error through the full model on a 2-doc batch.

    keep_per_node covers every edge so the graph update is the identity:
    top-k edge reselection under parameter perturbation would break the
    central-difference assumption.
    """
    cfg = ModelConfig(hidden_dim=8, inject_dim=4, char_vocab=256, dropout=0.0,
                      graph=GraphConfig(n_lattice=4, n_random=2, heads=2),
                      sentiment_expand=4, n_classes=2, seed=3,
                      keep_per_node=64)
    model = TextGraphModel(cfg)
    batch = make_token_batch([5, 5], seed=11)
    labels = np.array([0, 1])

    def loss():
        return tc.cross_entropy(model.forward(batch), labels)

    params = list(fd_checkable_parameters(model).values())
    return tc.grad_check(loss, params, sample=3, rng=np.random.default_rng(5))


def run_suite() -> dict:
    """Layer checks plus the end-to-end model; f64 enforced here."""
    t0 = time.perf_counter()
    with tc.default_dtype(np.float64):
        per_layer = layer_checks()
        e2e = end_to_end_check()
    passed = all(err <= LAYER_TOL for _, err in per_layer) and e2e <= END_TO_END_TOL
    return {
        "layers": [{"layer": name, "max_rel_err": err} for name, err in per_layer],
        "end_to_end": e2e,
        "layer_tolerance": LAYER_TOL,
        "end_to_end_tolerance": END_TO_END_TOL,
        "passed": passed,
        "seconds": time.perf_counter() - t0,
    }
