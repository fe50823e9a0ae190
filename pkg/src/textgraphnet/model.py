"""Full model assembly: configuration, forward pipeline, FLOP estimate.

The forward pass follows the architecture end to end:

    char embedding -> 2x char conv (k=5) -> char-to-token aggregation
    -> positional encoding -> graph generation -> CNN-GNN layer 1
    -> graph update (top-k by attention + random refill) -> CNN-GNN layer 2
    -> sentiment P2 -> token-embedding injection -> sentiment P3
    -> global mean pool (ELU) -> MLP head

When more than two CNN-GNN layers are configured the graph update still runs
only after the first layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensorcore as tc
from .graphgen import GraphConfig, generate_graph, update_graph
from .layers import (
    CharConvBlock,
    CharEmbedding,
    CharToToken,
    CnnGnnLayer,
    ConfigError,
    EmbeddingInject,
    MlpHead,
    Module,
    SentimentInject,
    global_pool,
    positional_encoding,
)
from .rng import STREAM_INIT, substream
from .tensorcore import ShapeError, Tensor

VALID_GNN_VARIANTS = ("gatv2", "sparse_attention")
VALID_SENTIMENT_POSITIONS = ("P1", "P2", "P3")


@dataclass
class ModelConfig:
    """Hyperparameters; defaults follow the published training configuration."""

    hidden_dim: int = 64
    inject_dim: int = 64
    char_vocab: int = 12288
    n_cnn_gnn_layers: int = 2
    gnn_variant: str = "sparse_attention"
    per_node_softmax: bool = False
    sentiment_positions: tuple = ("P2", "P3")
    sentiment_type: int = 3
    sentiment_expand: int = 16
    graph: GraphConfig = field(default_factory=GraphConfig)
    keep_per_node: int = 6
    edge_subsample: bool = True
    boundary_mask: bool = False
    dropout: float = 0.2
    lr: float = 0.0032
    weight_decay: float = 1.1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    milestones: tuple = (15, 20, 30, 38, 40, 45, 50)
    lr_factor: float = 0.5
    epochs: int = 70
    batch_size: int = 224
    n_classes: int = 2
    loss: str = "cross-entropy"
    mlp_hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigError(f"hidden_dim must be even and >= 2, got {self.hidden_dim}")
        if self.gnn_variant not in VALID_GNN_VARIANTS:
            raise ConfigError(f"gnn_variant must be one of {VALID_GNN_VARIANTS}")
        if self.gnn_variant == "sparse_attention" and self.hidden_dim % self.graph.heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by {self.graph.heads} heads")
        positions = tuple(self.sentiment_positions)
        if len(set(positions)) != len(positions) or any(
                p not in VALID_SENTIMENT_POSITIONS for p in positions):
            raise ConfigError(f"bad sentiment positions {positions}")
        self.sentiment_positions = positions
        if self.sentiment_type not in (1, 2, 3):
            raise ConfigError(f"sentiment_type must be 1, 2, or 3, got {self.sentiment_type}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_cnn_gnn_layers < 0 or self.epochs < 0:
            raise ConfigError("layer and epoch counts must be non-negative")
        if self.lr <= 0 or self.batch_size < 1 or self.n_classes < 2:
            raise ConfigError("lr must be positive, batch_size >= 1, n_classes >= 2")
        if self.keep_per_node < 1:
            raise ConfigError(f"keep_per_node must be >= 1, got {self.keep_per_node}")
        self.betas = tuple(self.betas)
        self.milestones = tuple(self.milestones)

    def to_dict(self) -> dict:
        d = {k: v for k, v in vars(self).items() if k != "graph"}
        d["graph"] = self.graph.to_dict()
        for key in ("sentiment_positions", "betas", "milestones"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["graph"] = GraphConfig.from_dict(d.get("graph", {}))
        for key in ("sentiment_positions", "betas", "milestones"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_overrides(self, **kwargs) -> "ModelConfig":
        graph_keys = {k: v for k, v in kwargs.items() if hasattr(self.graph, k)}
        own = {k: v for k, v in kwargs.items() if k not in graph_keys}
        cfg = replace(self, **own)
        if graph_keys:
            cfg.graph = replace(self.graph, **graph_keys)
        return cfg


class TextGraphModel(Module):
    """CNN-GNN classifier over compact batches."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = substream(cfg.seed, STREAM_INIT)
        d = cfg.hidden_dim
        self.char_embedding = CharEmbedding(cfg.char_vocab, d, rng)
        self.char_block = CharConvBlock(d, rng)
        self.char_to_token = CharToToken(d, rng)
        blocks = []
        for i in range(cfg.n_cnn_gnn_layers):
            extra = 2 if ("P1" in cfg.sentiment_positions and i == 0) else 0
            blocks.append(CnnGnnLayer(
                d, rng, variant=cfg.gnn_variant, n_heads=cfg.graph.heads,
                dropout=cfg.dropout, boundary_mask=cfg.boundary_mask,
                extra_channels=extra, per_node_softmax=cfg.per_node_softmax))
        self.cnn_gnn = blocks
        if "P2" in cfg.sentiment_positions:
            self.sentiment_p2 = SentimentInject(
                d, rng, stype=cfg.sentiment_type, expand=cfg.sentiment_expand)
        self.embedding_inject = EmbeddingInject(d, cfg.inject_dim, rng)
        if "P3" in cfg.sentiment_positions:
            self.sentiment_p3 = SentimentInject(
                d, rng, stype=cfg.sentiment_type, expand=cfg.sentiment_expand)
        self.head = MlpHead(d, cfg.n_classes, rng, cfg.mlp_hidden)

    def forward(self, batch, train: bool = False, dropout_rng=None, salt=0) -> Tensor:
        """Logits [n_docs, n_classes]; deterministic in eval mode for a fixed salt."""
        cfg = self.cfg
        if batch.embeddings.shape[1] != cfg.inject_dim:
            raise ShapeError(
                f"batch embeddings have dim {batch.embeddings.shape[1]}, "
                f"model expects {cfg.inject_dim}")

        h = self.char_embedding(batch.char_ids)
        char_bounds = batch.chars_per_doc if cfg.boundary_mask else None
        h = tc.transpose(self.char_block(tc.transpose(h), char_bounds))
        # separators carry no token: aggregate over token-owned positions only
        owned = tc.gather_rows(h, batch.token_char_slots)
        x = self.char_to_token(owned, batch.char_token_index, batch.n_tokens)
        pe = positional_encoding(batch.token_pos_in_doc, cfg.hidden_dim)
        x = tc.add(x, Tensor(pe))

        if self.cnn_gnn:
            edges = generate_graph(batch, cfg.graph, salt=salt,
                                   subsample=cfg.edge_subsample)
            extra = None
            if "P1" in cfg.sentiment_positions:
                dtype = tc.get_default_dtype()
                extra = Tensor(np.stack([batch.polarity.astype(dtype),
                                         batch.subjectivity.astype(dtype)], axis=1))
            for i, block in enumerate(self.cnn_gnn):
                x, alpha = block(x, edges, batch, train=train, rng=dropout_rng,
                                 extra=extra if i == 0 else None)
                if i == 0 and len(self.cnn_gnn) > 1:
                    edges = update_graph(edges, alpha.values, cfg.keep_per_node,
                                         batch, cfg.graph, salt=salt)

        if "P2" in cfg.sentiment_positions:
            x = self.sentiment_p2(x, batch.polarity, batch.subjectivity)
        x = self.embedding_inject(x, Tensor(batch.embeddings))
        if "P3" in cfg.sentiment_positions:
            x = self.sentiment_p3(x, batch.polarity, batch.subjectivity)

        pooled = global_pool(x, batch.token_doc_id, batch.n_docs)
        return self.head(pooled)

    __call__ = forward


def flop_estimate(cfg: ModelConfig, batch) -> dict:
    """Closed-form multiply-add counts per component.

    Uses the raw (pre-dedup) edge count n_tokens * (n_lattice + n_random) so
    every term is exactly linear in batch size. Returns per-batch terms, the
    total, and the per-document average.
    """
    d = cfg.hidden_dim
    n_chars = int(batch.n_chars)
    n = int(batch.n_tokens)
    n_docs = int(batch.n_docs)
    e_raw = n * (cfg.graph.n_lattice + cfg.graph.n_random)
    terms = {
        "char_embedding": n_chars * d,
        "char_block": 2 * n_chars * 5 * d * d,
        "char_to_token": n * 2 * d * d,
    }

    conv_macs = gnn_macs = norm_macs = 0
    for i in range(cfg.n_cnn_gnn_layers):
        extra = 2 if ("P1" in cfg.sentiment_positions and i == 0) else 0
        conv_macs += n * 3 * (d + extra) * d
        if cfg.gnn_variant == "gatv2":
            gnn_macs += 2 * n * d * d + 3 * e_raw * d
        else:
            m = d // cfg.graph.heads
            gnn_macs += 3 * e_raw * m * m + n * d * m + 3 * e_raw * m
        norm_macs += 2 * n * d
    if cfg.n_cnn_gnn_layers:
        terms["token_conv"] = conv_macs
        terms["gnn"] = gnn_macs
        terms["feature_norm"] = norm_macs

    def sentiment_macs() -> int:
        ex = cfg.sentiment_expand
        if cfg.sentiment_type == 1:
            return n * (d + 2) * d
        if cfg.sentiment_type == 2:
            return n * 2 * ex + n * (d + ex) * d
        return n * 3 * 2 * ex + n * 3 * (d + ex) * d

    n_token_level = sum(1 for p in cfg.sentiment_positions if p in ("P2", "P3"))
    if n_token_level:
        terms["sentiment"] = n_token_level * sentiment_macs()
    terms["embedding_inject"] = n * (d + cfg.inject_dim) * d
    terms["global_pool"] = n * d
    hidden = cfg.mlp_hidden if cfg.mlp_hidden is not None else d
    terms["mlp_head"] = n_docs * (d * hidden + hidden * cfg.n_classes)

    total = int(sum(terms.values()))
    return {"terms": terms, "total": total,
            "per_document": total / n_docs if n_docs else 0.0}
