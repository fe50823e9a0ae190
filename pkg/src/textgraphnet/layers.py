"""Parameter-holding layers of the CNN-GNN text classifier.

Every layer is a `Module`: parameters are float Tensors with
``requires_grad=True``, reachable through `named_parameters()` for the
optimizer, gradient checks, and checkpointing.  Forward passes run inside a
`tensorcore.Tape` when gradients are needed; in evaluation no tape is active
and the same code paths produce plain values.

Shape conventions follow the rest of the package: token- or char-major
matrices are ``[N, d]``; convolutions take channel-major ``[C, n]`` input, so
the conv wrappers transpose at the border.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensorcore as tc
from .tensorcore import ShapeError, Tensor

# negative slope of the attention-score LeakyReLU
GAT_LEAKY_SLOPE = 0.2
FEATURE_NORM_EPS = 1e-5


class ConfigError(ValueError):
    """Unknown variant / injection type or inconsistent layer wiring."""


# --------------------------------------------------------------------------
# parameter initialisation

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    vals = rng.uniform(-limit, limit, size=shape)
    return Tensor(vals, requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Base for parameter-holding layers; collects nested parameters."""

    def named_parameters(self) -> dict:
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                for sub, p in val.named_parameters().items():
                    out[f"{name}.{sub}"] = p
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for sub, p in item.named_parameters().items():
                            out[f"{name}.{i}.{sub}"] = p
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict:
        return {name: p.values.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={missing}, extra={extra}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.values.shape:
                raise ShapeError(
                    f"{name}: stored shape {arr.shape} != expected {p.values.shape}")
            p.values = arr.astype(tc.get_default_dtype())
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())


# --------------------------------------------------------------------------
# basic blocks

class Linear(Module):
    """y = x @ W.T + b"""

    def __init__(self, d_in: int, d_out: int, rng, bias: bool = True):
        self.weight = glorot_uniform(rng, (d_out, d_in), d_in, d_out)
        self.bias = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = tc.matmul(x, tc.transpose(self.weight))
        if self.bias is not None:
            y = tc.add(y, self.bias)
        return y


class Conv1d(Module):
    """Same-length 1-d convolution wrapper; input and output are [C, n]."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng, padding=None):
        self.kernel = kernel
        self.padding = kernel // 2 if padding is None else padding
        fan = kernel * c_in, kernel * c_out
        self.weight = glorot_uniform(rng, (c_out, c_in, kernel), *fan)
        self.bias = zeros_param((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return tc.conv1d(x, self.weight, self.bias, padding=self.padding)


class CharEmbedding(Module):
    """Row lookup h_i = Z x_i over the fixed-size character set."""

    def __init__(self, char_vocab: int, dim: int, rng):
        # unit-normal rows keep character features on the same scale as the
        # positional encoding added downstream
        self.table = Tensor(rng.standard_normal((char_vocab, dim)), requires_grad=True)

    def __call__(self, char_ids: np.ndarray) -> Tensor:
        return tc.gather_rows(self.table, char_ids)


class CharConvBlock(Module):
    """Two k=5 same-length convolutions with ReLU over the compact char sequence.

    By default the convolutions run across document boundaries (the compact
    sequence is one array); passing `doc_char_counts` applies them per
    document instead, mirroring the token-level `boundary_mask` ablation.
    """

    def __init__(self, dim: int, rng, kernel: int = 5):
        self.conv1 = Conv1d(dim, dim, kernel, rng)
        self.conv2 = Conv1d(dim, dim, kernel, rng)

    def _stack(self, x: Tensor) -> Tensor:
        return tc.relu(self.conv2(tc.relu(self.conv1(x))))

    def __call__(self, x: Tensor, doc_char_counts=None) -> Tensor:
        # x: [dim, n_chars]
        if doc_char_counts is None or len(doc_char_counts) <= 1:
            return self._stack(x)
        pieces, lo = [], 0
        for count in doc_char_counts:
            pieces.append(self._stack(tc.slice_axis(x, 1, lo, lo + int(count))))
            lo += int(count)
        return tc.concat(pieces, axis=1)


class CharToToken(Module):
    """Aggregate character features into tokens: scatter mean ++ max, project to d."""

    def __init__(self, dim: int, rng):
        self.proj = Linear(2 * dim, dim, rng)

    def __call__(self, char_feats: Tensor, char_token_index: np.ndarray,
                 n_tokens: int) -> Tensor:
        mean = tc.scatter_reduce(char_feats, char_token_index, n_tokens, "mean")
        mx = tc.scatter_reduce(char_feats, char_token_index, n_tokens, "max")
        return self.proj(tc.concat([mean, mx], axis=1))


def positional_encoding(token_pos_in_doc: np.ndarray, dim: int) -> np.ndarray:
    """sin+cos positional table over within-document positions.

    Both entries of the dimension pair (2i, 2i+1) receive
    sin(pos / 10000^(2i/d)) + cos(pos / 10000^(2i/d)); values lie in
    [-sqrt(2), sqrt(2)] and position 0 maps to all ones.
    """
    if dim % 2:
        raise ConfigError(f"positional encoding needs even dim, got {dim}")
    dtype = tc.get_default_dtype()
    pos = np.asarray(token_pos_in_doc, dtype=dtype)[:, None]
    exponent = np.arange(0, dim, 2, dtype=dtype) / dim
    theta = pos / np.power(np.asarray(10000.0, dtype=dtype), exponent)[None, :]
    return np.repeat(np.sin(theta) + np.cos(theta), 2, axis=1)


class FeatureNorm(Module):
    """Per-feature standardization over all batch tokens with learned scale/shift."""

    def __init__(self, dim: int):
        self.gamma = ones_param((dim,))
        self.beta = zeros_param((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        y = tc.standardize_columns(x, FEATURE_NORM_EPS)
        return tc.add(tc.mul(y, self.gamma), self.beta)


# --------------------------------------------------------------------------
# graph attention variants

class GATv2Layer(Module):
    """Dynamic-attention graph layer.

    Per directed edge (src -> dst) the score is
    a^T LeakyReLU(Theta_dst h_dst + Theta_src h_src); softmax runs over each
    destination's incoming edges plus an implicit self loop, and the output
    aggregates the Theta_src-transformed neighbor values (self included).
    Returns the per-edge attention for graph updates.
    """

    def __init__(self, dim: int, rng, slope: float = GAT_LEAKY_SLOPE):
        self.theta_dst = glorot_uniform(rng, (dim, dim), dim, dim)
        self.theta_src = glorot_uniform(rng, (dim, dim), dim, dim)
        self.attn = glorot_uniform(rng, (dim, 1), dim, 1)
        self.slope = slope

    def __call__(self, x: Tensor, edges) -> tuple:
        n = x.values.shape[0]
        n_edges = edges.n_edges
        hd = tc.matmul(x, tc.transpose(self.theta_dst))
        hs = tc.matmul(x, tc.transpose(self.theta_src))

        pre_edge = tc.add(tc.gather_rows(hd, edges.dst), tc.gather_rows(hs, edges.src))
        pre_self = tc.add(hd, hs)
        scores_edge = tc.reshape(
            tc.matmul(tc.leaky_relu(pre_edge, self.slope), self.attn), (n_edges,))
        scores_self = tc.reshape(
            tc.matmul(tc.leaky_relu(pre_self, self.slope), self.attn), (n,))

        segments = np.concatenate([edges.dst, np.arange(n, dtype=np.int64)])
        alpha = tc.segment_softmax(
            tc.concat([scores_edge, scores_self]), segments, n)
        alpha_edge = tc.slice_axis(alpha, 0, 0, n_edges)
        alpha_self = tc.slice_axis(alpha, 0, n_edges, n_edges + n)

        weighted = tc.mul(tc.gather_rows(hs, edges.src),
                          tc.reshape(alpha_edge, (n_edges, 1)))
        out = tc.add(tc.scatter_reduce(weighted, edges.dst, n, "sum"),
                     tc.mul(hs, tc.reshape(alpha_self, (n, 1))))
        return out, alpha_edge


class SparseEdgeAttention(Module):
    """Multi-head attention over the edge list.

    The feature axis is split into H contiguous blocks and the edge list into
    H contiguous chunks.  Per head, each edge's query/key/aggregate features
    come from the sum of its two endpoint blocks; attention is a softmax over
    the head's whole edge chunk, scaled by 1/sqrt(M) after normalizing, and
    each edge adds its weighted aggregate value to both endpoints on top of a
    per-node update term.  `per_node_softmax` instead normalizes over each
    slot-0 endpoint's edge group (ablation; the default is the global form).
    """

    def __init__(self, dim: int, n_heads: int, rng, per_node_softmax: bool = False):
        if dim % n_heads:
            raise ShapeError(f"dim {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.per_node_softmax = per_node_softmax
        m = self.head_dim
        self.w_query = [glorot_uniform(rng, (m, m), m, m) for _ in range(n_heads)]
        self.w_key = [glorot_uniform(rng, (m, m), m, m) for _ in range(n_heads)]
        self.w_aggregate = [glorot_uniform(rng, (m, m), m, m) for _ in range(n_heads)]
        self.w_update = [glorot_uniform(rng, (m, m), m, m) for _ in range(n_heads)]

    def __call__(self, x: Tensor, edges) -> tuple:
        n, dim = x.values.shape
        if dim != self.n_heads * self.head_dim:
            raise ShapeError(f"expected dim {self.n_heads * self.head_dim}, got {dim}")
        if edges.n_edges % self.n_heads:
            raise ShapeError(
                f"edge count {edges.n_edges} not divisible by {self.n_heads} heads")
        m = self.head_dim
        scale = 1.0 / math.sqrt(m)

        outs, alphas = [], []
        for h in range(self.n_heads):
            xh = tc.slice_axis(x, 1, h * m, (h + 1) * m)
            sl = edges.head_slice(h)
            src, dst = edges.src[sl], edges.dst[sl]
            e_h = src.shape[0]

            s = tc.add(tc.gather_rows(xh, src), tc.gather_rows(xh, dst))
            q = tc.matmul(s, self.w_query[h])
            k = tc.matmul(s, self.w_key[h])
            scores = tc.reduce_sum(tc.mul(q, k), axis=1)
            if self.per_node_softmax:
                alpha = tc.segment_softmax(scores, src, n, scale)
            else:
                alpha = tc.segment_softmax(
                    scores, np.zeros(e_h, dtype=np.int64), 1, scale)

            v_upd = tc.matmul(xh, self.w_update[h])
            v_agg = tc.matmul(s, self.w_aggregate[h])
            weighted = tc.mul(v_agg, tc.reshape(alpha, (e_h, 1)))
            y = tc.add(v_upd,
                       tc.add(tc.scatter_reduce(weighted, src, n, "sum"),
                              tc.scatter_reduce(weighted, dst, n, "sum")))
            outs.append(y)
            alphas.append(alpha)
        return tc.concat(outs, axis=1), tc.concat(alphas)


# --------------------------------------------------------------------------
# hybrid layer

class TokenConv(Module):
    """k=3 same-length convolution over the compact token sequence.

    With `boundary_mask` the convolution runs per document so no kernel tap
    crosses a document boundary; the default follows the compact-sequence
    convention and runs across boundaries.
    """

    def __init__(self, c_in: int, c_out: int, rng, kernel: int = 3):
        self.conv = Conv1d(c_in, c_out, kernel, rng)

    def __call__(self, x: Tensor, batch=None, boundary_mask: bool = False) -> Tensor:
        xt = tc.transpose(x)
        if boundary_mask and batch is not None and batch.n_docs > 1:
            pieces = []
            for d in range(batch.n_docs):
                lo, hi = batch.doc_token_range(d)
                pieces.append(self.conv(tc.slice_axis(xt, 1, lo, hi)))
            yt = tc.concat(pieces, axis=1)
        else:
            yt = self.conv(xt)
        return tc.transpose(yt)


class CnnGnnLayer(Module):
    """Parallel GNN + k=3 convolution, summed, then feature norm, ReLU, dropout.

    `extra` carries optional per-token channels appended to the convolution
    input only (the P1 sentiment path).
    """

    def __init__(self, dim: int, rng, variant: str = "sparse_attention",
                 n_heads: int = 4, dropout: float = 0.0,
                 boundary_mask: bool = False, extra_channels: int = 0,
                 per_node_softmax: bool = False, slope: float = GAT_LEAKY_SLOPE):
        if variant == "gatv2":
            self.gnn = GATv2Layer(dim, rng, slope)
        elif variant == "sparse_attention":
            self.gnn = SparseEdgeAttention(dim, n_heads, rng, per_node_softmax)
        else:
            raise ConfigError(f"unknown gnn variant {variant!r}")
        self.conv = TokenConv(dim + extra_channels, dim, rng)
        self.norm = FeatureNorm(dim)
        self.dropout_rate = dropout
        self.boundary_mask = boundary_mask
        self.extra_channels = extra_channels

    def __call__(self, x: Tensor, edges, batch=None, train: bool = False,
                 rng=None, extra: Tensor | None = None) -> tuple:
        if (extra is None) != (self.extra_channels == 0):
            raise ConfigError("extra channels do not match layer configuration")
        g, alpha = self.gnn(x, edges)
        conv_in = x if extra is None else tc.concat([x, extra], axis=1)
        c = self.conv(conv_in, batch, self.boundary_mask)
        h = tc.relu(self.norm(tc.add(g, c)))
        return tc.dropout(h, self.dropout_rate, train, rng), alpha


# --------------------------------------------------------------------------
# injection layers

def _sentiment_pair(polarity, subjectivity) -> Tensor:
    dtype = tc.get_default_dtype()
    return Tensor(np.stack([np.asarray(polarity, dtype=dtype),
                            np.asarray(subjectivity, dtype=dtype)], axis=1))


class SentimentInject(Module):
    """Mix per-token polarity/subjectivity into the hidden features.

    type 1: concat the 2 raw values, linear back to d.
    type 2: linear expansion of the 2 values to `expand` channels, concat,
            linear back to d.
    type 3: type 2 with k=3 same-length convolutions in place of both linears.
    """

    def __init__(self, dim: int, rng, stype: int = 3, expand: int = 16):
        if stype == 1:
            self.proj = Linear(dim + 2, dim, rng)
        elif stype == 2:
            self.expand_lin = Linear(2, expand, rng)
            self.proj = Linear(dim + expand, dim, rng)
        elif stype == 3:
            self.expand_conv = Conv1d(2, expand, 3, rng)
            self.proj_conv = Conv1d(dim + expand, dim, 3, rng)
        else:
            raise ConfigError(f"unknown sentiment injection type {stype}")
        self.stype = stype

    def __call__(self, x: Tensor, polarity, subjectivity) -> Tensor:
        sent = _sentiment_pair(polarity, subjectivity)
        if sent.values.shape[0] != x.values.shape[0]:
            raise ShapeError("sentiment rows do not align with tokens")
        if self.stype == 1:
            return self.proj(tc.concat([x, sent], axis=1))
        if self.stype == 2:
            return self.proj(tc.concat([x, self.expand_lin(sent)], axis=1))
        expanded = self.expand_conv(tc.transpose(sent))
        mixed = tc.concat([tc.transpose(x), expanded], axis=0)
        return tc.transpose(self.proj_conv(mixed))


class EmbeddingInject(Module):
    """Concat precomputed token embeddings, project back to d, ReLU."""

    def __init__(self, dim: int, inject_dim: int, rng):
        self.proj = Linear(dim + inject_dim, dim, rng)

    def __call__(self, x: Tensor, e_tok: Tensor) -> Tensor:
        if e_tok.values.shape[0] != x.values.shape[0]:
            raise ShapeError("embedding rows do not align with tokens")
        return tc.relu(self.proj(tc.concat([x, e_tok], axis=1)))


def global_pool(x: Tensor, token_doc_id: np.ndarray, n_docs: int) -> Tensor:
    """Per-document mean over token features, then ELU."""
    return tc.elu(tc.scatter_reduce(x, token_doc_id, n_docs, "mean"))


class MlpHead(Module):
    """Two-layer classification head: ReLU(h W1.T + b1) W2.T + b2."""

    def __init__(self, dim: int, n_classes: int, rng, hidden: int | None = None):
        hidden = dim if hidden is None else hidden
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, n_classes, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.lin2(tc.relu(self.lin1(h)))


def fd_checkable_parameters(module: Module) -> dict:
    """Named parameters suitable for finite-difference gradient checks.

    The token-conv bias feeds column standardization, where a per-channel
    shift cancels exactly: its true gradient is zero and central differences
    see only rounding noise, which the relative-error floor inflates past
    any reasonable tolerance. Every other parameter is checkable.
    """
    return {name: p for name, p in module.named_parameters().items()
            if not name.endswith("conv.conv.bias")}
