"""Length-balanced batching without padding.

Documents are split into k equal-count batches by greedy number
partitioning on character length, then each batch is concatenated into a
single flat character sequence plus the per-token index metadata the graph
generator and model consume. No padding element exists anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod

logger = logging.getLogger(__name__)

DUMMY_ID = -1


class AssemblyError(ValueError):
    """A document violates compact-batch preconditions."""


# --------------------------------------------------------------------------
# greedy k-way partitioning

@dataclass
class Partition:
    """k equal-count batches of document ids, ordered by sum descending.

    Dummy slots (id -1, zero length) pad the id list to divisibility; they
    are stripped at assembly.
    """

    batches: list
    sums: np.ndarray
    counts: np.ndarray

    def real_batches(self):
        return [b[b != DUMMY_ID] for b in self.batches]


def greedy_k_partition(lengths, k: int, epoch: int = 0, shuffle: bool = False,
                       rng_seed: int = 0) -> Partition:
    """Distribute items into k batches of exactly n/k items each.

    Items are taken in descending length order; each goes to the
    smallest-sum batch that still has capacity (ties to the lowest batch
    index). With shuffle set and epoch > 0, indices are permuted within
    contiguous ranges of size k after the descending sort, so documents of
    similar length trade places across epochs. Output batches are sorted by
    sum descending.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n_real = lengths.shape[0]
    pad = (-n_real) % k
    n = n_real + pad
    if k > n:
        raise ValueError(f"k={k} exceeds padded item count {n}")
    padded = np.concatenate([lengths, np.zeros(pad, dtype=np.int64)])
    ids = np.concatenate([np.arange(n_real, dtype=np.int64),
                          np.full(pad, DUMMY_ID, dtype=np.int64)])

    order = np.argsort(-padded, kind="stable")
    if shuffle and epoch > 0:
        gen = rngmod.substream(rng_seed, rngmod.STREAM_PARTITION, epoch)
        for start in range(0, n, k):
            seg = order[start:start + k]
            order[start:start + k] = seg[gen.permutation(len(seg))]

    capacity = n // k
    sums = np.zeros(k, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    members = [[] for _ in range(k)]
    for idx in order:
        open_sums = np.where(counts < capacity, sums, np.iinfo(np.int64).max)
        target = int(np.argmin(open_sums))  # argmin takes the lowest index on ties
        members[target].append(idx)
        sums[target] += padded[idx]
        counts[target] += 1

    by_sum = np.argsort(-sums, kind="stable")
    return Partition(
        batches=[ids[np.array(members[i], dtype=np.int64)] for i in by_sum],
        sums=sums[by_sum],
        counts=counts[by_sum],
    )


# --------------------------------------------------------------------------
# compact batches

@dataclass
class CompactBatch:
    """All documents of one batch concatenated, with index metadata.

    Token-level arrays are aligned with batch token positions p_b = 0..N-1.
    `char_token_index` covers token-owned character slots only (one entry
    per owned character, non-decreasing); `token_char_slots` holds the
    positions of those characters inside `char_ids`, so
    char_ids[token_char_slots] enumerates every token's characters in
    batch-token order.
    """

    char_ids: np.ndarray          # int32 [total_chars]
    chars_per_doc: np.ndarray     # int64 [B]
    char_token_index: np.ndarray  # int64 [sum(token_char_counts)]
    token_char_slots: np.ndarray  # int64 [sum(token_char_counts)]
    tokens_per_doc: np.ndarray    # int64 [B]
    token_char_counts: np.ndarray  # int64 [N]
    token_pos_in_doc: np.ndarray  # int64 [N]   p_n
    token_pos_in_batch: np.ndarray  # int64 [N] p_b
    token_doc_id: np.ndarray      # int64 [N]
    doc_lower_bounds: np.ndarray  # int64 [B]   l_n
    subsample_p: np.ndarray       # float64 [N]
    polarity: np.ndarray          # float64 [N]
    subjectivity: np.ndarray      # float64 [N]
    embeddings: np.ndarray        # float32 [N, dim]
    labels: np.ndarray            # int64 [B]
    doc_hashes: np.ndarray        # uint64 [B]

    @property
    def n_docs(self) -> int:
        return self.labels.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.token_pos_in_batch.shape[0]

    @property
    def n_chars(self) -> int:
        return self.char_ids.shape[0]

    def doc_token_range(self, d: int):
        lo = int(self.doc_lower_bounds[d])
        return lo, lo + int(self.tokens_per_doc[d])

    def to_arrays(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "CompactBatch":
        return cls(**{f: arrays[f] for f in cls.__dataclass_fields__})


def validate_compact_batch(batch: CompactBatch) -> None:
    """Cheap structural invariants; raises AssemblyError on violation."""
    n = batch.n_tokens
    if batch.char_ids.shape[0] != batch.chars_per_doc.sum():
        raise AssemblyError("char count does not match chars_per_doc")
    if not np.array_equal(batch.token_pos_in_batch, np.arange(n)):
        raise AssemblyError("token batch positions must be consecutive from 0")
    lower = batch.doc_lower_bounds[batch.token_doc_id]
    if not np.array_equal(batch.token_pos_in_doc, batch.token_pos_in_batch - lower):
        raise AssemblyError("p_n != p_b - l_n")
    expect_cti = np.repeat(batch.token_pos_in_batch, batch.token_char_counts)
    if not np.array_equal(batch.char_token_index, expect_cti):
        raise AssemblyError("char_token_index must repeat-interleave token indices")
    if (np.diff(batch.char_token_index) < 0).any():
        raise AssemblyError("char_token_index must be non-decreasing")
    if batch.tokens_per_doc.sum() != n:
        raise AssemblyError("token count does not match tokens_per_doc")
    if (batch.token_char_counts < 1).any():
        raise AssemblyError("every token must own at least one character")


def assemble_compact_batch(documents, tables) -> CompactBatch:
    """Concatenate annotated documents into one padding-free batch."""
    if not documents:
        raise AssemblyError("cannot assemble an empty batch")
    for doc in documents:
        if doc.n_tokens == 0:
            raise AssemblyError(f"document {doc.id} has no tokens")
        for meta in doc.tokens:
            if meta.char_len < 1:
                raise AssemblyError(f"document {doc.id} has a zero-length token")

    chars_per_doc = np.array([d.n_chars for d in documents], dtype=np.int64)
    tokens_per_doc = np.array([d.n_tokens for d in documents], dtype=np.int64)
    char_offsets = np.zeros(len(documents), dtype=np.int64)
    np.cumsum(chars_per_doc[:-1], out=char_offsets[1:])
    lower = np.zeros(len(documents), dtype=np.int64)
    np.cumsum(tokens_per_doc[:-1], out=lower[1:])
    n_tokens = int(tokens_per_doc.sum())

    char_ids = np.concatenate([d.chars for d in documents])
    p_b = np.arange(n_tokens, dtype=np.int64)
    token_doc_id = np.repeat(np.arange(len(documents), dtype=np.int64), tokens_per_doc)
    p_n = p_b - lower[token_doc_id]

    counts = np.empty(n_tokens, dtype=np.int64)
    starts = np.empty(n_tokens, dtype=np.int64)
    subs = np.empty(n_tokens, dtype=np.float64)
    pol = np.empty(n_tokens, dtype=np.float64)
    subj = np.empty(n_tokens, dtype=np.float64)
    rows = np.empty(n_tokens, dtype=np.int64)
    i = 0
    for d, doc in enumerate(documents):
        for meta in doc.tokens:
            counts[i] = meta.char_len
            starts[i] = char_offsets[d] + meta.char_start
            subs[i] = meta.subsample_p
            pol[i] = meta.polarity
            subj[i] = meta.subjectivity
            rows[i] = meta.vocab_id if meta.embedding_row is None else meta.embedding_row
            i += 1

    char_token_index = np.repeat(p_b, counts)
    total_owned = int(counts.sum())
    count_offsets = np.zeros(n_tokens, dtype=np.int64)
    np.cumsum(counts[:-1], out=count_offsets[1:])
    within = np.arange(total_owned, dtype=np.int64) - np.repeat(count_offsets, counts)
    token_char_slots = np.repeat(starts, counts) + within

    batch = CompactBatch(
        char_ids=char_ids.astype(np.int32),
        chars_per_doc=chars_per_doc,
        char_token_index=char_token_index,
        token_char_slots=token_char_slots,
        tokens_per_doc=tokens_per_doc,
        token_char_counts=counts,
        token_pos_in_doc=p_n,
        token_pos_in_batch=p_b,
        token_doc_id=token_doc_id,
        doc_lower_bounds=lower,
        subsample_p=subs,
        polarity=pol,
        subjectivity=subj,
        embeddings=tables.embeddings[rows].astype(np.float32),
        labels=np.array([d.label for d in documents], dtype=np.int64),
        doc_hashes=np.array([rngmod.content_hash(d.chars) for d in documents],
                            dtype=np.uint64),
    )
    validate_compact_batch(batch)
    return batch


def assemble_batches(documents, partition: Partition, tables):
    """Partition -> list of CompactBatch, preserving partition order.

    Dummy slots are stripped; a batch left empty (all dummies) is skipped
    with a warning.
    """
    batches = []
    for ids in partition.real_batches():
        if ids.size == 0:
            logger.warning("skipping all-dummy batch")
            continue
        batches.append(assemble_compact_batch([documents[i] for i in ids], tables))
    return batches
