"""Synthetic fixtures: token-count batches for graph experiments and a
keyword-planted classification corpus for end-to-end training checks."""

from __future__ import annotations

import numpy as np

from . import batching, corpus
from . import rng as rngmod

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def make_token_batch(tokens_per_doc, seed: int = 0, embedding_dim: int = 4):
    """CompactBatch whose documents have exactly the requested token counts.

    Token content cycles deterministically with the seed so distinct seeds
    give distinct document hashes (and therefore distinct random edges).
    """
    gen = rngmod.substream(seed, rngmod.STREAM_SYNTHETIC, 0)
    pairs = []
    for count in tokens_per_doc:
        # two-letter tokens, mildly randomized so content hashes differ by seed
        toks = ["".join(_LETTERS[c] for c in gen.integers(0, 26, size=2))
                for _ in range(count)]
        pairs.append((0, " ".join(toks)))
    docs, tables = corpus.prepare_corpus(pairs, embedding_dim=embedding_dim,
                                         seed=seed)
    # neutral sub-sampling scores: trimming/sub-sampling become order-driven
    tables.subsample_p[:] = 1.0
    corpus.annotate_documents(docs, tables)
    return batching.assemble_compact_batch(docs, tables)


def make_keyword_corpus(n_docs: int = 2000, n_classes: int = 2,
                        min_tokens: int = 20, max_tokens: int = 400,
                        seed: int = 0, keyword_rate: float = 0.12,
                        filler_vocab: int = 200):
    """(label, text) pairs where each class plants its own keyword family.

    Filler tokens are shared across classes; roughly `keyword_rate` of each
    document's positions carry one of its class's three keywords, so label
    information is present at every length scale.
    """
    gen = rngmod.substream(seed, rngmod.STREAM_SYNTHETIC, 1)
    fillers = [f"w{i:03d}" for i in range(filler_vocab)]
    keywords = {c: [f"key{c}{j}" for j in range(3)] for c in range(n_classes)}
    pairs = []
    for i in range(n_docs):
        label = i % n_classes
        n_tok = int(gen.integers(min_tokens, max_tokens + 1))
        toks = [fillers[int(g)] for g in gen.integers(0, filler_vocab, size=n_tok)]
        n_kw = max(1, int(round(keyword_rate * n_tok)))
        spots = gen.choice(n_tok, size=min(n_kw, n_tok), replace=False)
        for s in spots:
            toks[int(s)] = keywords[label][int(gen.integers(0, 3))]
        pairs.append((label, " ".join(toks)))
    return pairs
