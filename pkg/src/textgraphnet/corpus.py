"""Corpus ingestion.

Tokenization with byte-exact spans, vocabulary and token-frequency tables,
sub-sampling probabilities, and per-token embedding/sentiment metadata. All
tables are keyed on lowercased token forms; spans always refer to the
original text.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

logger = logging.getLogger(__name__)

CHAR_SET_SIZE = 12288
UNK_TOKEN = "<unk>"
DEFAULT_SUBSAMPLE_THRESHOLD = 1e-4

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusFormatError(ValueError):
    """Malformed corpus, embedding, or lexicon input."""


class SpanValidationError(ValueError):
    """Precomputed token spans overlap or fall outside the text."""


# --------------------------------------------------------------------------
# tokenization and characters

def tokenize(text: str, mode: str = "whitespace-punct", spans=None):
    """Split text into (token, char_start, char_len) triples.

    Spans cover every non-separator character exactly once; concatenating
    spans plus the separators between them reproduces the input
    byte-for-byte. Lowercasing is applied only by table lookups downstream,
    never to the spans.
    """
    if mode == "whitespace-punct":
        return [(m.group(0), m.start(), m.end() - m.start())
                for m in _TOKEN_RE.finditer(text)]
    if mode == "precomputed-spans":
        if spans is None:
            raise SpanValidationError("precomputed-spans mode requires spans")
        out = []
        prev_end = 0
        for start, length in spans:
            start, length = int(start), int(length)
            if length < 1 or start < 0 or start + length > len(text):
                raise SpanValidationError(
                    f"span ({start},{length}) outside text of length {len(text)}")
            if start < prev_end:
                raise SpanValidationError(
                    f"span ({start},{length}) overlaps a previous span")
            prev_end = start + length
            out.append((text[start:start + length], start, length))
        return out
    raise ValueError(f"unknown tokenize mode {mode!r}")


def char_encode(text: str, char_set_size: int = CHAR_SET_SIZE) -> np.ndarray:
    """Unicode code points, with anything beyond the character set mapped to
    the reserved OOV id 0."""
    ids = np.fromiter((ord(c) for c in text), dtype=np.int32, count=len(text))
    ids[ids >= char_set_size] = 0
    return ids


# --------------------------------------------------------------------------
# documents

@dataclass
class TokenMeta:
    vocab_id: int
    char_start: int
    char_len: int
    pos_in_doc: int
    subsample_p: float = 1.0
    polarity: float = 0.0
    subjectivity: float = 0.0
    embedding_row: int | None = None


@dataclass
class Document:
    id: int
    text: str
    label: int
    chars: np.ndarray
    tokens: list

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    def token_text(self, meta: TokenMeta) -> str:
        return self.text[meta.char_start:meta.char_start + meta.char_len]


def build_document(doc_id: int, text: str, label: int,
                   vocabulary: "Vocabulary | None" = None,
                   mode: str = "whitespace-punct", spans=None) -> Document:
    metas = []
    for pos, (tok, start, length) in enumerate(tokenize(text, mode, spans)):
        vid = vocabulary.id_of(tok) if vocabulary is not None else 0
        metas.append(TokenMeta(vocab_id=vid, char_start=start,
                               char_len=length, pos_in_doc=pos))
    return Document(id=doc_id, text=text, label=int(label),
                    chars=char_encode(text), tokens=metas)


# --------------------------------------------------------------------------
# vocabulary and frequencies

class Vocabulary:
    """Lowercased token forms, id 0 reserved for the unknown token."""

    def __init__(self, tokens=()):
        self.tokens = [UNK_TOKEN]
        self._index = {UNK_TOKEN: 0}
        for t in tokens:
            if t not in self._index:
                self._index[t] = len(self.tokens)
                self.tokens.append(t)

    @classmethod
    def from_documents(cls, documents) -> "Vocabulary":
        forms = set()
        for doc in documents:
            for meta in doc.tokens:
                forms.add(doc.token_text(meta).lower())
        forms.discard(UNK_TOKEN)
        return cls(sorted(forms))

    def id_of(self, token: str) -> int:
        return self._index.get(token.lower(), 0)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._index

    def __len__(self) -> int:
        return len(self.tokens)


def reassign_vocab_ids(documents, vocabulary: Vocabulary) -> None:
    for doc in documents:
        for meta in doc.tokens:
            meta.vocab_id = vocabulary.id_of(doc.token_text(meta))


@dataclass
class FrequencyTable:
    counts: dict
    base_corpus_token_count: int

    def count_of(self, token: str) -> int:
        return self.counts.get(token.lower(), 1)


def build_frequency_table(documents, vocabulary) -> FrequencyTable:
    """Count lowercased token occurrences over the documents.

    Every vocabulary entry starts at 1; entries observed in the corpus are
    overwritten with their occurrence count (floor 1 preserved for unseen
    tokens). base_corpus_token_count is the total number of token
    occurrences, in- or out-of-vocabulary.
    """
    if isinstance(vocabulary, Vocabulary):
        vocab_forms = vocabulary.tokens
    else:
        vocab_forms = list(vocabulary)
    if not vocab_forms:
        raise ValueError("vocabulary must be non-empty")
    counts = {t: 1 for t in vocab_forms}
    observed = {}
    total = 0
    for doc in documents:
        for meta in doc.tokens:
            form = doc.token_text(meta).lower()
            observed[form] = observed.get(form, 0) + 1
            total += 1
    for form, c in observed.items():
        if form in counts:
            counts[form] = c
    return FrequencyTable(counts=counts, base_corpus_token_count=total)


# --------------------------------------------------------------------------
# sub-sampling probabilities

def linear_subsample_prob(freq: int, base_total: int,
                          threshold: float = DEFAULT_SUBSAMPLE_THRESHOLD) -> float:
    """min(1, threshold / (freq / base_total)); non-increasing in freq."""
    if freq < 1 or base_total < 1 or threshold <= 0:
        raise ValueError("freq and base_total must be >= 1, threshold > 0")
    return min(1.0, threshold / (freq / base_total))


def sigmoid_subsample_prob(freq: float,
                           threshold: float = DEFAULT_SUBSAMPLE_THRESHOLD) -> float:
    """1 - 0.95 * sigmoid(0.05 * (freq/threshold - 90)); in (0.05, 1)."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    x = 0.05 * ((freq / threshold) - 90.0)
    if x >= 0:
        s = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        s = e / (1.0 + e)
    return 1.0 - 0.95 * s


# --------------------------------------------------------------------------
# embeddings and sentiment

@dataclass
class EmbeddingTable:
    dim: int
    rows: dict


def min_max_normalize(matrix: np.ndarray) -> np.ndarray:
    """Per-dimension min-max to [0,1]; zero-range dimensions map to 0.0."""
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    span = hi - lo
    out = np.zeros_like(matrix, dtype=np.float64)
    ok = span > 0
    out[:, ok] = (matrix[:, ok] - lo[ok]) / span[ok]
    return out


def load_embedding_table(path, dim: int) -> EmbeddingTable:
    """TSV rows `token<TAB>v1 v2 ... v_dim`, min-max normalized per dim."""
    tokens, vectors = [], []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                token, rest = line.split("\t", 1)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: expected token<TAB>values")
            vec = np.array([float(v) for v in rest.split()], dtype=np.float64)
            if vec.shape[0] != dim:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {vec.shape[0]}")
            if token in seen:
                logger.warning("duplicate embedding row for %r; last occurrence wins", token)
                vectors[seen[token]] = vec
            else:
                seen[token] = len(tokens)
                tokens.append(token)
                vectors.append(vec)
    if not tokens:
        return EmbeddingTable(dim=dim, rows={})
    norm = min_max_normalize(np.stack(vectors))
    return EmbeddingTable(dim=dim, rows={t: norm[i] for i, t in enumerate(tokens)})


def hashed_fallback_embedding(token: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-random vector in [0,1)^dim from (token, seed)."""
    gen = rngmod.substream(seed, rngmod.STREAM_FALLBACK_EMBEDDING,
                           rngmod.token_hash(token))
    return gen.random(dim)


def load_sentiment_lexicon(path) -> dict:
    """TSV rows `token<TAB>polarity<TAB>subjectivity`; lookups of absent
    tokens should default to (0.0, 0.0) via dict.get."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected token<TAB>polarity<TAB>subjectivity")
            token, pol_s, subj_s = parts
            pol, subj = float(pol_s), float(subj_s)
            if not -1.0 <= pol <= 1.0:
                raise CorpusFormatError(f"{path}:{lineno}: polarity {pol} outside [-1,1]")
            if not 0.0 <= subj <= 1.0:
                raise CorpusFormatError(f"{path}:{lineno}: subjectivity {subj} outside [0,1]")
            out[token] = (pol, subj)
    return out


# --------------------------------------------------------------------------
# corpus-level tables

@dataclass
class CorpusTables:
    """Per-vocabulary-id arrays the batch assembler reads from."""

    vocabulary: Vocabulary
    frequency: FrequencyTable
    subsample_p: np.ndarray
    polarity: np.ndarray
    subjectivity: np.ndarray
    embeddings: np.ndarray
    embedding_dim: int
    subsample_mode: str
    subsample_threshold: float
    seed: int

    def to_state(self) -> dict:
        return {
            "tokens": list(self.vocabulary.tokens),
            "counts": {k: int(v) for k, v in self.frequency.counts.items()},
            "base_corpus_token_count": int(self.frequency.base_corpus_token_count),
            "subsample_p": self.subsample_p.tolist(),
            "polarity": self.polarity.tolist(),
            "subjectivity": self.subjectivity.tolist(),
            "embedding_dim": int(self.embedding_dim),
            "subsample_mode": self.subsample_mode,
            "subsample_threshold": float(self.subsample_threshold),
            "seed": int(self.seed),
        }

    @classmethod
    def from_state(cls, state: dict, embeddings: np.ndarray) -> "CorpusTables":
        vocab = Vocabulary.__new__(Vocabulary)
        vocab.tokens = list(state["tokens"])
        vocab._index = {t: i for i, t in enumerate(vocab.tokens)}
        freq = FrequencyTable(counts={k: int(v) for k, v in state["counts"].items()},
                              base_corpus_token_count=state["base_corpus_token_count"])
        return cls(
            vocabulary=vocab,
            frequency=freq,
            subsample_p=np.asarray(state["subsample_p"], dtype=np.float64),
            polarity=np.asarray(state["polarity"], dtype=np.float64),
            subjectivity=np.asarray(state["subjectivity"], dtype=np.float64),
            embeddings=embeddings,
            embedding_dim=state["embedding_dim"],
            subsample_mode=state["subsample_mode"],
            subsample_threshold=state["subsample_threshold"],
            seed=state["seed"],
        )


def build_corpus_tables(documents, embedding_table: EmbeddingTable | None = None,
                        sentiment: dict | None = None,
                        embedding_dim: int = 64,
                        subsample_mode: str = "linear",
                        threshold: float = DEFAULT_SUBSAMPLE_THRESHOLD,
                        seed: int = 0) -> CorpusTables:
    if subsample_mode not in ("linear", "sigmoid"):
        raise ValueError(f"unknown subsample mode {subsample_mode!r}")
    vocab = Vocabulary.from_documents(documents)
    reassign_vocab_ids(documents, vocab)
    freq = build_frequency_table(documents, vocab)
    v = len(vocab)
    subs = np.empty(v, dtype=np.float64)
    pol = np.zeros(v, dtype=np.float64)
    subj = np.zeros(v, dtype=np.float64)
    emb = np.empty((v, embedding_dim), dtype=np.float32)
    base = max(freq.base_corpus_token_count, 1)
    sentiment = sentiment or {}
    for i, tok in enumerate(vocab.tokens):
        c = freq.count_of(tok)
        if subsample_mode == "linear":
            subs[i] = linear_subsample_prob(c, base, threshold)
        else:
            subs[i] = sigmoid_subsample_prob(c, threshold)
        p, s = sentiment.get(tok, (0.0, 0.0))
        pol[i], subj[i] = p, s
        row = embedding_table.rows.get(tok) if embedding_table else None
        if row is None:
            row = hashed_fallback_embedding(tok, embedding_dim, seed)
        emb[i] = row
    return CorpusTables(vocabulary=vocab, frequency=freq, subsample_p=subs,
                        polarity=pol, subjectivity=subj, embeddings=emb,
                        embedding_dim=embedding_dim, subsample_mode=subsample_mode,
                        subsample_threshold=threshold, seed=seed)


def annotate_documents(documents, tables: CorpusTables) -> None:
    """Copy per-vocab-id metadata onto each token."""
    for doc in documents:
        for meta in doc.tokens:
            vid = meta.vocab_id
            meta.subsample_p = float(tables.subsample_p[vid])
            meta.polarity = float(tables.polarity[vid])
            meta.subjectivity = float(tables.subjectivity[vid])
            meta.embedding_row = vid


def prepare_corpus(pairs, embedding_table=None, sentiment=None,
                   embedding_dim: int = 64, subsample_mode: str = "linear",
                   threshold: float = DEFAULT_SUBSAMPLE_THRESHOLD,
                   seed: int = 0):
    """(label, text) pairs -> (annotated documents, corpus tables)."""
    documents = [build_document(i, text, label) for i, (label, text) in enumerate(pairs)]
    tables = build_corpus_tables(documents, embedding_table, sentiment,
                                 embedding_dim, subsample_mode, threshold, seed)
    annotate_documents(documents, tables)
    return documents, tables


# --------------------------------------------------------------------------
# corpus file formats

def read_jsonl(path):
    """JSON-lines corpus: one {"label": int, "text": str} object per line."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append((int(obj["label"]), str(obj["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def read_csv(path):
    """Two-column CSV corpus: label,text (optional literal header row)."""
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row:
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["label", "text"]:
                continue
            if len(row) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                pairs.append((int(row[0]), row[1]))
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def read_corpus(path):
    path = str(path)
    if path.endswith(".csv"):
        return read_csv(path)
    return read_jsonl(path)
