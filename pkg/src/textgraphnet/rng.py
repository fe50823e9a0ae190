"""Seed-stream bookkeeping.

Every stochastic component draws from its own PCG64 stream, derived from the
run seed plus a stream id plus component-specific keys. Streams never share
state, so batch composition cannot perturb per-document randomness and two
runs with the same seed are bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stream ids. Values are arbitrary but frozen: changing them changes every
# derived random sequence.
STREAM_PARTITION = 1
STREAM_GRAPH = 2
STREAM_UPDATE = 3
STREAM_DROPOUT = 4
STREAM_INIT = 5
STREAM_FALLBACK_EMBEDDING = 6
STREAM_SYNTHETIC = 7

GENERATOR_NAME = "PCG64"


def substream(seed: int, stream_id: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, stream, keys...).

    Keys must be non-negative ints (SeedSequence entropy words).
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream_id)]
    words.extend(int(k) & 0xFFFFFFFFFFFFFFFF for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def content_hash(char_ids: np.ndarray) -> int:
    """Stable 64-bit hash of a document's character ids.

    Used to key per-document random streams: duplicated documents hash equal,
    so they receive identical graphs regardless of batch position.
    """
    buf = np.ascontiguousarray(char_ids, dtype=np.int32).tobytes()
    digest = hashlib.blake2b(buf, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def token_hash(token: str) -> int:
    """Stable 64-bit hash of a token string (embedding fallback key)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
