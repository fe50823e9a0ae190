"""Partitioning and compact-batch assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textgraphnet import batching as bt
from textgraphnet import container as ct
from textgraphnet import corpus as cp


class TestGreedyPartition:
    def test_hand_traced_example(self):
        part = bt.greedy_k_partition([10, 9, 5, 4, 2, 2], k=2)
        sets = [sorted([10, 9, 5, 4, 2, 2][i] for i in b) for b in part.batches]
        assert sorted(map(tuple, sets)) == [(2, 4, 10), (2, 5, 9)]
        np.testing.assert_array_equal(part.sums, [16, 16])
        np.testing.assert_array_equal(part.counts, [3, 3])

    def test_single_item_single_batch(self):
        part = bt.greedy_k_partition([7], k=1)
        assert part.sums.tolist() == [7]
        assert part.batches[0].tolist() == [0]

    def test_symmetric_input(self):
        part = bt.greedy_k_partition([3, 3, 3, 3], k=2)
        np.testing.assert_array_equal(part.sums, [6, 6])
        np.testing.assert_array_equal(part.counts, [2, 2])

    def test_dummies_pad_to_divisibility(self):
        part = bt.greedy_k_partition([5, 4, 3], k=2)
        np.testing.assert_array_equal(part.counts, [2, 2])
        real = part.real_batches()
        assert sum(len(b) for b in real) == 3
        assert all(bt.DUMMY_ID not in b for b in real)

    def test_sorted_by_sum_descending(self):
        part = bt.greedy_k_partition([9, 1, 1, 1, 1, 1], k=3)
        assert (np.diff(part.sums) <= 0).all()

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            bt.greedy_k_partition([1, 2], k=0)
        with pytest.raises(ValueError):
            bt.greedy_k_partition([], k=3)

    def test_epoch_zero_identical_across_seeds(self):
        lengths = np.random.default_rng(0).integers(1, 500, size=40)
        a = bt.greedy_k_partition(lengths, 4, epoch=0, shuffle=True, rng_seed=1)
        b = bt.greedy_k_partition(lengths, 4, epoch=0, shuffle=True, rng_seed=2)
        for x, y in zip(a.batches, b.batches):
            np.testing.assert_array_equal(x, y)

    def test_shuffle_is_deterministic_per_seed_and_epoch(self):
        lengths = np.random.default_rng(1).integers(1, 500, size=40)
        a = bt.greedy_k_partition(lengths, 4, epoch=3, shuffle=True, rng_seed=7)
        b = bt.greedy_k_partition(lengths, 4, epoch=3, shuffle=True, rng_seed=7)
        c = bt.greedy_k_partition(lengths, 4, epoch=4, shuffle=True, rng_seed=7)
        for x, y in zip(a.batches, b.batches):
            np.testing.assert_array_equal(x, y)
        assert any(not np.array_equal(x, y) for x, y in zip(a.batches, c.batches))

    def test_shuffle_flag_off_ignores_epoch(self):
        lengths = np.random.default_rng(2).integers(1, 500, size=30)
        a = bt.greedy_k_partition(lengths, 3, epoch=5, shuffle=False)
        b = bt.greedy_k_partition(lengths, 3, epoch=0, shuffle=False)
        for x, y in zip(a.batches, b.batches):
            np.testing.assert_array_equal(x, y)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
    @settings(max_examples=60, deadline=None)
    def test_greedy_bound_and_equal_counts(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 60))
        # heavy-tailed lengths
        lengths = np.ceil(rng.pareto(1.1, size=n) * 50 + 1).astype(np.int64)
        part = bt.greedy_k_partition(lengths, k, epoch=int(rng.integers(0, 4)),
                                     shuffle=bool(rng.integers(0, 2)), rng_seed=seed)
        assert len(set(part.counts.tolist())) == 1
        assert part.sums.max() - part.sums.min() <= lengths.max()
        # every real id appears exactly once
        real = np.concatenate(part.real_batches())
        np.testing.assert_array_equal(np.sort(real), np.arange(n))
        # sums consistent with membership
        for ids, s in zip(part.real_batches(), part.sums):
            assert lengths[ids].sum() == s


def make_tables(texts):
    docs, tables = cp.prepare_corpus([(i % 2, t) for i, t in enumerate(texts)],
                                     embedding_dim=4)
    return docs, tables


class TestCompactBatchAssembly:
    def test_two_doc_offsets(self):
        docs, tables = make_tables(["a b c", "d e"])
        batch = bt.assemble_compact_batch(docs, tables)
        np.testing.assert_array_equal(batch.doc_lower_bounds, [0, 3])
        np.testing.assert_array_equal(batch.token_pos_in_batch, [0, 1, 2, 3, 4])
        np.testing.assert_array_equal(batch.token_pos_in_doc, [0, 1, 2, 0, 1])
        np.testing.assert_array_equal(batch.token_doc_id, [0, 0, 0, 1, 1])

    def test_single_token_char_index(self):
        docs, tables = make_tables(["ab"])
        batch = bt.assemble_compact_batch(docs, tables)
        np.testing.assert_array_equal(batch.char_token_index, [0, 0])

    def test_three_similar_docs_disjoint_ranges(self):
        text = "the quick brown fox jumps over a lazy dog near the barn"  # 12 tokens
        docs, tables = make_tables([text, text, text])
        batch = bt.assemble_compact_batch(docs, tables)
        assert batch.n_tokens == 36
        ranges = [batch.doc_token_range(d) for d in range(3)]
        assert ranges == [(0, 12), (12, 24), (24, 36)]

    def test_conservation_and_no_padding(self):
        docs, tables = make_tables(["hello world", "x", "a b c d e f"])
        batch = bt.assemble_compact_batch(docs, tables)
        assert batch.n_chars == sum(len(d.text) for d in docs)
        assert batch.chars_per_doc.sum() == batch.n_chars
        assert batch.tokens_per_doc.sum() == batch.n_tokens
        assert batch.char_token_index.shape == batch.token_char_slots.shape

    def test_char_slots_recover_token_text(self):
        docs, tables = make_tables(["Good movie!", "meh."])
        batch = bt.assemble_compact_batch(docs, tables)
        flat = 0
        for d, doc in enumerate(docs):
            for meta in doc.tokens:
                i = int(batch.doc_lower_bounds[d] + meta.pos_in_doc)
                slots = batch.token_char_slots[batch.char_token_index == i]
                got = batch.char_ids[slots]
                np.testing.assert_array_equal(
                    got, cp.char_encode(doc.token_text(meta)))
                flat += 1

    def test_char_token_index_is_repeat_interleave(self):
        docs, tables = make_tables(["one two", "three"])
        batch = bt.assemble_compact_batch(docs, tables)
        np.testing.assert_array_equal(
            batch.char_token_index,
            np.repeat(batch.token_pos_in_batch, batch.token_char_counts))
        assert (np.diff(batch.char_token_index) >= 0).all()

    def test_metadata_columns_come_from_tables(self):
        pairs = [(0, "good good bad")]
        docs, tables = cp.prepare_corpus(pairs, sentiment={"good": (0.5, 0.25)},
                                         embedding_dim=4)
        batch = bt.assemble_compact_batch(docs, tables)
        np.testing.assert_allclose(batch.polarity, [0.5, 0.5, 0.0])
        np.testing.assert_allclose(batch.subjectivity, [0.25, 0.25, 0.0])
        good = tables.vocabulary.id_of("good")
        np.testing.assert_allclose(batch.embeddings[0], tables.embeddings[good])

    def test_empty_document_rejected(self):
        docs, tables = make_tables(["ok"])
        empty = cp.build_document(9, "   ", 0)
        with pytest.raises(bt.AssemblyError):
            bt.assemble_compact_batch(docs + [empty], tables)

    def test_duplicate_documents_hash_equal(self):
        docs, tables = make_tables(["same text here", "same text here", "other"])
        batch = bt.assemble_compact_batch(docs, tables)
        assert batch.doc_hashes[0] == batch.doc_hashes[1]
        assert batch.doc_hashes[0] != batch.doc_hashes[2]

    def test_assemble_batches_follows_partition(self):
        texts = ["w " * n for n in (30, 20, 10, 5, 4, 1)]
        docs, tables = make_tables([t.strip() for t in texts])
        part = bt.greedy_k_partition([d.n_chars for d in docs], 2)
        batches = bt.assemble_batches(docs, part, tables)
        assert len(batches) == 2
        assert batches[0].n_chars >= batches[1].n_chars


class TestContainerRoundTrip:
    def test_batch_survives_serialization(self, tmp_path):
        docs, tables = make_tables(["alpha beta gamma", "delta!"])
        batch = bt.assemble_compact_batch(docs, tables)
        path = tmp_path / "batch.bin"
        ct.save_container(path, {"kind": "compact-batch", "batch_id": 3},
                          batch.to_arrays())
        meta, arrays = ct.load_container(path)
        assert meta == {"kind": "compact-batch", "batch_id": 3}
        back = bt.CompactBatch.from_arrays(arrays)
        for f in bt.CompactBatch.__dataclass_fields__:
            np.testing.assert_array_equal(getattr(back, f), getattr(batch, f))
        bt.validate_compact_batch(back)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ct.ContainerFormatError):
            ct.load_container(p)

    def test_dtype_and_shape_preserved(self, tmp_path):
        arrays = {
            "a": np.arange(6, dtype=np.int32).reshape(2, 3),
            "b": np.linspace(0, 1, 4, dtype=np.float32),
            "c": np.array([2 ** 40], dtype=np.uint64),
        }
        p = tmp_path / "x.bin"
        ct.save_container(p, {}, arrays)
        _, back = ct.load_container(p)
        for k, v in arrays.items():
            assert back[k].dtype == v.dtype
            np.testing.assert_array_equal(back[k], v)
