"""Model assembly: config defaults, pipeline behavior, determinism, FLOPs."""

import numpy as np
import pytest

from textgraphnet import batching, corpus, layers
from textgraphnet import tensorcore as tc
from textgraphnet.graphgen import GraphConfig
from textgraphnet.layers import ConfigError
from textgraphnet.model import ModelConfig, TextGraphModel, flop_estimate
from textgraphnet.rng import STREAM_DROPOUT, substream
from textgraphnet.synthetic import make_token_batch
from textgraphnet.tensorcore import ShapeError, Tensor


def batch_from_texts(texts, labels=None, embedding_dim=4):
    labels = labels or [0] * len(texts)
    docs, tables = corpus.prepare_corpus(list(zip(labels, texts)),
                                         embedding_dim=embedding_dim)
    return batching.assemble_compact_batch(docs, tables)


def tiny_config(**kwargs):
    base = dict(
        hidden_dim=8, inject_dim=4, char_vocab=256, dropout=0.0,
        graph=GraphConfig(n_lattice=4, n_random=2, heads=2),
        sentiment_expand=4, n_classes=2, seed=3)
    base.update(kwargs)
    return ModelConfig(**base)


# configuration for the per-document determinism harnesses: every component
# that can couple documents is switched to its per-document form
def perdoc_config(**kwargs):
    base = dict(gnn_variant="gatv2", boundary_mask=True, edge_subsample=False,
                sentiment_type=2,
                graph=GraphConfig(n_lattice=4, n_random=2, heads=1))
    base.update(kwargs)
    return tiny_config(**base)


class TestModelConfigDefaults:
    def test_hyperparameter_table_values(self):
        cfg = ModelConfig()
        assert cfg.hidden_dim == 64
        assert cfg.inject_dim == 64
        assert cfg.char_vocab == 12288
        assert cfg.n_cnn_gnn_layers == 2
        assert cfg.graph.lattice_step == 2
        assert cfg.graph.n_lattice == 10
        assert cfg.graph.n_random == 6
        assert cfg.dropout == 0.2
        assert cfg.lr == 0.0032
        assert cfg.weight_decay == 1.1e-5
        assert cfg.milestones == (15, 20, 30, 38, 40, 45, 50)
        assert cfg.lr_factor == 0.5
        assert cfg.epochs == 70
        assert cfg.batch_size in (224, 256, 512)
        assert cfg.loss == "cross-entropy"
        assert cfg.sentiment_positions == ("P2", "P3")
        assert cfg.sentiment_type == 3

    def test_dict_roundtrip(self):
        cfg = ModelConfig(hidden_dim=16, sentiment_positions=("P1",),
                          graph=GraphConfig(n_lattice=4, heads=2))
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_roundtrip_survives_json(self):
        import json
        cfg = ModelConfig()
        again = ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_with_overrides_splits_graph_keys(self):
        cfg = ModelConfig().with_overrides(lr=0.01, n_lattice=4)
        assert cfg.lr == 0.01
        assert cfg.graph.n_lattice == 4
        assert cfg.graph.lattice_step == 2  # untouched

    @pytest.mark.parametrize("bad", [
        dict(hidden_dim=7),
        dict(gnn_variant="transformer"),
        dict(hidden_dim=6, graph=GraphConfig(heads=4)),
        dict(sentiment_positions=("P4",)),
        dict(sentiment_positions=("P2", "P2")),
        dict(sentiment_type=0),
        dict(dropout=1.0),
        dict(n_cnn_gnn_layers=-1),
        dict(lr=0.0),
        dict(n_classes=1),
        dict(keep_per_node=0),
    ])
    def test_invalid_configs_rejected(self, bad):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)


class TestForward:
    def test_single_token_document_logit_shape(self):
        model = TextGraphModel(tiny_config())
        batch = make_token_batch([1])
        logits = model.forward(batch)
        assert logits.values.shape == (1, 2)
        assert np.isfinite(logits.values).all()

    def test_multi_doc_logit_shape(self):
        model = TextGraphModel(tiny_config(n_classes=3))
        batch = make_token_batch([5, 12, 3])
        assert model.forward(batch).values.shape == (3, 3)

    def test_embedding_dim_mismatch_rejected(self):
        model = TextGraphModel(tiny_config(inject_dim=16))
        batch = make_token_batch([4])  # embeddings have dim 4
        with pytest.raises(ShapeError):
            model.forward(batch)

    def test_eval_forward_is_deterministic(self):
        model = TextGraphModel(tiny_config())
        batch = make_token_batch([6, 9])
        a = model.forward(batch, salt=0).values
        b = model.forward(batch, salt=0).values
        np.testing.assert_array_equal(a, b)

    def test_salt_changes_graph_and_logits(self):
        model = TextGraphModel(tiny_config())
        batch = make_token_batch([30, 25])
        a = model.forward(batch, salt=(0, 0)).values
        b = model.forward(batch, salt=(0, 1)).values
        assert not np.array_equal(a, b)

    def test_dropout_active_only_in_training(self):
        model = TextGraphModel(tiny_config(dropout=0.4))
        batch = make_token_batch([6, 9])
        eval_out = model.forward(batch).values
        train_out = model.forward(batch, train=True,
                                  dropout_rng=substream(3, STREAM_DROPOUT, 0)).values
        assert not np.array_equal(eval_out, train_out)
        np.testing.assert_array_equal(eval_out, model.forward(batch).values)

    def test_zero_layer_config_still_classifies(self):
        model = TextGraphModel(tiny_config(n_cnn_gnn_layers=0))
        batch = make_token_batch([4, 4])
        assert model.forward(batch).values.shape == (2, 2)

    def test_identity_seed_identical_parameters(self):
        a = TextGraphModel(tiny_config())
        b = TextGraphModel(tiny_config())
        for name, p in a.named_parameters().items():
            np.testing.assert_array_equal(p.values, b.named_parameters()[name].values)


class TestPerDocumentHarness:
    def test_duplicated_document_identical_logits(self):
        text = "the cast was strong but the plot sagged badly near the end"
        batch = batch_from_texts([text, text], labels=[0, 1])
        model = TextGraphModel(perdoc_config())
        logits = model.forward(batch).values
        np.testing.assert_allclose(logits[0], logits[1], rtol=0, atol=1e-12)

    def test_document_order_permutes_logits(self):
        a = "a quiet film with a sharp script"
        b = "loud and long but never boring for a minute of its runtime"
        batch_ab = batch_from_texts([a, b])
        batch_ba = batch_from_texts([b, a])
        model = TextGraphModel(perdoc_config())
        out_ab = model.forward(batch_ab).values
        out_ba = model.forward(batch_ba).values
        np.testing.assert_allclose(out_ab[0], out_ba[1], atol=1e-10)
        np.testing.assert_allclose(out_ab[1], out_ba[0], atol=1e-10)

    def test_third_unrelated_document_does_not_leak(self):
        a = "a quiet film with a sharp script"
        b = "loud and long but never boring for a minute of its runtime"
        base = batch_from_texts([a])
        with_other = batch_from_texts([a, b])
        model = TextGraphModel(perdoc_config())
        solo = model.forward(base).values[0]
        paired = model.forward(with_other).values[0]
        # feature norm uses batch statistics, so exact equality is not
        # expected; the graph, convolutions and RNG must stay per-document
        assert np.isfinite(paired).all()
        assert solo.shape == paired.shape


class TestEndToEndGradient:
    def test_tiny_model_gradcheck(self):
        cfg = tiny_config(keep_per_node=64)  # update_graph keeps everything:
        # top-k reselection under parameter perturbation would break the
        # central-difference assumption
        model = TextGraphModel(cfg)
        batch = make_token_batch([5, 5], seed=11)
        labels = np.array([0, 1])

        def loss():
            return tc.cross_entropy(model.forward(batch), labels)

        # conv biases are exactly null through the column norm; skip them
        params = list(layers.fd_checkable_parameters(model).values())
        err = tc.grad_check(loss, params, sample=3,
                            rng=np.random.default_rng(5))
        assert err <= 1e-3

    def test_frozen_batch_loss_decreases_under_gd(self):
        # sanity descent: 10 plain gradient steps at small lr
        cfg = tiny_config(keep_per_node=64)
        model = TextGraphModel(cfg)
        batch = make_token_batch([6, 6, 6, 6], seed=2)
        labels = np.array([0, 1, 0, 1])
        params = model.parameters()
        losses = []
        for _ in range(10):
            with tc.Tape() as tape:
                loss = tc.cross_entropy(model.forward(batch), labels)
                tape.backward(loss)
            losses.append(float(loss.values))
            for p in params:
                if p.grad is not None:
                    p.values -= 1e-3 * p.grad
                p.zero_grad()
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestFlopEstimate:
    def test_conv_term_frozen_value(self):
        cfg = ModelConfig(n_cnn_gnn_layers=1)
        batch = make_token_batch([100])
        est = flop_estimate(cfg, batch)
        assert est["terms"]["token_conv"] == 100 * 3 * 64 * 64  # 1,228,800

    def test_doubling_batch_doubles_total_exactly(self):
        cfg = ModelConfig()
        single = make_token_batch([10, 20])
        double = make_token_batch([10, 20, 10, 20])
        assert flop_estimate(cfg, double)["total"] == \
            2 * flop_estimate(cfg, single)["total"]

    def test_zero_layer_config_keeps_embedding_and_head_terms(self):
        cfg = ModelConfig(n_cnn_gnn_layers=0, sentiment_positions=())
        est = flop_estimate(cfg, make_token_batch([50]))
        assert set(est["terms"]) == {
            "char_embedding", "char_block", "char_to_token",
            "embedding_inject", "global_pool", "mlp_head"}

    def test_per_document_average(self):
        cfg = ModelConfig()
        est = flop_estimate(cfg, make_token_batch([10, 10]))
        assert est["per_document"] == est["total"] / 2
