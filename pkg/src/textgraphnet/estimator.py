"""Scikit-learn style estimator wrapping the corpus pipeline and trainer.

TextGraphClassifier follows the sklearn contract: hyperparameters are
stored verbatim in __init__, all work happens in fit(), learned state
lives in trailing-underscore attributes, and get_params/set_params/clone
behave as usual. X is a sequence of raw text strings, y any array-like
of hashable labels.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import tensorcore as tc
from .batching import assemble_batches, greedy_k_partition
from .corpus import (
    annotate_documents,
    build_document,
    prepare_corpus,
    reassign_vocab_ids,
)
from .model import ModelConfig
from .training import load_checkpoint, save_checkpoint, train


class TextGraphClassifier(ClassifierMixin, BaseEstimator):
    """Text classifier over character convolutions and token graphs.

    Commonly tuned settings are first-class parameters; anything else in
    ModelConfig (or its nested graph settings) can be supplied through
    `overrides` as a flat dict, e.g. {"n_lattice": 8, "keep_per_node": 4}.
    """

    def __init__(self, hidden_dim: int = 64, n_cnn_gnn_layers: int = 2,
                 gnn_variant: str = "sparse_attention", sentiment_type: int = 3,
                 dropout: float = 0.2, lr: float = 0.0032,
                 weight_decay: float = 1.1e-5, epochs: int = 70,
                 batch_size: int = 224, seed: int = 0,
                 validation_fraction: float = 0.1,
                 target_accuracy: float | None = None,
                 embedding_table=None, lexicon=None,
                 overrides: dict | None = None):
        self.hidden_dim = hidden_dim
        self.n_cnn_gnn_layers = n_cnn_gnn_layers
        self.gnn_variant = gnn_variant
        self.sentiment_type = sentiment_type
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.validation_fraction = validation_fraction
        self.target_accuracy = target_accuracy
        self.embedding_table = embedding_table
        self.lexicon = lexicon
        self.overrides = overrides

    # ------------------------------------------------------------------
    def _model_config(self, n_classes: int) -> ModelConfig:
        cfg = ModelConfig(hidden_dim=self.hidden_dim,
                          n_cnn_gnn_layers=self.n_cnn_gnn_layers,
                          gnn_variant=self.gnn_variant,
                          sentiment_type=self.sentiment_type,
                          dropout=self.dropout, lr=self.lr,
                          weight_decay=self.weight_decay, epochs=self.epochs,
                          batch_size=self.batch_size, seed=self.seed,
                          n_classes=n_classes)
        if self.overrides:
            cfg = cfg.with_overrides(**self.overrides)
        return cfg

    def fit(self, X, y):
        texts = [str(t) for t in X]
        labels = np.asarray(list(y))
        if len(texts) == 0:
            raise ValueError("X is empty")
        if len(texts) != labels.shape[0]:
            raise ValueError(f"X has {len(texts)} documents but y has "
                             f"{labels.shape[0]} labels")
        self.classes_, y_idx = np.unique(labels, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("y must contain at least 2 classes")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")

        cfg = self._model_config(self.classes_.shape[0])
        order = np.random.default_rng(self.seed).permutation(len(texts))
        n_val = int(round(self.validation_fraction * len(texts)))
        val_ids, train_ids = order[:n_val], order[n_val:]
        if train_ids.size == 0:
            raise ValueError("validation split leaves no training documents")

        pairs = [(int(y_idx[i]), texts[i]) for i in train_ids]
        train_docs, tables = prepare_corpus(
            pairs, embedding_table=self.embedding_table,
            sentiment=self.lexicon, embedding_dim=cfg.inject_dim,
            seed=self.seed)
        if val_ids.size:
            val_docs = [build_document(int(i), texts[i], int(y_idx[i]),
                                       tables.vocabulary) for i in val_ids]
            annotate_documents(val_docs, tables)
        else:
            val_docs = train_docs  # reported "validation" is the train set

        report, model = train(train_docs, val_docs, tables, cfg,
                              target_accuracy=self.target_accuracy)
        self.config_ = cfg
        self.tables_ = tables
        self.model_ = model
        self.report_ = report
        return self

    # ------------------------------------------------------------------
    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This TextGraphClassifier instance is not fitted yet. "
                "Call fit before using this estimator.")

    def decision_function(self, X):
        """Raw per-class logits, rows in the order of X."""
        self._check_fitted()
        texts = [str(t) for t in X]
        if len(texts) == 0:
            return np.zeros((0, self.classes_.shape[0]))
        docs = [build_document(i, t, 0, self.tables_.vocabulary)
                for i, t in enumerate(texts)]
        annotate_documents(docs, self.tables_)
        k = max(1, math.ceil(len(docs) / self.config_.batch_size))
        part = greedy_k_partition([d.n_chars for d in docs], k)
        ids_per_batch = part.real_batches()
        batches = assemble_batches(docs, part, self.tables_)
        out = np.zeros((len(docs), self.classes_.shape[0]))
        with tc.default_dtype(np.float32):
            for ids, batch in zip(ids_per_batch, batches):
                logits = self.model_.forward(batch, train=False)
                out[ids] = logits.values
        return out

    def predict_proba(self, X):
        logits = self.decision_function(X)
        if logits.shape[0] == 0:
            return logits
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        self._check_fitted()
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        """Write the fitted model to a checkpoint container."""
        self._check_fitted()
        save_checkpoint(path, self.model_, self.tables_,
                        [c.item() if hasattr(c, "item") else c
                         for c in self.classes_],
                        self.report_.best_epoch, self.report_.final)

    @classmethod
    def from_checkpoint(cls, path) -> "TextGraphClassifier":
        """Rebuild a fitted estimator from a checkpoint container.

        Hyperparameters are restored from the stored config; the training
        report is not part of the checkpoint and stays absent.
        """
        with tc.default_dtype(np.float32):
            model, tables, classes, meta = load_checkpoint(path)
        cfg = model.cfg
        est = cls(hidden_dim=cfg.hidden_dim,
                  n_cnn_gnn_layers=cfg.n_cnn_gnn_layers,
                  gnn_variant=cfg.gnn_variant,
                  sentiment_type=cfg.sentiment_type, dropout=cfg.dropout,
                  lr=cfg.lr, weight_decay=cfg.weight_decay, epochs=cfg.epochs,
                  batch_size=cfg.batch_size, seed=cfg.seed)
        est.config_ = cfg
        est.tables_ = tables
        est.model_ = model
        est.classes_ = np.asarray(classes)
        return est
