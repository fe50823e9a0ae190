"""Desk-scale training loop: AdamW, multi-step LR decay, macro metrics.

Everything is driven by a single seed: the batch partitioner, per-document
graph generation (salted with (epoch, step) during training, 0 during
evaluation), dropout, and parameter init all draw from documented RNG
substreams, so two runs with the same inputs and seed produce identical
reports and byte-identical checkpoints.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .batching import assemble_batches, greedy_k_partition
from .container import load_container, save_container
from .corpus import CorpusTables, annotate_documents, reassign_vocab_ids
from .model import ModelConfig, TextGraphModel, flop_estimate
from .rng import STREAM_DROPOUT, substream

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "textgraphnet-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN/inf; message carries the batch diagnostics."""


# --------------------------------------------------------------------------
# optimizer and schedule

class AdamW:
    """Adaptive moments with decoupled weight decay.

    The decay term shrinks parameters directly (p -= lr*wd*p) and is not part
    of the gradient moments.
    """

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.values)
            if self.weight_decay:
                p.values -= self.lr * self.weight_decay * p.values
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def lr_at_epoch(base_lr: float, factor: float, milestones, epoch: int) -> float:
    """Learning rate for a 1-based epoch: decayed once per milestone <= epoch."""
    hits = sum(1 for m in milestones if m <= epoch)
    return base_lr * factor ** hits


# --------------------------------------------------------------------------
# metrics

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Accuracy plus macro precision/recall/F1; empty denominators count as 0."""
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    true = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(true > 0, tp / true, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / pr, 0.0)
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
    }


# --------------------------------------------------------------------------
# reports

@dataclass
class TrainReport:
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float = 0.0
    final: dict = field(default_factory=dict)
    wall_time: float = 0.0
    flops_per_epoch: int = 0

    def eval_view(self) -> dict:
        """The deterministic slice: everything except wall-clock fields."""
        epochs = [{k: v for k, v in e.items() if k != "wall_time"}
                  for e in self.epochs]
        return {"config": self.config, "epochs": epochs,
                "best_epoch": self.best_epoch,
                "best_accuracy": self.best_accuracy, "final": self.final,
                "flops_per_epoch": self.flops_per_epoch}

    def to_json(self) -> str:
        return json.dumps(vars(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# evaluation

def evaluate_batches(model: TextGraphModel, batches, salt=0) -> dict:
    """Eval-mode forward over batches -> confusion-matrix metrics + mean loss."""
    n_classes = model.cfg.n_classes
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    loss_sum = 0.0
    n_docs = 0
    for batch in batches:
        logits = model.forward(batch, train=False, salt=salt)
        loss = tc.cross_entropy(logits, batch.labels)
        pred = logits.values.argmax(axis=1)
        cm += confusion_matrix(batch.labels, pred, n_classes)
        loss_sum += float(loss.values) * batch.n_docs
        n_docs += batch.n_docs
    out = metrics_from_confusion(cm)
    out["loss"] = loss_sum / n_docs if n_docs else 0.0
    out["n_documents"] = int(cm.sum())
    return out


def make_eval_batches(documents, tables, batch_size: int):
    k = max(1, math.ceil(len(documents) / batch_size))
    part = greedy_k_partition([d.n_chars for d in documents], k)
    return assemble_batches(documents, part, tables)


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model: TextGraphModel, tables: CorpusTables,
                    classes, best_epoch: int, metrics: dict) -> None:
    meta = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "corpus": tables.to_state(),
        "classes": list(classes),
        "best_epoch": int(best_epoch),
        "metrics": metrics,
    }
    arrays = {f"param.{k}": v for k, v in model.state_dict().items()}
    arrays["embeddings"] = tables.embeddings
    save_container(path, meta, arrays)


def load_checkpoint(path):
    """-> (model, tables, classes, meta)."""
    meta, arrays = load_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a model checkpoint")
    cfg = ModelConfig.from_dict(meta["config"])
    model = TextGraphModel(cfg)
    model.load_state({k[len("param."):]: v for k, v in arrays.items()
                      if k.startswith("param.")})
    tables = CorpusTables.from_state(meta["corpus"],
                                     arrays["embeddings"].astype(np.float32))
    return model, tables, list(meta["classes"]), meta


# --------------------------------------------------------------------------
# training loop

def train(train_docs, val_docs, tables: CorpusTables, cfg: ModelConfig,
          checkpoint_path=None, dtype=np.float32, target_accuracy=None,
          log_every: int = 0):
    """-> (TrainReport, model restored to its best-validation state).

    Epoch flow: partition by character load (shuffled from the second epoch
    on), assemble compact batches, one optimizer step per batch with the
    graph salted by (epoch, step), then a full validation pass. The best
    validation accuracy decides the checkpoint. `target_accuracy` stops
    early once validation accuracy reaches it.
    """
    t_start = time.perf_counter()
    with tc.default_dtype(dtype):
        model = TextGraphModel(cfg)
        opt = AdamW(model.parameters(), cfg.lr, cfg.weight_decay,
                    cfg.betas, cfg.eps)
        val_batches = make_eval_batches(val_docs, tables, cfg.batch_size)
        report = TrainReport(config=cfg.to_dict())
        lengths = [d.n_chars for d in train_docs]
        k = max(1, math.ceil(len(train_docs) / cfg.batch_size))

        best_state = model.state_dict()
        best_acc = -1.0
        best_epoch = 0
        best_metrics: dict = {}

        if cfg.epochs == 0:
            init_metrics = evaluate_batches(model, val_batches)
            report.final = init_metrics
            report.best_accuracy = init_metrics["accuracy"]
            best_metrics = init_metrics

        for epoch in range(1, cfg.epochs + 1):
            t_epoch = time.perf_counter()
            lr = lr_at_epoch(cfg.lr, cfg.lr_factor, cfg.milestones, epoch)
            opt.lr = lr
            part = greedy_k_partition(lengths, k, epoch=epoch - 1,
                                      shuffle=True, rng_seed=cfg.seed)
            batches = assemble_batches(train_docs, part, tables)
            if epoch == 1:
                report.flops_per_epoch = sum(
                    flop_estimate(cfg, b)["total"] for b in batches)

            loss_sum = 0.0
            n_seen = 0
            for step, batch in enumerate(batches):
                drop_rng = substream(cfg.seed, STREAM_DROPOUT, epoch, step)
                with tc.Tape() as tape:
                    logits = model.forward(batch, train=True,
                                           dropout_rng=drop_rng,
                                           salt=(epoch, step))
                    loss = tc.cross_entropy(logits, batch.labels)
                    loss_val = float(loss.values)
                    if not np.isfinite(loss_val):
                        raise NonFiniteLossError(
                            f"non-finite loss {loss_val} at epoch {epoch} "
                            f"step {step}; batch docs {batch.doc_hashes.tolist()}")
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                loss_sum += loss_val * batch.n_docs
                n_seen += batch.n_docs

            val = evaluate_batches(model, val_batches)
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": loss_sum / n_seen,
                "wall_time": time.perf_counter() - t_epoch,
                **{f"val_{k_}": v for k_, v in val.items()},
            }
            report.epochs.append(entry)
            if log_every and epoch % log_every == 0:
                logger.info("epoch %d: train loss %.4f, val acc %.4f",
                            epoch, entry["train_loss"], val["accuracy"])

            if val["accuracy"] > best_acc:
                best_acc = val["accuracy"]
                best_epoch = epoch
                best_state = model.state_dict()
                best_metrics = val
            if target_accuracy is not None and val["accuracy"] >= target_accuracy:
                break

        report.best_epoch = best_epoch
        report.best_accuracy = max(best_acc, 0.0)
        report.final = best_metrics
        report.wall_time = time.perf_counter() - t_start

        model.load_state(best_state)
        if checkpoint_path is not None:
            classes = list(range(cfg.n_classes))
            save_checkpoint(checkpoint_path, model, tables, classes,
                            best_epoch, best_metrics)
    return report, model


def evaluate(documents, checkpoint_path, dtype=np.float32) -> TrainReport:
    """Load a checkpoint and score a document set; returns an eval-only report.

    Documents are re-mapped onto the checkpoint's vocabulary, so they may
    come from a fresh tokenization pass.
    """
    t0 = time.perf_counter()
    with tc.default_dtype(dtype):
        model, tables, _, meta = load_checkpoint(checkpoint_path)
        reassign_vocab_ids(documents, tables.vocabulary)
        annotate_documents(documents, tables)
        batches = make_eval_batches(documents, tables, model.cfg.batch_size)
        metrics = evaluate_batches(model, batches)
        report = TrainReport(config=meta["config"])
        report.final = metrics
        report.best_epoch = meta.get("best_epoch", 0)
        report.best_accuracy = metrics["accuracy"]
        report.flops_per_epoch = sum(
            flop_estimate(model.cfg, b)["total"] for b in batches)
        report.wall_time = time.perf_counter() - t0
    return report
