"""Graph-based text classification with compact padding-free batches.

Documents become character sequences convolved locally, token nodes wired
into per-document small-world graphs, and hybrid CNN-GNN layers over both.
Public names are imported lazily so process-level knobs (thread caps) can
be applied before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "tensorcore",
    "Tape": "tensorcore",
    "grad_check": "tensorcore",
    "GraphConfig": "graphgen",
    "EdgeList": "graphgen",
    "generate_graph": "graphgen",
    "update_graph": "graphgen",
    "TopologyReport": "graphstats",
    "analyze": "graphstats",
    "Document": "corpus",
    "Vocabulary": "corpus",
    "CorpusTables": "corpus",
    "build_document": "corpus",
    "prepare_corpus": "corpus",
    "read_corpus": "corpus",
    "CompactBatch": "batching",
    "greedy_k_partition": "batching",
    "assemble_compact_batch": "batching",
    "assemble_batches": "batching",
    "ModelConfig": "model",
    "TextGraphModel": "model",
    "flop_estimate": "model",
    "AdamW": "training",
    "TrainReport": "training",
    "train": "training",
    "evaluate": "training",
    "save_checkpoint": "training",
    "load_checkpoint": "training",
    "TextGraphClassifier": "estimator",
    "save_container": "container",
    "load_container": "container",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
