"""Operator command line: preprocess, graph-stats, train, eval, gradcheck, accept.

Every command prints UTF-8 JSON (or plain pass/fail lines for gradcheck
and accept) with the fully resolved configuration echoed, and is
deterministic given its inputs and --seed. Exit codes: 0 success, 1
assertion or acceptance failure, 2 usage or input error.

Configuration is flat key=value: a --config file (one pair per line, #
comments) overridden by repeatable --set KEY=VALUE flags. Keys are
ModelConfig fields or its nested graph fields, e.g. `n_lattice=8`.

Heavy imports happen inside command handlers so --threads can cap the
BLAS pools before numpy loads.
"""

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

RUN_DIR_ENV = "TEXTGRAPHNET_RUN_DIR"
PREPROCESSED_KIND = "textgraphnet-preprocessed"
PREPROCESSED_VERSION = 1


class UsageError(Exception):
    """Bad input or configuration: reported on stderr with exit code 2."""


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_kv_line(line: str) -> tuple:
    if "=" not in line:
        raise UsageError(f"expected KEY=VALUE, got {line!r}")
    key, _, raw = line.partition("=")
    key, raw = key.strip(), raw.strip()
    if not key:
        raise UsageError(f"empty key in {line!r}")
    return key, _parse_value(raw)


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            key, value = parse_kv_line(line)
        except UsageError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from exc
        out[key] = value
    return out


@dataclass
class RunConfig:
    """One resolved command invocation; echoed into every output."""

    command: str
    seed: int = 0
    threads: int | None = None
    corpus: str | None = None
    data: str | None = None
    checkpoint: str | None = None
    embeddings: str | None = None
    lexicon: str | None = None
    out: str | None = None
    tokens: int | None = None
    val_fraction: float = 0.1
    subsample_mode: str = "linear"
    only: list | None = None
    overrides: dict = field(default_factory=dict)

    def model_config(self):
        from .layers import ConfigError
        from .model import ModelConfig

        try:
            return ModelConfig(seed=self.seed).with_overrides(**self.overrides)
        except (ConfigError, ValueError, TypeError) as exc:
            raise UsageError(f"bad configuration: {exc}") from exc

    def echo(self) -> dict:
        from .rng import GENERATOR_NAME

        run = {k: v for k, v in vars(self).items()
               if v is not None and k != "overrides"}
        return {
            "run": run,
            "generator": GENERATOR_NAME,
            "model": self.model_config().to_dict(),
        }


def run_root() -> Path:
    return Path(os.environ.get(RUN_DIR_ENV, "."))


def _out_dir(cfg: RunConfig) -> Path:
    path = run_root() / (cfg.out or cfg.command)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# preprocess

def _batch_arrays(batches) -> dict:
    import dataclasses

    arrays = {}
    for i, batch in enumerate(batches):
        for f in dataclasses.fields(batch):
            arrays[f"batch.{i}.{f.name}"] = getattr(batch, f.name)
    return arrays


def cmd_preprocess(cfg: RunConfig) -> int:
    from .batching import assemble_batches, greedy_k_partition
    from .corpus import (
        CorpusFormatError,
        load_embedding_table,
        load_sentiment_lexicon,
        prepare_corpus,
        read_corpus,
    )
    from .container import save_container

    model_cfg = cfg.model_config()
    try:
        pairs = read_corpus(cfg.corpus)
        table = (load_embedding_table(cfg.embeddings, model_cfg.inject_dim)
                 if cfg.embeddings else None)
        lexicon = (load_sentiment_lexicon(cfg.lexicon)
                   if cfg.lexicon else None)
    except (OSError, CorpusFormatError) as exc:
        raise UsageError(str(exc)) from exc
    if not pairs:
        raise UsageError(f"{cfg.corpus}: corpus is empty")

    docs, tables = prepare_corpus(pairs, embedding_table=table,
                                  sentiment=lexicon,
                                  embedding_dim=model_cfg.inject_dim,
                                  subsample_mode=cfg.subsample_mode,
                                  seed=cfg.seed)
    k = max(1, math.ceil(len(docs) / model_cfg.batch_size))
    part = greedy_k_partition([d.n_chars for d in docs], k)
    batches = assemble_batches(docs, part, tables)

    loads = [int(b.n_chars) for b in batches]
    summary = {
        "n_documents": len(docs),
        "n_tokens": int(sum(len(d.tokens) for d in docs)),
        "n_chars": int(sum(d.n_chars for d in docs)),
        "vocab_size": len(tables.vocabulary.tokens),
        "n_batches": len(batches),
        "documents_per_batch": [int(b.n_docs) for b in batches],
        "char_load": {
            "min": min(loads),
            "max": max(loads),
            "mean": sum(loads) / len(loads),
            "max_over_mean": max(loads) / (sum(loads) / len(loads)),
        },
    }
    out = _out_dir(cfg)
    path = out / "preprocessed.ctn"
    meta = {
        "kind": PREPROCESSED_KIND,
        "version": PREPROCESSED_VERSION,
        "config": cfg.echo(),
        "summary": summary,
        "documents": [[int(label), text] for label, text in pairs],
        "corpus": tables.to_state(),
    }
    arrays = {"embeddings": tables.embeddings}
    arrays.update(_batch_arrays(batches))
    save_container(path, meta, arrays)
    _emit({"config": cfg.echo(), "summary": summary, "output": str(path)})
    return 0


# --------------------------------------------------------------------------
# graph-stats

def cmd_graph_stats(cfg: RunConfig) -> int:
    from .graphgen import generate_graph
    from .graphstats import analyze
    from .synthetic import make_token_batch

    if cfg.tokens is None or cfg.tokens < 2:
        raise UsageError("graph-stats needs --tokens >= 2")
    model_cfg = cfg.model_config()
    batch = make_token_batch([cfg.tokens], seed=cfg.seed)
    t0 = time.perf_counter()
    # topology is reported for the raw generated graph, before
    # attention-guided sparsification
    edges = generate_graph(batch, model_cfg.graph, salt=0, subsample=False)
    report = analyze(edges, (0, cfg.tokens))
    wall = time.perf_counter() - t0
    _emit({"config": cfg.echo(), "report": report.to_dict(),
           "wall_time_s": wall})
    return 0


# --------------------------------------------------------------------------
# train / eval

def _load_preprocessed(cfg: RunConfig):
    from .container import ContainerFormatError, load_container
    from .corpus import CorpusTables, annotate_documents, build_document

    if not cfg.data:
        raise UsageError("train needs --data (output of preprocess)")
    try:
        meta, arrays = load_container(cfg.data)
    except (OSError, ContainerFormatError) as exc:
        raise UsageError(f"cannot load {cfg.data}: {exc}") from exc
    if meta.get("kind") != PREPROCESSED_KIND:
        raise UsageError(f"{cfg.data}: not a preprocessed corpus container")
    tables = CorpusTables.from_state(meta["corpus"], arrays["embeddings"])
    docs = [build_document(i, text, label, tables.vocabulary)
            for i, (label, text) in enumerate(meta["documents"])]
    annotate_documents(docs, tables)
    return docs, tables


def cmd_train(cfg: RunConfig) -> int:
    import numpy as np

    from .training import train

    docs, tables = _load_preprocessed(cfg)
    model_cfg = cfg.model_config()
    if not 0.0 <= cfg.val_fraction < 1.0:
        raise UsageError("--val-fraction must be in [0, 1)")
    order = np.random.default_rng(cfg.seed).permutation(len(docs))
    n_val = int(round(cfg.val_fraction * len(docs)))
    val_docs = [docs[i] for i in order[:n_val]]
    train_docs = [docs[i] for i in order[n_val:]]
    if not train_docs:
        raise UsageError("validation split leaves no training documents")

    out = _out_dir(cfg)
    ckpt = out / "checkpoint.ctn"
    report, _ = train(train_docs, val_docs or train_docs, tables, model_cfg,
                      checkpoint_path=ckpt)

    val_path = out / "val.jsonl"
    with open(val_path, "w", encoding="utf-8") as fh:
        for doc in val_docs:
            fh.write(json.dumps({"label": doc.label, "text": doc.text}) + "\n")
    payload = {"config": cfg.echo(), "report": json.loads(report.to_json()),
               "checkpoint": str(ckpt), "validation_corpus": str(val_path)}
    (out / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit(payload)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    from .container import ContainerFormatError
    from .corpus import CorpusFormatError, build_document, read_corpus
    from .training import evaluate

    if not cfg.checkpoint:
        raise UsageError("eval needs --checkpoint")
    if not Path(cfg.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {cfg.checkpoint}")
    try:
        pairs = read_corpus(cfg.corpus)
        docs = [build_document(i, text, label)
                for i, (label, text) in enumerate(pairs)]
        report = evaluate(docs, cfg.checkpoint)
    except (OSError, CorpusFormatError, ContainerFormatError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    _emit({"config": cfg.echo(), "report": json.loads(report.to_json())})
    return 0


# --------------------------------------------------------------------------
# gradcheck / accept

def cmd_gradcheck(cfg: RunConfig) -> int:
    from .gradcheck import run_suite

    print("config: " + json.dumps(cfg.echo(), sort_keys=True))
    suite = run_suite()
    for row in suite["layers"]:
        print(f"layer {row['layer']}: max rel err {row['max_rel_err']:.3e}")
    print(f"end-to-end: max rel err {suite['end_to_end']:.3e}")
    verdict = "PASS" if suite["passed"] else "FAIL"
    print(f"gradcheck {verdict} (tolerance {suite['layer_tolerance']:.0e} "
          f"per layer, {suite['end_to_end_tolerance']:.0e} end-to-end, "
          f"{suite['seconds']:.1f}s)")
    return 0 if suite["passed"] else 1


def cmd_accept(cfg: RunConfig) -> int:
    from .acceptance import run_criteria

    print("config: " + json.dumps(cfg.echo(), sort_keys=True))
    results = run_criteria(only=cfg.only)
    for res in results:
        verdict = "PASS" if res["passed"] else "FAIL"
        print(f"criterion {res['number']:2d} {res['name']}: {verdict} "
              f"({res['detail']}; {res['seconds']:.1f}s)")
    out = _out_dir(cfg)
    payload = {"config": cfg.echo(), "criteria": results,
               "passed": all(r["passed"] for r in results)}
    (out / "acceptance.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    print("acceptance " + ("PASS" if payload["passed"] else "FAIL"))
    return 0 if payload["passed"] else 1


# --------------------------------------------------------------------------
# argument plumbing

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="root seed for all randomness substreams")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads")
    parser.add_argument("--config", default=None,
                        help="flat KEY=VALUE file of model/graph settings")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one model/graph setting (repeatable)")
    parser.add_argument("--out", default=None,
                        help=f"output directory under ${RUN_DIR_ENV} "
                             "(default: the command name)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textgraphnet",
        description="Graph-based text classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="corpus file -> compact batches + vocabulary tables")
    p.add_argument("--corpus", required=True,
                   help="JSONL ({'label','text'} per line) or 2-column CSV")
    p.add_argument("--embeddings", default=None,
                   help="TSV token embeddings: token<TAB>v1 v2 ...")
    p.add_argument("--lexicon", default=None,
                   help="TSV sentiment: token<TAB>polarity<TAB>subjectivity")
    p.add_argument("--subsample-mode", default="linear",
                   choices=("linear", "sigmoid"))
    _add_common(p)

    p = sub.add_parser("graph-stats",
                       help="topology metrics of a synthetic n-token graph")
    p.add_argument("--tokens", type=int, required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train on a preprocessed corpus")
    p.add_argument("--data", required=True,
                   help="preprocessed.ctn from the preprocess command")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=None,
                   help="shorthand for --set epochs=N")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_common(p)

    p = sub.add_parser("gradcheck",
                       help="central-difference checks for every layer")
    _add_common(p)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--only", default=None,
                   help="comma-separated criterion numbers, e.g. 1,5,7")
    _add_common(p)

    return parser


def _run_config(args) -> RunConfig:
    overrides = {}
    if args.config:
        overrides.update(read_config_file(args.config))
    for item in args.sets:
        key, value = parse_kv_line(item)
        overrides[key] = value
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    only = None
    if getattr(args, "only", None) is not None:
        try:
            only = [int(v) for v in str(args.only).split(",")]
        except ValueError as exc:
            raise UsageError(f"--only expects comma-separated integers: {exc}")
    return RunConfig(
        command=args.command,
        seed=args.seed,
        threads=args.threads,
        corpus=getattr(args, "corpus", None),
        data=getattr(args, "data", None),
        checkpoint=getattr(args, "checkpoint", None),
        embeddings=getattr(args, "embeddings", None),
        lexicon=getattr(args, "lexicon", None),
        out=args.out,
        tokens=getattr(args, "tokens", None),
        val_fraction=getattr(args, "val_fraction", 0.1),
        subsample_mode=getattr(args, "subsample_mode", "linear"),
        only=only,
        overrides=overrides,
    )


HANDLERS = {
    "preprocess": cmd_preprocess,
    "graph-stats": cmd_graph_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "accept": cmd_accept,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        # must happen before numpy first loads to take effect
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = _run_config(args)
        cfg.model_config()  # validate overrides up front
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
