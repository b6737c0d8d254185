"""Command line: ``aggcn {train,eval,prune,attention,synthetic}``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure
(training divergence).  Every output is a deterministic function of the
flags, the input files and ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint, data
from . import depgraph as dg
from .model import ModelConfig, attention_maps, init_model, prepare_inputs
from .numerics import ContractError, Rng
from .train import TrainConfig, TrainingDiverged, evaluate, restore, train

log = logging.getLogger("aggcn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


# setting name -> value parser; config-file keys and flag dests share these names
SETTINGS = {
    "n_heads": int, "blocks": int, "L1": int, "L2": int, "d": int, "d_word": int,
    "pruning": str, "seed": int, "epochs": int, "lr": float, "optimizer": str,
    "momentum": float, "grad_clip": float, "batch_size": int, "dropout": float,
    "eval_every": int, "negative_label": str, "synthetic": str, "train": str,
    "dev": str, "test": str, "embeddings": str, "out": str, "checkpoint": str,
    "instance": str, "attention": str,
}

DEFAULTS = {
    "n_heads": 3, "blocks": 2, "L1": 2, "L2": 4, "d": 300, "d_word": 300,
    "pruning": "full", "seed": 0, "epochs": 100, "lr": 0.02, "optimizer": "sgd",
    "momentum": 0.9, "grad_clip": 5.0, "batch_size": 1, "dropout": 0.0, "eval_every": 1,
    "attention": "on",
}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    paths: dict = field(default_factory=dict)
    negative_label: str | None = None
    synthetic: str | None = None


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment.  Dashes in keys become underscores."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = value
    return out


def merged_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    typed = {}
    for key, value in settings.items():
        try:
            typed[key] = None if value is None else SETTINGS[key](value)
        except ValueError:
            raise UsageError(f"invalid value {value!r} for {key}") from None
    return typed


def build_run_config(s: dict, n_labels: int = 2, n_entities: int = 2) -> RunConfig:
    sublayers = tuple(L for L in (s["L1"], s["L2"]) if L)
    try:
        pruning = dg.parse_prune_mode(s["pruning"])
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    if s["attention"] not in ("on", "off"):
        raise UsageError("--attention must be on or off")
    mc = ModelConfig(
        n_heads=s["n_heads"], n_blocks=s["blocks"], sublayers=sublayers, d=s["d"],
        d_word=s["d_word"], n_entities=n_entities, n_labels=n_labels, pruning=pruning,
        use_attention=s["attention"] == "on", dropout_p=s["dropout"],
    )
    tc = TrainConfig(
        epochs=s["epochs"], learning_rate=s["lr"], optimizer=s["optimizer"],
        momentum=s["momentum"], grad_clip_norm=s["grad_clip"] if s["grad_clip"] > 0 else None,
        batch_size=s["batch_size"], seed=s["seed"], dropout_p=s["dropout"],
        eval_every=s["eval_every"],
    )
    try:
        mc.validate()
        tc.validate()
    except ContractError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    paths = {k: s.get(k) for k in ("train", "dev", "test", "embeddings", "out", "checkpoint")}
    return RunConfig(mc, tc, paths, s.get("negative_label"), s.get("synthetic"))


def _read(path, negative_label):
    if not path:
        return None
    try:
        return data.read_corpus(path, negative_label)
    except OSError as exc:
        raise UsageError(f"cannot read corpus {path}: {exc}") from None
    except (data.CorpusFormatError, dg.StructureError) as exc:
        raise UsageError(str(exc)) from None


def load_corpora(s: dict) -> tuple[data.Corpus | None, data.Corpus | None, data.Corpus | None]:
    """Train/dev/test corpora from files, or a seeded synthetic split (80/10/10)."""
    if s.get("synthetic"):
        try:
            spec = data.parse_synthetic(s["synthetic"], seed=s["seed"])
            corpus = data.generate_synthetic(spec)
        except (ContractError, ValueError) as exc:
            raise UsageError(f"bad --synthetic spec: {exc}") from None
        return data.split(corpus, (0.8, 0.1, 0.1), s["seed"])
    neg = s.get("negative_label")
    corpora = [_read(s.get(k), neg) for k in ("train", "dev", "test")]
    present = [c for c in corpora if c is not None]
    if not present:
        return None, None, None
    labels = sorted({name for c in present for name in c.label_vocab})
    aligned = [None if c is None else data.align_labels(c, labels, neg) for c in corpora]
    return tuple(aligned)


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    s = merged_settings(args)
    if not s.get("out"):
        raise UsageError("--out is required")
    build_run_config(s)
    train_c, dev_c, test_c = load_corpora(s)
    if train_c is None or not train_c.instances:
        raise UsageError("no training data: give --train or --synthetic")
    n_entities = len(train_c.instances[0].entity_spans)
    if any(len(i.entity_spans) != n_entities for i in train_c.instances):
        raise UsageError("training instances disagree on the entity count")
    rng = Rng(s["seed"])
    table = None
    if s.get("embeddings"):
        try:
            table = data.load_embeddings(s["embeddings"], train_c.token_vocab, rng.derive("embedding-file"))
        except (OSError, data.CorpusFormatError) as exc:
            raise UsageError(f"embeddings: {exc}") from None
        s["d_word"] = table.shape[1]
    run = build_run_config(s, n_labels=len(train_c.label_vocab), n_entities=n_entities)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    if s.get("synthetic"):
        for name, c in (("train", train_c), ("dev", dev_c), ("test", test_c)):
            data.write_corpus(c, out / f"{name}.jsonl")

    model = init_model(run.model, train_c.token_vocab, train_c.label_vocab, rng.derive("model"), table)
    try:
        result = train(model, train_c, run.train, dev=dev_c if dev_c and dev_c.instances else None)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if result.best_params is not None:
        restore(model, result.best_params)
    settings = {k: v for k, v in sorted(s.items()) if k not in ("out", "checkpoint")}
    checkpoint.save(model, out / "checkpoint.aggcn", settings)
    (out / "history.jsonl").write_text(result.history_jsonl(), encoding="utf-8")
    metrics = []
    for name, c in (("train", train_c), ("dev", dev_c), ("test", test_c)):
        if c is not None and c.instances:
            metrics.append({"split": name, **evaluate(model, c).summary()})
    _write_jsonl(out / "metrics.jsonl", metrics)
    for rec in metrics:
        print(json.dumps(rec, sort_keys=True))
    return EXIT_OK


def _load_checkpoint(s: dict):
    path = s.get("checkpoint") or (Path(s["out"]) / "checkpoint.aggcn" if s.get("out") else None)
    if path is None:
        raise UsageError("--checkpoint is required")
    try:
        return checkpoint.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from None
    except checkpoint.CheckpointError as exc:
        raise UsageError(f"checkpoint {path}: {exc}") from None


def _eval_corpus(s: dict, model) -> data.Corpus:
    train_c, dev_c, test_c = load_corpora(s)
    corpus = test_c or dev_c or train_c
    if corpus is None or not corpus.instances:
        raise UsageError("no evaluation data: give --test (or --dev/--train/--synthetic)")
    try:
        return data.align_labels(corpus, model.labels, s.get("negative_label"))
    except ContractError as exc:
        raise UsageError(f"corpus does not match checkpoint: {exc}") from None


def cmd_eval(args) -> int:
    s = merged_settings(args)
    model, _ = _load_checkpoint(s)
    corpus = _eval_corpus(s, model)
    if any(len(i.entity_spans) != model.config.n_entities for i in corpus.instances):
        raise UsageError("corpus entity count does not match the checkpoint")
    pruning = s["pruning"] if args.pruning is not None else None
    res = evaluate(model, corpus, pruning=pruning)
    print(json.dumps(res.summary(), sort_keys=True))
    if s.get("out"):
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "confusion.csv").write_text(res.confusion_csv(), encoding="utf-8")
        _write_jsonl(out / "eval_metrics.jsonl", [{**res.summary(), "per_label": res.per_label}])
    else:
        sys.stdout.write(res.confusion_csv())
    return EXIT_OK


def cmd_prune(args) -> int:
    s = merged_settings(args)
    train_c, dev_c, test_c = load_corpora(s)
    corpus = train_c or dev_c or test_c
    if corpus is None:
        raise UsageError("no corpus: give --train/--dev/--test or --synthetic")
    try:
        if args.diff:
            k1, k2 = (dg.parse_prune_mode(k) for k in args.diff)
        else:
            k1 = dg.parse_prune_mode(s["pruning"])
            k2 = None
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    lines, fractions, monotone = [], [], 0
    for inst in corpus.instances:
        g = dg.link_sentence_roots(inst.graph)
        kept = dg.prune_tree(g, inst.entity_spans, k1)
        fractions.append(len(kept) / g.n)
        if k2 is None:
            nxt = dg.prune_tree(g, inst.entity_spans, k1 + 1) if k1 != dg.FULL else kept
            monotone += kept <= nxt
            lines.append(f"{inst.id}\t{_k_name(k1)}\t{' '.join(map(str, sorted(kept)))}")
        else:
            other = dg.prune_tree(g, inst.entity_spans, k2)
            monotone += kept <= other or other <= kept
            added = sorted(other - kept)
            removed = sorted(kept - other)
            lines.append(f"{inst.id}\t+{' '.join(map(str, added))}\t-{' '.join(map(str, removed))}")
    n = len(corpus.instances)
    for line in lines:
        print(line)
    summary = {"instances": n, "K": _k_name(k1), "mean_kept_fraction": float(np.mean(fractions)) if n else 0.0}
    if k2 is None:
        summary["monotone_next_K"] = f"{monotone}/{n}"
    else:
        summary["diff"] = [_k_name(k1), _k_name(k2)]
        summary["nested"] = f"{monotone}/{n}"
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _k_name(k) -> str:
    return "full" if k == dg.FULL else f"k{k}"


def _csv_cell(token: str) -> str:
    if any(ch in token for ch in ',"\n'):
        return '"' + token.replace('"', '""') + '"'
    return token


def cmd_attention(args) -> int:
    s = merged_settings(args)
    model, _ = _load_checkpoint(s)
    if not s.get("instance"):
        raise UsageError("--instance is required")
    corpus = _eval_corpus(s, model)
    try:
        inst = corpus.by_id(s["instance"])
    except KeyError:
        raise UsageError(f"unknown instance id {s['instance']!r}") from None
    out = Path(s.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    tokens, _, _ = prepare_inputs(inst, model.config.pruning)
    maps = attention_maps(inst, model)
    for block, head, mat in maps:
        rows = ["," + ",".join(_csv_cell(t) for t in tokens)]
        for tok, row in zip(tokens, mat):
            rows.append(_csv_cell(tok) + "," + ",".join(format(v, ".17g") for v in row))
        path = out / f"attention_block{block}_head{head}.csv"
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        print(path)
    if not maps:
        print("model has a single block or attention disabled; no attention matrices", file=sys.stderr)
    return EXIT_OK


def cmd_synthetic(args) -> int:
    s = merged_settings(args)
    if not s.get("out"):
        raise UsageError("--out is required")
    try:
        corpus = data.generate_synthetic(data.parse_synthetic(s.get("synthetic") or "default", seed=s["seed"]))
    except ContractError as exc:
        raise UsageError(f"bad --synthetic spec: {exc}") from None
    data.write_corpus(corpus, s["out"])
    print(json.dumps({"instances": len(corpus), "labels": corpus.label_vocab}))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plain-text key=value settings; flags override it")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--synthetic", help='"default" or key=value,... (n, labels, distance, entities, min_length, max_length, n_fillers)')
    p.add_argument("--seed", type=int)
    p.add_argument("--negative-label", dest="negative_label")
    p.add_argument("--pruning", help="full, k0, k1, ...")
    p.add_argument("--out")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggcn", description="Attention guided GCN relation extraction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, history and metrics")
    _add_common(p)
    p.add_argument("--embeddings")
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--L1", type=int)
    p.add_argument("--L2", type=int, help="0 drops the second dense group")
    p.add_argument("--d", type=int)
    p.add_argument("--d-word", dest="d_word", type=int)
    p.add_argument("--attention", choices=["on", "off"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["sgd", "sgd_momentum"])
    p.add_argument("--momentum", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float, help="0 disables clipping")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="show kept tokens under path-centric pruning")
    _add_common(p)
    p.add_argument("--diff", nargs=2, metavar=("K1", "K2"))
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("attention", help="export attention matrices as CSV")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--instance")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("synthetic", help="write a synthetic corpus to --out")
    _add_common(p)
    p.set_defaults(func=cmd_synthetic)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
