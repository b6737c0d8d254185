"""Instance files, vocabularies, embedding files and the synthetic cue task.

Instance files hold one JSON object per line::

    {"id": "s1", "tokens": [...], "heads": [...], "deprels": [...],
     "sent_bounds": [[1, 7], [8, 15]], "entities": [[2, 2], [10, 11]],
     "label": "sensitivity"}

Heads and spans are 1-based and inclusive; head 0 marks a sentence root.
``deprels`` is optional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import depgraph as dg
from .model import PAD, UNK, Instance
from .numerics import ContractError, Rng


class CorpusFormatError(ValueError):
    """Malformed instance or embedding file; the message names the line."""


@dataclass
class Corpus:
    instances: list[Instance]
    label_vocab: list[str]
    token_vocab: list[str] = field(default_factory=lambda: [PAD, UNK])
    negative_label: int | None = None

    def __len__(self) -> int:
        return len(self.instances)

    def label_id(self, name: str) -> int:
        return self.label_vocab.index(name)

    def subset(self, instances: Sequence[Instance]) -> Corpus:
        return replace(self, instances=list(instances))

    def by_id(self, instance_id: str) -> Instance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)


def _record_to_parts(rec: dict, where: str) -> tuple[dg.DependencyGraph, list[dg.Span], str, str]:
    try:
        tokens = [str(t) for t in rec["tokens"]]
        heads = [int(h) for h in rec["heads"]]
        deprels = rec.get("deprels")
        bounds = [tuple(int(x) for x in b) for b in rec.get("sent_bounds") or [[1, len(tokens)]]]
        spans = [tuple(int(x) for x in e) for e in rec["entities"]]
        label = str(rec["label"])
        inst_id = str(rec.get("id", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"{where}: malformed record ({exc!r})") from None
    if any(len(b) != 2 for b in bounds) or any(len(s) != 2 for s in spans):
        raise CorpusFormatError(f"{where}: bounds and entities must be [start, end] pairs")
    g = dg.DependencyGraph(tokens, heads, None if deprels is None else [str(r) for r in deprels], bounds)
    try:
        g.validate()
    except dg.StructureError as exc:
        raise dg.StructureError(f"{where}: {exc}") from None
    return g, spans, label, inst_id


def build_corpus(
    parts: Iterable[tuple[dg.DependencyGraph, Sequence[dg.Span], str, str]],
    negative_label: str | None = None,
    extra_labels: Iterable[str] = (),
) -> Corpus:
    """Assemble a corpus with sorted label and token vocabularies (PAD, UNK first)."""
    parts = list(parts)
    labels = sorted({p[2] for p in parts} | set(extra_labels))
    tokens = sorted({t for p in parts for t in p[0].tokens} - {PAD, UNK})
    label_index = {name: i for i, name in enumerate(labels)}
    instances = []
    for g, spans, label, inst_id in parts:
        inst = Instance(g, tuple(spans), label_index[label], inst_id)
        inst.validate(len(labels))
        instances.append(inst)
    neg = label_index.get(negative_label) if negative_label is not None else None
    return Corpus(instances, labels, [PAD, UNK] + tokens, neg)


def read_corpus(path, negative_label: str | None = None) -> Corpus:
    parts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise CorpusFormatError(f"{where}: expected a JSON object")
            parts.append(_record_to_parts(rec, where))
    try:
        return build_corpus(parts, negative_label)
    except ContractError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from None


def instance_record(inst: Instance, labels: Sequence[str]) -> dict:
    g = inst.graph
    rec = {
        "id": inst.id,
        "tokens": list(g.tokens),
        "heads": list(g.heads),
        "sent_bounds": [list(b) for b in g.sentence_bounds],
        "entities": [list(s) for s in inst.entity_spans],
        "label": labels[inst.label],
    }
    if g.deprels is not None:
        rec["deprels"] = list(g.deprels)
    return rec


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in corpus.instances:
            fh.write(json.dumps(instance_record(inst, corpus.label_vocab), ensure_ascii=False) + "\n")


def load_embeddings(path, vocab: Sequence[str], rng: Rng) -> np.ndarray:
    """Embedding table aligned to ``vocab`` from a ``token v1 ... vk`` text file.

    Tokens missing from the file get uniform(-0.1, 0.1) rows; PAD and UNK are zero.
    """
    index = {tok: i for i, tok in enumerate(vocab)}
    found: dict[int, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            try:
                vec = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = vec.size
                if dim == 0:
                    raise CorpusFormatError(f"{path}:{lineno}: empty vector")
            elif vec.size != dim:
                raise CorpusFormatError(f"{path}:{lineno}: dimension {vec.size}, expected {dim}")
            i = index.get(fields[0])
            if i is not None and i not in found:
                found[i] = vec
    if dim is None:
        raise CorpusFormatError(f"{path}: no vectors")
    table = rng.uniform(-0.1, 0.1, (len(vocab), dim))
    for i, vec in found.items():
        table[i] = vec
    for special in (PAD, UNK):
        if special in index:
            table[index[special]] = 0.0
    return table


@dataclass(frozen=True)
class SyntheticSpec:
    """A seeded tree task whose label is carried only by one cue token.

    The cue sits at exactly ``off_path_distance`` hops from the union of
    entity-to-entity paths, so hard pruning with K below that distance never
    sees it.
    """

    n_instances: int = 200
    n_labels: int = 5
    min_length: int = 8
    max_length: int = 14
    off_path_distance: int = 0
    n_entities: int = 2
    n_fillers: int = 40
    seed: int = 0

    def validate(self) -> None:
        d = self.off_path_distance
        if d < 0:
            raise ContractError("off_path_distance must be >= 0")
        if self.n_labels < 2 or self.n_instances < 1 or self.n_fillers < 1:
            raise ContractError("need n_labels >= 2, n_instances >= 1, n_fillers >= 1")
        if self.n_entities not in (2, 3):
            raise ContractError("n_entities must be 2 or 3")
        if self.max_length < self.min_length:
            raise ContractError("max_length < min_length")
        need = self.n_entities + 1 + (d - 1 if d else 0)
        if self.min_length < need:
            raise ContractError(
                f"sentence length {self.min_length} too small for off_path_distance={d} "
                f"with {self.n_entities} entities (need >= {need})"
            )


def cue_token(k: int) -> str:
    return f"cue{k:02d}"


def label_name(k: int) -> str:
    return f"rel{k:02d}"


def prufer_tree(seq: Sequence[int], n: int) -> list[tuple[int, int]]:
    """Edges of the labelled tree on nodes 0..n-1 encoded by a Prüfer sequence."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = next(u for u in range(n) if degree[u] == 1)
        edges.append((leaf, v))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = [x for x in range(n) if degree[x] == 1]
    edges.append((u, w))
    return edges


def _path_union(adj: list[list[int]], nodes: Sequence[int]) -> set[int]:
    def path(a, b):
        prev = {a: None}
        queue = [a]
        for u in queue:
            for v in adj[u]:
                if v not in prev:
                    prev[v] = u
                    queue.append(v)
        out = [b]
        while out[-1] != a:
            out.append(prev[out[-1]])
        return out

    union = set(nodes)
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            union.update(path(nodes[i], nodes[j]))
    return union


def _synthetic_instance(spec: SyntheticSpec, rng: Rng, index: int):
    d = spec.off_path_distance
    n = int(rng.integers(spec.min_length, spec.max_length + 1))
    base = n - d
    label = int(rng.integers(0, spec.n_labels))
    for _ in range(1000):
        seq = [int(v) for v in rng.integers(0, base, size=max(base - 2, 0))]
        edges = prufer_tree(seq, base)
        adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        ents = [int(v) for v in rng.choice(base, size=spec.n_entities, replace=False)]
        union = _path_union(adj, ents)
        if d == 0:
            candidates = sorted(union - set(ents))
            if not candidates:
                continue
            cue = candidates[int(rng.integers(0, len(candidates)))]
        else:
            anchors = sorted(union)
            prev = anchors[int(rng.integers(0, len(anchors)))]
            for node in range(base, n):
                adj[prev].append(node)
                adj[node].append(prev)
                prev = node
            cue = n - 1
        break
    else:
        raise ContractError("could not place the cue token; increase sentence length")

    words = [f"w{int(v):02d}" for v in rng.integers(0, spec.n_fillers, size=n)]
    for e in ents:
        words[e] = f"ent{int(rng.integers(0, 10))}"
    words[cue] = cue_token(label)

    root = int(rng.integers(0, n))
    parent = [-1] * n
    parent[root] = root
    queue = [root]
    for u in queue:
        for v in adj[u]:
            if parent[v] < 0:
                parent[v] = u
                queue.append(v)
    pos = [int(p) + 1 for p in rng.permutation(n)]
    tokens = [""] * n
    heads = [0] * n
    for node in range(n):
        tokens[pos[node] - 1] = words[node]
        heads[pos[node] - 1] = 0 if node == root else pos[parent[node]]
    spans = sorted((pos[e], pos[e]) for e in ents)
    g = dg.DependencyGraph(tokens, heads, None, [(1, n)])
    return g, spans, label_name(label), f"syn{index:05d}"


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    spec.validate()
    rng = Rng(spec.seed).derive("synthetic")
    parts = [_synthetic_instance(spec, rng, i) for i in range(spec.n_instances)]
    return build_corpus(parts, extra_labels=[label_name(k) for k in range(spec.n_labels)])


def parse_synthetic(text: str, seed: int | None = None) -> SyntheticSpec:
    """``"default"`` or comma-separated ``key=value`` overrides of :class:`SyntheticSpec`."""
    spec = SyntheticSpec() if seed is None else SyntheticSpec(seed=seed)
    text = text.strip()
    if text in ("", "default"):
        return spec
    aliases = {"n": "n_instances", "labels": "n_labels", "distance": "off_path_distance",
               "dist": "off_path_distance", "entities": "n_entities"}
    updates = {}
    for item in text.split(","):
        if "=" not in item:
            raise ContractError(f"bad synthetic setting {item!r}; expected key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        key = aliases.get(key, key)
        if key not in SyntheticSpec.__dataclass_fields__:
            raise ContractError(f"unknown synthetic setting {key!r}")
        updates[key] = int(value)
    return replace(spec, **updates)


def split(corpus: Corpus, fractions: Sequence[float], seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded shuffle, then contiguous train/dev/test slices."""
    if not corpus.instances:
        raise ContractError("cannot split an empty corpus")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ContractError(f"fractions {fractions} must be three non-negative numbers summing to 1")
    n = len(corpus)
    order = Rng(seed).derive("split").permutation(n)
    cut1 = int(round(fractions[0] * n))
    cut2 = int(round((fractions[0] + fractions[1]) * n))
    pick = lambda idx: corpus.subset([corpus.instances[i] for i in idx])
    return pick(order[:cut1]), pick(order[cut1:cut2]), pick(order[cut2:])


def align_labels(corpus: Corpus, labels: Sequence[str], negative_label: str | None = None) -> Corpus:
    """Re-express label ids against ``labels`` (e.g. a checkpoint's label list)."""
    index = {name: i for i, name in enumerate(labels)}
    missing = sorted(set(corpus.label_vocab) - set(index))
    if missing:
        raise ContractError(f"labels {missing} are not in the target label list")
    instances = [replace(inst, label=index[corpus.label_vocab[inst.label]]) for inst in corpus.instances]
    neg = index.get(negative_label) if negative_label is not None else None
    return replace(corpus, instances=instances, label_vocab=list(labels), negative_label=neg)


def tacred_record(raw: dict) -> dict:
    """Map one record of the TACRED JSON release onto this package's instance schema.

    TACRED positions are 0-based and inclusive; ``stanford_head`` is already
    1-based with 0 for the root.  Spans are listed subject first, but the
    model pools entities in token order.  Only the field mapping lives here;
    obtaining the licensed data is up to the user.
    """
    n = len(raw["token"])
    subj = [raw["subj_start"] + 1, raw["subj_end"] + 1]
    obj = [raw["obj_start"] + 1, raw["obj_end"] + 1]
    return {
        "id": str(raw["id"]),
        "tokens": list(raw["token"]),
        "heads": [int(h) for h in raw["stanford_head"]],
        "deprels": list(raw["stanford_deprel"]),
        "sent_bounds": [[1, n]],
        "entities": [subj, obj],
        "label": raw["relation"],
    }
