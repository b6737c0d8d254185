"""Relation-extraction head around the block encoder.

The encoder output is max-pooled twice: over non-entity tokens for a sentence
vector and over each entity span for one vector per entity.  Their
concatenation goes through a two-layer FFNN and a linear classifier.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import depgraph as dg
from . import layers
from . import numerics as nx
from .numerics import ContractError, ShapeError, Tensor

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"


@dataclass(frozen=True)
class Instance:
    graph: dg.DependencyGraph
    entity_spans: tuple[dg.Span, ...]
    label: int
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entity_spans", tuple((int(a), int(b)) for a, b in self.entity_spans))

    def validate(self, n_labels: int | None = None) -> None:
        n = self.graph.n
        if len(self.entity_spans) not in (2, 3):
            raise ContractError(f"instance {self.id!r}: {len(self.entity_spans)} entities, expected 2 or 3")
        taken: set[int] = set()
        for s, e in self.entity_spans:
            if not 1 <= s <= e <= n:
                raise ContractError(f"instance {self.id!r}: span ({s}, {e}) outside 1..{n}")
            span = set(range(s, e + 1))
            if span & taken:
                raise ContractError(f"instance {self.id!r}: overlapping entity spans")
            taken |= span
        if n_labels is not None and not 0 <= self.label < n_labels:
            raise ContractError(f"instance {self.id!r}: label id {self.label} outside 0..{n_labels - 1}")

    def entity_tokens(self) -> set[int]:
        return {t for s, e in self.entity_spans for t in range(s, e + 1)}


@dataclass(frozen=True)
class ModelConfig:
    n_heads: int = 3
    n_blocks: int = 2
    sublayers: tuple[int, ...] = (2, 4)
    d: int = 300
    d_word: int = 300
    n_entities: int = 2
    n_labels: int = 2
    pruning: dg.PruneMode = dg.FULL
    use_attention: bool = True
    dropout_p: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sublayers", tuple(int(s) for s in self.sublayers))
        object.__setattr__(self, "pruning", dg.parse_prune_mode(self.pruning))

    def validate(self) -> None:
        for name in ("n_heads", "n_blocks", "d", "d_word"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if not self.sublayers or any(L < 1 for L in self.sublayers):
            raise ContractError(f"sub-layer counts must be >= 1, got {self.sublayers}")
        for L in self.sublayers:
            if self.d % L:
                raise ContractError(f"d={self.d} is not divisible by sub-layer count L={L}")
        if self.n_entities not in (2, 3):
            raise ContractError(f"entity count must be 2 or 3, got {self.n_entities}")
        if self.n_labels < 2:
            raise ContractError("need at least 2 labels")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def attention_from(self) -> int:
        """First block that uses attention; past the last block when attention is off."""
        return 2 if self.use_attention else self.n_blocks + 1


def gcn_baseline_config(cfg: ModelConfig, pruning: dg.PruneMode = 0) -> ModelConfig:
    """Hard-pruned GCN: one head, one sub-layer, no attention."""
    return replace(cfg, n_heads=1, sublayers=(1,), use_attention=False, pruning=pruning)


@dataclass
class AggcnModel:
    config: ModelConfig
    vocab: list[str]
    labels: list[str]
    embeddings: Tensor
    input_w: Tensor
    input_b: Tensor
    blocks: list[layers.BlockParams]
    ffnn_w1: Tensor
    ffnn_b1: Tensor
    ffnn_w2: Tensor
    ffnn_b2: Tensor
    cls_w: Tensor
    cls_b: Tensor
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {tok: i for i, tok in enumerate(self.vocab)}

    def token_id(self, token: str) -> int:
        return self._index.get(token, self._index.get(UNK, 1))

    def parameters(self) -> list[Tensor]:
        """All learnable tensors in the fixed checkpoint order."""
        out = [self.embeddings, self.input_w, self.input_b]
        for blk in self.blocks:
            out += blk.parameters()
        return out + [self.ffnn_w1, self.ffnn_b1, self.ffnn_w2, self.ffnn_b2, self.cls_w, self.cls_b]


def init_model(
    config: ModelConfig,
    vocab: Sequence[str],
    labels: Sequence[str],
    rng: nx.Rng,
    embeddings: np.ndarray | None = None,
) -> AggcnModel:
    """Fan-in scaled uniform weights (variance ``1 / fan_in``), zero biases.

    Without ``embeddings`` the word table is uniform(-0.1, 0.1) with zero
    rows for the padding and unknown tokens.
    """
    config.validate()
    if len(labels) != config.n_labels:
        raise ContractError(f"{len(labels)} labels but config.n_labels={config.n_labels}")
    d, dw, E = config.d, config.d_word, config.n_entities
    if embeddings is None:
        table = rng.derive("embeddings").uniform(-0.1, 0.1, (len(vocab), dw))
        for i, tok in enumerate(vocab):
            if tok in (PAD, UNK):
                table[i] = 0.0
    else:
        table = np.array(embeddings, dtype=np.float64)
        if table.shape != (len(vocab), dw):
            raise ShapeError(f"embedding table {table.shape} != ({len(vocab)}, {dw})")
    wr = rng.derive("weights")

    def weight(shape, name):
        bound = layers.init_bound(shape[1])
        return Tensor(wr.uniform(-bound, bound, shape), requires_grad=True, name=name)

    def zeros(k, name):
        return Tensor(np.zeros(k), requires_grad=True, name=name)

    input_w = weight((d, dw), "input.w")
    blocks = [layers.init_block(wr, d, config.n_heads, config.sublayers, f"block{m + 1}")
              for m in range(config.n_blocks)]
    return AggcnModel(
        config=config,
        vocab=list(vocab),
        labels=list(labels),
        embeddings=Tensor(table, requires_grad=True, name="embeddings"),
        input_w=input_w,
        input_b=zeros(d, "input.b"),
        blocks=blocks,
        ffnn_w1=weight((d, (1 + E) * d), "ffnn.w1"),
        ffnn_b1=zeros(d, "ffnn.b1"),
        ffnn_w2=weight((d, d), "ffnn.w2"),
        ffnn_b2=zeros(d, "ffnn.b2"),
        cls_w=weight((config.n_labels, d), "classifier.w"),
        cls_b=zeros(config.n_labels, "classifier.b"),
    )


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nx.linear(x, w, b)


def lookup_embed(tokens: Sequence[str], model: AggcnModel) -> Tensor:
    """Word vectors for ``tokens`` projected to the block width, shape ``[n, d]``.

    A contextual encoder would slot in on this output.
    """
    ids = [model.token_id(t) for t in tokens]
    return _affine(nx.take_rows(model.embeddings, ids), model.input_w, model.input_b)


def sentence_repr(h: Tensor, entity_spans: Sequence[dg.Span]) -> Tensor:
    """Max over non-entity token rows, as a ``[1, d]`` row."""
    ent = {t for s, e in entity_spans for t in range(s, e + 1)}
    rows = [i - 1 for i in range(1, h.shape[0] + 1) if i not in ent]
    if not rows:
        log.debug("every token is an entity token; pooling the sentence over all tokens")
        rows = list(range(h.shape[0]))
    return nx.max_rows(h, rows)


def entity_repr(h: Tensor, span: dg.Span) -> Tensor:
    """Max over the span's rows, as a ``[1, d]`` row."""
    start, end = span
    if end < start:
        raise ContractError(f"empty entity span {span}")
    return nx.max_rows(h, list(range(start - 1, end)))


@lru_cache(maxsize=65536)
def _prepared(graph: dg.DependencyGraph, spans: tuple[dg.Span, ...], mode) -> tuple:
    linked = dg.link_sentence_roots(graph)
    if mode == dg.FULL:
        g, new_spans = linked, spans
    else:
        keep = dg.prune_tree(linked, spans, mode)
        g, index = dg.restrict_graph(linked, keep, spans)
        new_spans = tuple(dg.remap_spans(spans, index))
    adj = dg.build_adjacency(g)
    adj.setflags(write=False)
    return g.tokens, new_spans, adj


def prepare_inputs(instance: Instance, mode: dg.PruneMode) -> tuple[tuple[str, ...], tuple[dg.Span, ...], np.ndarray]:
    """Tokens, entity spans and hard adjacency after root linking and optional pruning.

    Spans come back sorted by position, which fixes the pooled concatenation order.
    """
    return _prepared(instance.graph, tuple(sorted(instance.entity_spans)), dg.parse_prune_mode(mode))


def make_dropout(p: float, rng: nx.Rng) -> Callable[[Tensor], Tensor]:
    def apply(h: Tensor) -> Tensor:
        mask = (rng.random(h.shape) >= p) / (1.0 - p)
        return nx.mul(h, Tensor(mask))
    return apply


def classify(
    instance: Instance,
    model: AggcnModel,
    pruning: dg.PruneMode | None = None,
    record: list | None = None,
    dropout: Callable[[Tensor], Tensor] | None = None,
) -> Tensor:
    """Logits ``[1, C]`` for one instance.

    ``pruning`` defaults to the model's configured mode; hard modes restrict
    the tree to the K-neighbourhood of the entity paths before encoding.
    """
    mode = model.config.pruning if pruning is None else pruning
    tokens, spans, adj = prepare_inputs(instance, mode)
    x = lookup_embed(tokens, model)
    h = layers.encode(x, adj, model.blocks, attention_from=model.config.attention_from,
                      record=record, dropout=dropout)
    pooled = [sentence_repr(h, spans)] + [entity_repr(h, s) for s in spans]
    hidden = nx.relu(_affine(nx.concat_cols(pooled), model.ffnn_w1, model.ffnn_b1))
    final = _affine(hidden, model.ffnn_w2, model.ffnn_b2)
    return _affine(final, model.cls_w, model.cls_b)


def predict_proba(instance: Instance, model: AggcnModel, pruning: dg.PruneMode | None = None) -> np.ndarray:
    logits = classify(instance, model, pruning).data.reshape(-1)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def attention_maps(
    instance: Instance, model: AggcnModel, pruning: dg.PruneMode | None = None
) -> list[tuple[int, int, np.ndarray]]:
    """The attention matrices computed during the forward pass, as ``(block, head, matrix)``."""
    record: list = []
    classify(instance, model, pruning, record=record)
    return [(m, t, a.numpy()) for m, t, a in record]
