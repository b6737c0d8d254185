"""Dependency graphs, adjacency matrices and path-centric hard pruning.

Token indices are 1-based throughout; head 0 marks a sentence root.  Multi-
sentence instances become one tree once :func:`link_sentence_roots` joins the
roots of consecutive sentences; the join is kept in ``links`` rather than in
``heads`` so the per-sentence parse stays intact.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np

from .numerics import ContractError

FULL = "full"
PruneMode = Union[int, str]

Span = tuple[int, int]


class StructureError(ValueError):
    """Raised when head indices do not describe a valid forest of sentence trees."""


@dataclass(frozen=True)
class DependencyGraph:
    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...] | None = None
    sentence_bounds: tuple[Span, ...] = ()
    links: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.deprels is not None:
            object.__setattr__(self, "deprels", tuple(self.deprels))
        bounds = tuple((int(a), int(b)) for a, b in self.sentence_bounds) or ((1, len(self.tokens)),)
        object.__setattr__(self, "sentence_bounds", bounds)
        object.__setattr__(self, "links", tuple((int(a), int(b)) for a, b in self.links))

    @property
    def n(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        """Check lengths, head ranges, sentence partition and per-sentence tree shape."""
        n = self.n
        if n < 1:
            raise StructureError("graph has no tokens")
        if len(self.heads) != n:
            raise StructureError(f"{len(self.heads)} heads for {n} tokens")
        if self.deprels is not None and len(self.deprels) != n:
            raise StructureError(f"{len(self.deprels)} deprels for {n} tokens")
        expect = 1
        for start, end in self.sentence_bounds:
            if start != expect or end < start:
                raise StructureError(f"sentence bounds {self.sentence_bounds} do not partition 1..{n}")
            expect = end + 1
        if expect != n + 1:
            raise StructureError(f"sentence bounds {self.sentence_bounds} do not partition 1..{n}")
        for i, h in enumerate(self.heads, start=1):
            if not 0 <= h <= n:
                raise StructureError(f"head {h} of token {i} out of range 0..{n}")
        for start, end in self.sentence_bounds:
            roots = [i for i in range(start, end + 1) if self.heads[i - 1] == 0]
            if len(roots) != 1:
                raise StructureError(f"sentence {start}-{end} has {len(roots)} roots")
            for i in range(start, end + 1):
                h = self.heads[i - 1]
                if h and not start <= h <= end:
                    raise StructureError(f"token {i} has head {h} outside its sentence {start}-{end}")
            for i in range(start, end + 1):
                seen = set()
                j = i
                while j:
                    if j in seen:
                        raise StructureError(f"cycle through token {j}")
                    seen.add(j)
                    j = self.heads[j - 1]

    def sentence_roots(self) -> list[int]:
        return [next(i for i in range(s, e + 1) if self.heads[i - 1] == 0) for s, e in self.sentence_bounds]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (dependent, head) pairs, followed by root links."""
        out = [(i, h) for i, h in enumerate(self.heads, start=1) if h]
        out.extend(self.links)
        return out

    def neighbours(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n + 1)]
        for a, b in self.edges():
            nb[a].append(b)
            nb[b].append(a)
        return nb


def link_sentence_roots(g: DependencyGraph) -> DependencyGraph:
    """Join consecutive sentence roots with an undirected edge."""
    g.validate()
    roots = g.sentence_roots()
    if len(roots) == 1:
        return g
    new = tuple(zip(roots[:-1], roots[1:]))
    return replace(g, links=tuple(dict.fromkeys(g.links + new)))


def build_adjacency(g: DependencyGraph) -> np.ndarray:
    """Symmetric 0/1 matrix with self-loops and both directions of every arc."""
    a = np.eye(g.n)
    for i, j in g.edges():
        a[i - 1, j - 1] = 1.0
        a[j - 1, i - 1] = 1.0
    return a


class RootedTree:
    """Parent/depth tables of a connected graph, rooted at its first sentence root."""

    def __init__(self, g: DependencyGraph):
        self.graph = g
        nb = g.neighbours()
        roots = [i for i, h in enumerate(g.heads, start=1) if h == 0]
        self.root = roots[0] if roots else 1
        self.parent = [0] * (g.n + 1)
        self.depth = [-1] * (g.n + 1)
        self.depth[self.root] = 0
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for v in nb[u]:
                if self.depth[v] < 0:
                    self.depth[v] = self.depth[u] + 1
                    self.parent[v] = u
                    queue.append(v)
        if any(d < 0 for d in self.depth[1:]):
            raise StructureError("graph is not connected; link sentence roots first")
        self.neighbours = nb

    def lca2(self, a: int, b: int) -> int:
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
        while a != b:
            a, b = self.parent[a], self.parent[b]
        return a

    def lca(self, nodes: Iterable[int]) -> int:
        nodes = list(nodes)
        if not nodes:
            raise ContractError("lca of an empty node set")
        acc = nodes[0]
        for v in nodes[1:]:
            acc = self.lca2(acc, v)
        return acc

    def path(self, a: int, b: int) -> list[int]:
        top = self.lca2(a, b)
        up = [a]
        while up[-1] != top:
            up.append(self.parent[up[-1]])
        down = [b]
        while down[-1] != top:
            down.append(self.parent[down[-1]])
        return up + down[-2::-1]

    def distances_from(self, sources: Iterable[int]) -> list[int]:
        """Multi-source BFS distance to every node (index 0 unused)."""
        dist = [-1] * (self.graph.n + 1)
        queue = deque()
        for s in sources:
            if dist[s] < 0:
                dist[s] = 0
                queue.append(s)
        while queue:
            u = queue.popleft()
            for v in self.neighbours[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist


def _check_index(g: DependencyGraph, i: int) -> None:
    if not 1 <= i <= g.n:
        raise ContractError(f"token index {i} outside 1..{g.n}")


def lca(g: DependencyGraph, nodes: Iterable[int]) -> int:
    """Deepest common ancestor (inclusive) of ``nodes``, folding pairwise LCA."""
    nodes = list(nodes)
    for v in nodes:
        _check_index(g, v)
    return RootedTree(g).lca(nodes)


def dependency_path(g: DependencyGraph, a: int, b: int) -> list[int]:
    """The unique tree path from ``a`` to ``b``, endpoints included."""
    _check_index(g, a)
    _check_index(g, b)
    return RootedTree(g).path(a, b)


def span_head(g: DependencyGraph, span: Span) -> int:
    """The span token whose head lies outside the span (leftmost on ties)."""
    start, end = span
    inside = range(start, end + 1)
    parent = RootedTree(g).parent
    for i in inside:
        if not start <= parent[i] <= end:
            return i
    return start


def parse_prune_mode(mode) -> PruneMode:
    """Accept ``"full"``, ``"kN"``, ``"N"`` or an int; return ``FULL`` or a non-negative int."""
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        k = int(mode)
    else:
        text = str(mode).strip().lower()
        if text == FULL:
            return FULL
        if text.startswith("k"):
            text = text[1:]
        try:
            k = int(text)
        except ValueError:
            raise ContractError(f"invalid pruning mode {mode!r}") from None
    if k < 0:
        raise ContractError(f"pruning distance must be >= 0, got {k}")
    return k


def prune_tree(g: DependencyGraph, entities: Sequence[Span], k: PruneMode) -> set[int]:
    """Tokens within tree distance ``k`` of the union of entity-to-entity paths.

    Paths run between entity head tokens; entity span tokens are always kept.
    ``k == FULL`` keeps every token.
    """
    if not entities:
        raise ContractError("prune_tree needs at least one entity")
    k = parse_prune_mode(k)
    if k == FULL:
        return set(range(1, g.n + 1))
    tree = RootedTree(g)
    heads = [span_head(g, s) for s in entities]
    base = set(heads)
    for i in range(len(heads)):
        for j in range(i + 1, len(heads)):
            base.update(tree.path(heads[i], heads[j]))
    dist = tree.distances_from(sorted(base))
    keep = {v for v in range(1, g.n + 1) if dist[v] <= k}
    for start, end in entities:
        keep.update(range(start, end + 1))
    return keep


def restrict_graph(
    g: DependencyGraph, keep: Iterable[int], entities: Sequence[Span] = ()
) -> tuple[DependencyGraph, dict[int, int]]:
    """Induced subgraph on ``keep``, renumbered compactly in token order.

    Returns the subgraph and the old-to-new index map.  Kept tokens whose head
    was dropped become roots, so the result may be a forest with a single
    nominal sentence; it is meant for adjacency construction, not re-parsing.
    """
    keep = sorted(set(keep))
    if not keep:
        raise ContractError("restrict_graph needs a nonempty keep set")
    index = {old: new for new, old in enumerate(keep, start=1)}
    for start, end in entities:
        for t in range(start, end + 1):
            if t not in index:
                raise ContractError(f"entity token {t} dropped by keep set")
    heads = [index.get(g.heads[old - 1], 0) for old in keep]
    deprels = None if g.deprels is None else tuple(g.deprels[old - 1] for old in keep)
    links = tuple((index[a], index[b]) for a, b in g.links if a in index and b in index)
    sub = DependencyGraph(
        tokens=tuple(g.tokens[old - 1] for old in keep),
        heads=heads,
        deprels=deprels,
        sentence_bounds=((1, len(keep)),),
        links=links,
    )
    return sub, index


def remap_spans(spans: Sequence[Span], index: dict[int, int]) -> list[Span]:
    return [(index[s], index[e]) for s, e in spans]
