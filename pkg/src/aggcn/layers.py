"""Attention guided, densely connected and linear combination layers.

A block runs N branches.  Branch ``t`` takes an adjacency (the hard tree
adjacency in the first block, its own attention matrix afterwards), pushes the
block input through two densely connected groups in sequence, and the N branch
outputs are merged by one affine combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import ContractError, ShapeError, Tensor


@dataclass
class AttentionHeadParams:
    w_q: Tensor
    w_k: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k]


@dataclass
class DenseLayerParams:
    """One densely connected group: sub-layer ``l`` maps width ``d + d_hidden*(l-1)`` to ``d_hidden``."""

    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self):
        n_sub = len(self.weights)
        if n_sub == 0 or len(self.biases) != n_sub:
            raise ShapeError("dense group needs matching, nonempty weight and bias lists")
        d_hidden, d = self.weights[0].shape
        if d_hidden * n_sub != d:
            raise ShapeError(f"d_hidden * L = {d_hidden}*{n_sub} != d = {d}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (d_hidden, d + d_hidden * l) or b.shape != (d_hidden,):
                raise ShapeError(
                    f"sub-layer {l + 1}: weight {w.shape}, bias {b.shape}; "
                    f"expected ({d_hidden}, {d + d_hidden * l}) and ({d_hidden},)"
                )

    @property
    def n_sublayers(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_hidden(self) -> int:
        return self.weights[0].shape[0]

    def input_widths(self) -> list[int]:
        return [w.shape[1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class BlockParams:
    heads: list[AttentionHeadParams]
    dense_groups: list[list[DenseLayerParams]]
    w_comb: Tensor
    b_comb: Tensor

    def __post_init__(self):
        if len(self.heads) != len(self.dense_groups):
            raise ShapeError(f"{len(self.heads)} heads but {len(self.dense_groups)} dense branches")
        d = self.w_comb.shape[1]
        if self.w_comb.shape != (d * len(self.heads), d):
            raise ShapeError(f"w_comb shape {self.w_comb.shape} != ({d * len(self.heads)}, {d})")

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for head, groups in zip(self.heads, self.dense_groups):
            out += head.parameters()
            for grp in groups:
                out += grp.parameters()
        return out + [self.w_comb, self.b_comb]


def init_bound(fan_in: int) -> float:
    """Half-width of the uniform weight init; gives each weight variance ``1 / fan_in``."""
    return math.sqrt(3.0 / fan_in)


def _uniform(rng: nx.Rng, shape, fan_in: int, name: str) -> Tensor:
    bound = init_bound(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def init_dense_group(rng: nx.Rng, d: int, n_sub: int, name: str = "dense") -> DenseLayerParams:
    if n_sub < 1 or d % n_sub:
        raise ShapeError(f"d={d} is not divisible by L={n_sub}")
    dh = d // n_sub
    ws, bs = [], []
    for l in range(n_sub):
        width = d + dh * l
        ws.append(_uniform(rng, (dh, width), width, f"{name}.w{l + 1}"))
        bs.append(_zeros((dh,), f"{name}.b{l + 1}"))
    return DenseLayerParams(ws, bs)


def init_block(rng: nx.Rng, d: int, n_heads: int, sublayers: Sequence[int], name: str = "block") -> BlockParams:
    heads, groups = [], []
    for t in range(n_heads):
        heads.append(AttentionHeadParams(
            _uniform(rng, (d, d), d, f"{name}.head{t + 1}.w_q"),
            _uniform(rng, (d, d), d, f"{name}.head{t + 1}.w_k"),
        ))
        groups.append([init_dense_group(rng, d, L, f"{name}.head{t + 1}.group{g + 1}")
                       for g, L in enumerate(sublayers)])
    w_comb = _uniform(rng, (d * n_heads, d), d * n_heads, f"{name}.w_comb")
    return BlockParams(heads, groups, w_comb, _zeros((d,), f"{name}.b_comb"))


def gcn_layer(h: Tensor, a, w: Tensor, b: Tensor) -> Tensor:
    """``relu(A h W^T + b)``: each node sums weighted neighbour features."""
    a = nx.as_tensor(a)
    n = h.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"adjacency {a.shape} does not match {n} nodes")
    if w.shape[1] != h.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"gcn_layer shapes: h {h.shape}, w {w.shape}, b {b.shape}")
    return nx.relu(nx.linear(nx.matmul(a, h), w, b))


def attention_adjacency(h: Tensor, head: AttentionHeadParams) -> Tensor:
    """Row-stochastic ``softmax((h W_Q)(h W_K)^T / sqrt(d))`` over the n nodes."""
    d = h.shape[1]
    if head.w_q.shape != (d, d) or head.w_k.shape != (d, d):
        raise ShapeError(f"attention head shapes {head.w_q.shape}/{head.w_k.shape} vs d={d}")
    q = nx.matmul(h, head.w_q)
    k = nx.matmul(h, head.w_k)
    scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(d))
    return nx.softmax_rows(scores)


def dense_layer(h0: Tensor, a, params: DenseLayerParams) -> Tensor:
    if h0.shape[1] != params.d:
        raise ShapeError(f"dense group expects width {params.d}, got {h0.shape[1]}")
    outs: list[Tensor] = []
    for w, b in zip(params.weights, params.biases):
        g = nx.concat_cols([h0] + outs)
        outs.append(gcn_layer(g, a, w, b))
    return nx.concat_cols(outs)


def linear_combination(branch_outputs: Sequence[Tensor], w_comb: Tensor, b_comb: Tensor) -> Tensor:
    """Concatenate the N branch outputs and apply one affine map back to width d (no activation)."""
    d = w_comb.shape[1]
    if w_comb.shape[0] != d * len(branch_outputs):
        raise ContractError(f"{len(branch_outputs)} branches for a combination of width {w_comb.shape[0]}")
    shapes = {o.shape for o in branch_outputs}
    if len(shapes) != 1:
        raise ShapeError(f"branch outputs differ in shape: {sorted(shapes)}")
    return nx.add(nx.matmul(nx.concat_cols(list(branch_outputs)), w_comb), b_comb)


def block_forward(
    h: Tensor,
    hard_adj,
    params: BlockParams,
    use_attention: bool,
    record: list | None = None,
) -> Tensor:
    """Run one block.  Attention matrices are appended to ``record`` when given."""
    branches = []
    for head, groups in zip(params.heads, params.dense_groups):
        if use_attention:
            a = attention_adjacency(h, head)
            if record is not None:
                record.append(a)
        else:
            a = hard_adj
        out = h
        for grp in groups:
            out = dense_layer(out, a, grp)
        branches.append(out)
    return linear_combination(branches, params.w_comb, params.b_comb)


def encode(
    x: Tensor,
    hard_adj,
    blocks: Sequence[BlockParams],
    attention_from: int = 2,
    record: list | None = None,
    dropout=None,
) -> Tensor:
    """Stack M blocks; attention replaces the hard adjacency from block ``attention_from`` on.

    ``dropout`` is an optional callable applied to each block input.
    ``record`` collects ``(block, head, matrix)`` triples (1-based).
    """
    if len(blocks) == 0:
        raise ContractError("encode needs at least one block")
    hard_adj = nx.as_tensor(hard_adj)
    h = x
    for m, params in enumerate(blocks, start=1):
        if dropout is not None:
            h = dropout(h)
        mats: list[Tensor] | None = [] if record is not None else None
        h = block_forward(h, hard_adj, params, use_attention=m >= attention_from, record=mats)
        if record is not None:
            record.extend((m, t, a) for t, a in enumerate(mats, start=1))
    return h
