import math

import numpy as np
import pytest

from aggcn import layers
from aggcn import numerics as nx
from aggcn.layers import AttentionHeadParams, DenseLayerParams
from aggcn.numerics import ContractError, Rng, ShapeError, Tensor

from conftest import random_graph
from aggcn import depgraph as dg


def T(a):
    return Tensor(np.asarray(a, dtype=float))


def oracle_attention(h, wq, wk):
    """Step-by-step scaled dot product with explicit loops over node pairs."""
    n, d = h.shape
    q, k = h @ wq, h @ wk
    out = np.zeros((n, n))
    for i in range(n):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(n)]
        top = max(scores)
        ex = [math.exp(s - top) for s in scores]
        out[i] = [e / sum(ex) for e in ex]
    return out


def random_adj(rng, n):
    return dg.build_adjacency(random_graph(rng, n))


class TestGcnLayer:
    def test_identity(self):
        h = np.array([[1.0, 2.0], [0.0, 3.0]])
        out = layers.gcn_layer(T(h), np.eye(2), T(np.eye(2)), T([0, 0]))
        np.testing.assert_array_equal(out.data, h)

    def test_hand_example(self):
        out = layers.gcn_layer(T([[1], [2]]), np.ones((2, 2)), T([[1]]), T([0]))
        np.testing.assert_array_equal(out.data, [[3], [3]])

    def test_negative_bias_saturates(self):
        rng = np.random.default_rng(0)
        out = layers.gcn_layer(T(rng.normal(size=(3, 2))), np.eye(3), T(rng.normal(size=(4, 2))), T([-1e6] * 4))
        assert not out.data.any()

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            layers.gcn_layer(T(np.ones((2, 2))), np.eye(3), T(np.eye(2)), T([0, 0]))
        with pytest.raises(ShapeError):
            layers.gcn_layer(T(np.ones((2, 2))), np.eye(2), T(np.eye(3)), T([0, 0, 0]))


class TestAttention:
    def test_single_node(self):
        head = AttentionHeadParams(T(np.eye(3)), T(np.eye(3)))
        np.testing.assert_array_equal(layers.attention_adjacency(T([[1, 2, 3]]), head).data, [[1.0]])

    def test_identical_rows_uniform(self):
        rng = np.random.default_rng(1)
        head = AttentionHeadParams(T(rng.normal(size=(3, 3))), T(rng.normal(size=(3, 3))))
        out = layers.attention_adjacency(T(np.tile(rng.normal(size=3), (5, 1))), head).data
        np.testing.assert_allclose(out, np.full((5, 5), 0.2), atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        h, wq, wk = rng.normal(size=(4, 6)), rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
        out = layers.attention_adjacency(T(h), AttentionHeadParams(T(wq), T(wk))).data
        np.testing.assert_allclose(out, oracle_attention(h, wq, wk), atol=1e-12)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_head_shape_checked(self):
        with pytest.raises(ShapeError):
            layers.attention_adjacency(T(np.ones((2, 3))), AttentionHeadParams(T(np.eye(4)), T(np.eye(4))))


class TestDenseLayer:
    def test_paper_schedule(self):
        p = layers.init_dense_group(Rng(0), 300, 3)
        assert p.d_hidden == 100
        assert p.input_widths() == [300, 400, 500]
        out = layers.dense_layer(T(np.zeros((2, 300))), np.eye(2), p)
        assert out.shape == (2, 300)

    def test_small_schedule(self):
        p = layers.init_dense_group(Rng(0), 4, 2)
        assert p.input_widths() == [4, 6]
        assert layers.dense_layer(T(np.ones((3, 4))), np.eye(3), p).shape == (3, 4)

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeError):
            layers.init_dense_group(Rng(0), 10, 3)
        with pytest.raises(ShapeError):
            DenseLayerParams([T(np.ones((2, 4))), T(np.ones((2, 5)))], [T(np.zeros(2)), T(np.zeros(2))])

    def test_single_sublayer_is_gcn(self):
        rng = np.random.default_rng(3)
        p = layers.init_dense_group(Rng(3), 5, 1)
        h, a = T(rng.normal(size=(4, 5))), random_adj(rng, 4)
        np.testing.assert_array_equal(
            layers.dense_layer(h, a, p).data, layers.gcn_layer(h, a, p.weights[0], p.biases[0]).data
        )

    def test_dense_connectivity_by_hand(self):
        rng = np.random.default_rng(4)
        p = layers.init_dense_group(Rng(4), 4, 2)
        h, a = rng.normal(size=(3, 4)), random_adj(rng, 3)
        relu = lambda z: np.maximum(z, 0)
        o1 = relu(a @ h @ p.weights[0].data.T + p.biases[0].data)
        o2 = relu(a @ np.hstack([h, o1]) @ p.weights[1].data.T + p.biases[1].data)
        np.testing.assert_allclose(layers.dense_layer(T(h), a, p).data, np.hstack([o1, o2]), atol=1e-12)

    @pytest.mark.parametrize("d,L", [(6, 1), (6, 2), (6, 3), (12, 4), (8, 8)])
    def test_width_preserved(self, d, L):
        p = layers.init_dense_group(Rng(d * L), d, L)
        assert layers.dense_layer(T(np.ones((2, d))), np.eye(2), p).shape == (2, d)


class TestLinearCombination:
    def test_pass_through(self):
        x = T([[1, 2], [3, 4]])
        np.testing.assert_array_equal(layers.linear_combination([x], T(np.eye(2)), T([0, 0])).data, x.data)

    def test_bias_only(self):
        out = layers.linear_combination([T(np.ones((3, 2)))] * 2, T(np.zeros((4, 2))), T([5, -1]))
        np.testing.assert_array_equal(out.data, [[5, -1]] * 3)

    def test_random_against_direct(self):
        rng = np.random.default_rng(5)
        a, b, w, c = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=2)
        out = layers.linear_combination([T(a), T(b)], T(w), T(c)).data
        np.testing.assert_allclose(out, a @ w[:2] + b @ w[2:] + c, atol=1e-12)

    def test_branch_count(self):
        with pytest.raises(ContractError):
            layers.linear_combination([T(np.ones((2, 2)))] * 3, T(np.zeros((4, 2))), T([0, 0]))


class TestBlocks:
    def test_symmetric_heads_identical_branches(self):
        rng = np.random.default_rng(6)
        block = layers.init_block(Rng(6), 4, 2, (2,))
        block.dense_groups[1] = block.dense_groups[0]
        h, a = T(rng.normal(size=(3, 4))), random_adj(rng, 3)
        # Reading out branch 1 alone and branch 2 alone must agree.
        block.w_comb.data[...] = np.vstack([np.eye(4), np.zeros((4, 4))])
        first = layers.block_forward(h, a, block, use_attention=False).data
        block.w_comb.data[...] = np.vstack([np.zeros((4, 4)), np.eye(4)])
        second = layers.block_forward(h, a, block, use_attention=False).data
        np.testing.assert_array_equal(first, second)

    def test_block_shape_finite(self):
        rng = np.random.default_rng(7)
        block = layers.init_block(Rng(7), 6, 3, (2, 3))
        out = layers.block_forward(T(rng.normal(size=(3, 6))), random_adj(rng, 3), block, True)
        assert out.shape == (3, 6) and np.all(np.isfinite(out.data))

    def test_attention_only_from_second_block(self):
        rng = np.random.default_rng(8)
        blocks = [layers.init_block(Rng(i), 4, 2, (2, 4)) for i in range(2)]
        record = []
        layers.encode(T(rng.normal(size=(5, 4))), random_adj(rng, 5), blocks, record=record)
        assert [(m, t) for m, t, _ in record] == [(2, 1), (2, 2)]
        record = []
        layers.encode(T(rng.normal(size=(5, 4))), random_adj(rng, 5), blocks[:1], record=record)
        assert record == []

    def test_zero_blocks(self):
        with pytest.raises(ContractError):
            layers.encode(T(np.ones((2, 2))), np.eye(2), [])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        blocks = [layers.init_block(Rng(10 + i), 6, 2, (2, 3)) for i in range(2)]
        for _ in range(10):
            n = int(rng.integers(2, 9))
            x, a = rng.normal(size=(n, 6)), random_adj(rng, n)
            perm = rng.permutation(n)
            P = np.eye(n)[perm]
            base = layers.encode(T(x), a, blocks).data
            moved = layers.encode(T(P @ x), P @ a @ P.T, blocks).data
            np.testing.assert_allclose(moved, P @ base, atol=1e-8)

    def test_gradients_two_blocks(self):
        rng = np.random.default_rng(11)
        blocks = [layers.init_block(Rng(20 + i), 4, 2, (2, 2)) for i in range(2)]
        x, a = T(rng.normal(size=(5, 4))), random_adj(rng, 5)
        readout = T(rng.normal(size=(5, 4)))
        params = [p for b in blocks for p in b.parameters()]
        # Zero biases feeding dead rows sit exactly on the ReLU kink, where central
        # differences see half a slope; nudge them off it.
        for p in params:
            if p.data.ndim == 1:
                p.data[...] = rng.normal(scale=0.1, size=p.shape)
        report = nx.finite_diff_check(lambda: nx.sum_all(nx.mul(layers.encode(x, a, blocks), readout)), params)
        assert report.passed, report.failures[:3]


def test_init_bound_variance():
    assert layers.init_bound(3) == pytest.approx(1.0)
    w = Rng(0).uniform(-layers.init_bound(50), layers.init_bound(50), 200000)
    assert w.var() == pytest.approx(1 / 50, rel=0.02)
