import numpy as np
import pytest

from intentrec.data import InteractionTensor
from intentrec.errors import ConfigError, DataError
from intentrec.graph import (
    OFF,
    DropoutSpec,
    build_adjacency,
    propagate_backward,
    relation_propagate,
)
from intentrec.rng import SeededRng
from intentrec.toy import random_tensor


def dense_normalized(tensor, k):
    """Independent dense D^-1/2 A D^-1/2 oracle for one behavior."""
    a = np.zeros((tensor.num_users, tensor.num_items))
    for u, v, kk in tensor.triples:
        if kk == k:
            a[u, v] = 1.0
    du = a.sum(axis=1)
    dv = a.sum(axis=0)
    with np.errstate(divide="ignore"):
        su = np.where(du > 0, 1.0 / np.sqrt(du), 0.0)
        sv = np.where(dv > 0, 1.0 / np.sqrt(dv), 0.0)
    return su[:, None] * a * sv[None, :]


def tensor_of(rows, num_users, num_items, k=1, target=0):
    return InteractionTensor(num_users, num_items, k, target, np.array(rows, dtype=np.int64))


class TestBuildAdjacency:
    def test_single_edge_coefficient_one(self):
        t = tensor_of([(0, 0, 0)], 1, 1)
        adj = build_adjacency(t)
        assert adj.by_user[0][0, 0] == pytest.approx(1.0)
        assert adj.by_item[0][0, 0] == pytest.approx(1.0)

    def test_degree_four_coefficients(self):
        t = tensor_of([(0, v, 0) for v in range(4)], 1, 4)
        adj = build_adjacency(t)
        assert np.allclose(adj.by_user[0].toarray(), 0.5)

    def test_matches_dense_oracle(self):
        t = random_tensor(8, 7, 3, density=0.3, seed=5)
        adj = build_adjacency(t)
        for k in range(3):
            assert np.max(np.abs(adj.by_user[k].toarray() - dense_normalized(t, k))) < 1e-12
            assert np.max(np.abs(adj.by_item[k].toarray() - dense_normalized(t, k).T)) < 1e-12

    def test_empty_train_rejected(self):
        t = InteractionTensor(2, 2, 1, 0, np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(DataError):
            build_adjacency(t)


class TestRelationPropagate:
    def test_single_edge_copies_embedding(self):
        t = tensor_of([(0, 0, 0)], 1, 1)
        adj = build_adjacency(t)
        src = np.array([[1.0, 0.0]])
        res = relation_propagate(adj.by_user, src, OFF)
        assert np.allclose(res.z_per_behavior[0], [[1.0, 0.0]])
        assert np.allclose(res.z_sum, [[1.0, 0.0]])

    def test_keep_prob_one_ignores_rng(self):
        t = random_tensor(5, 4, 2, density=0.5, seed=1)
        adj = build_adjacency(t)
        src = SeededRng(0, "emb").uniform(-1, 1, (4, 3))
        res_a = relation_propagate(adj.by_user, src, DropoutSpec(1.0, enabled=True), SeededRng(1, "dropout"))
        res_b = relation_propagate(adj.by_user, src, DropoutSpec(1.0, enabled=True), SeededRng(2, "dropout"))
        assert np.array_equal(res_a.z_sum, res_b.z_sum)

    def test_matches_dense_oracle(self):
        t = random_tensor(9, 6, 3, density=0.4, seed=3)
        adj = build_adjacency(t)
        src = SeededRng(0, "emb").uniform(-1, 1, (6, 5))
        res = relation_propagate(adj.by_user, src, OFF)
        expected = np.zeros((9, 5))
        for k in range(3):
            expected += dense_normalized(t, k) @ src
        assert np.max(np.abs(res.z_sum - expected)) < 1e-10

    def test_linearity_without_dropout(self):
        t = random_tensor(6, 5, 2, density=0.5, seed=2)
        adj = build_adjacency(t)
        rng = SeededRng(0, "emb")
        e1 = rng.uniform(-1, 1, (5, 4))
        e2 = rng.uniform(-1, 1, (5, 4))
        lhs = relation_propagate(adj.by_user, 2.0 * e1 + 3.0 * e2, OFF).z_sum
        rhs = 2.0 * relation_propagate(adj.by_user, e1, OFF).z_sum
        rhs += 3.0 * relation_propagate(adj.by_user, e2, OFF).z_sum
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_dropout_is_unbiased(self):
        t = tensor_of([(0, v, 0) for v in range(3)], 1, 3)
        adj = build_adjacency(t)
        src = np.array([[1.0], [2.0], [-1.5]])
        clean = relation_propagate(adj.by_user, src, OFF).z_sum
        rng = SeededRng(99, "dropout")
        drop = DropoutSpec(keep_prob=0.7, enabled=True)
        draws = 10_000
        samples = np.empty(draws)
        for t_i in range(draws):
            samples[t_i] = relation_propagate(adj.by_user, src, drop, rng).z_sum[0, 0]
        se = samples.std(ddof=1) / np.sqrt(draws)
        assert abs(samples.mean() - clean[0, 0]) < 3 * se

    def test_isolated_node_gets_zero(self):
        t = tensor_of([(0, 0, 0)], 3, 2)  # users 1, 2 isolated
        adj = build_adjacency(t)
        src = np.ones((2, 4))
        res = relation_propagate(adj.by_user, src, OFF)
        assert np.array_equal(res.z_sum[1], np.zeros(4))
        assert np.array_equal(res.z_sum[2], np.zeros(4))

    def test_zero_dim_embeddings_rejected(self):
        t = tensor_of([(0, 0, 0)], 1, 1)
        adj = build_adjacency(t)
        with pytest.raises(ConfigError):
            relation_propagate(adj.by_user, np.zeros((1, 0)), OFF)

    def test_backward_is_transpose(self):
        t = random_tensor(6, 5, 2, density=0.5, seed=8)
        adj = build_adjacency(t)
        rng = SeededRng(0, "emb")
        src = rng.uniform(-1, 1, (5, 3))
        res = relation_propagate(adj.by_user, src, OFF)
        grads = [rng.uniform(-1, 1, (6, 3)) for _ in range(2)]
        back = propagate_backward(res.masked_mats, grads)
        expected = np.zeros_like(src)
        for k in range(2):
            expected += dense_normalized(t, k).T @ grads[k]
        assert np.max(np.abs(back - expected)) < 1e-10
