import numpy as np
import pytest
import scipy.sparse as sp

from intentrec.errors import ConfigError, RangeError, StaleStateError
from intentrec.graph import OFF, BehaviorAdjacency, DropoutSpec, build_adjacency
from intentrec.linalg import leaky_relu
from intentrec.model import (
    Dims,
    forward,
    get_param,
    init_params,
    param_items,
    predict,
    score_items,
)
from intentrec.rng import RngHub, SeededRng
from intentrec.toy import build_instance, random_tensor


def dense_normalized(tensor, k):
    a = np.zeros((tensor.num_users, tensor.num_items))
    for u, v, kk in tensor.triples:
        if kk == k:
            a[u, v] = 1.0
    du, dv = a.sum(axis=1), a.sum(axis=0)
    su = np.where(du > 0, 1.0 / np.sqrt(np.maximum(du, 1)), 0.0)
    sv = np.where(dv > 0, 1.0 / np.sqrt(np.maximum(dv, 1)), 0.0)
    return su[:, None] * a * sv[None, :]


class TestInit:
    def test_same_seed_bitwise_identical(self):
        dims = Dims(4, 3, 2, 2, 5, 1, target_behavior=1)
        a = init_params(dims, RngHub(7))
        b = init_params(dims, RngHub(7))
        for (_, arr_a), (_, arr_b) in zip(param_items(a), param_items(b)):
            assert np.array_equal(arr_a, arr_b)

    def test_entries_bounded(self):
        dims = Dims(10, 8, 3, 4, 16, 2, target_behavior=2)
        params = init_params(dims, RngHub(0))
        bound = 1.0 / np.sqrt(16)
        for _, arr in param_items(params):
            assert np.abs(arr).max() <= bound

    def test_empirical_mean_near_zero(self):
        dims = Dims(1000, 600, 2, 8, 64, 1, target_behavior=1)
        params = init_params(dims, RngHub(3))
        entries = np.concatenate([arr.ravel() for _, arr in param_items(params)])
        assert entries.size > 1e5
        bound = 1.0 / 8.0
        sigma = bound / np.sqrt(3.0)  # stdev of U(-bound, bound)
        assert abs(entries.mean()) < 3 * sigma / np.sqrt(entries.size)

    def test_zero_dimension_rejected(self):
        with pytest.raises(ConfigError):
            init_params(Dims(0, 3, 2, 2, 4, 1, target_behavior=0), RngHub(0))

    def test_meta_tables_exist_per_layer_and_aux_behavior(self):
        dims = Dims(4, 3, 3, 2, 5, 2, target_behavior=2)
        params = init_params(dims, RngHub(1))
        assert set(params.meta_w) == {
            (side, layer, k)
            for side in ("user", "item")
            for layer in (1, 2)
            for k in (0, 1)
        }


class TestForward:
    def test_zero_layers_gives_base_embeddings(self):
        inst = build_instance(layers=0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
        assert np.array_equal(state.psi_user, inst.params.user_emb)
        assert np.array_equal(state.psi_item, inst.params.item_emb)

    def test_deterministic_with_dropout(self):
        drop = DropoutSpec(keep_prob=0.6, enabled=True)
        states = []
        for _ in range(2):
            inst = build_instance(seed=4)
            states.append(forward(inst.params, inst.adj, drop, inst.hub))
        assert np.array_equal(states[0].psi_user, states[1].psi_user)
        assert np.array_equal(states[0].psi_item, states[1].psi_item)

    def test_residual_identity_every_layer(self):
        inst = build_instance(layers=3)
        state = forward(inst.params, inst.adj, OFF, inst.hub)
        for l, layer in enumerate(state.layers, start=1):
            # same left-to-right order as the definition: z + h + previous
            expected_u = layer.user.prop.z_sum + layer.user.h_sum
            expected_u = expected_u + state.lambdas_user[l - 1]
            assert np.array_equal(state.lambdas_user[l], expected_u)
            expected_v = layer.item.prop.z_sum + layer.item.h_sum
            expected_v = expected_v + state.lambdas_item[l - 1]
            assert np.array_equal(state.lambdas_item[l], expected_v)

    def test_psi_is_sum_of_cached_lambdas(self):
        inst = build_instance(layers=2)
        state = forward(inst.params, inst.adj, OFF, inst.hub)
        assert np.max(np.abs(state.psi_user - sum(state.lambdas_user))) < 1e-12
        assert np.max(np.abs(state.psi_item - sum(state.lambdas_item))) < 1e-12

    def test_empty_graph_layer_is_residual_passthrough(self):
        dims = Dims(3, 2, 2, 2, 4, 1, target_behavior=1)
        params = init_params(dims, RngHub(0))
        empty = BehaviorAdjacency(
            num_users=3,
            num_items=2,
            num_behaviors=2,
            by_user=[sp.csr_matrix((3, 2)) for _ in range(2)],
            by_item=[sp.csr_matrix((2, 3)) for _ in range(2)],
        )
        state = forward(params, empty, OFF, RngHub(0), corrupt_sides=())
        assert np.array_equal(state.lambdas_user[1], params.user_emb)
        assert np.allclose(state.psi_user, 2.0 * params.user_emb)

    def test_single_layer_matches_dense_recompute_oracle(self):
        tensor = random_tensor(3, 2, 2, density=0.7, seed=11)
        inst = build_instance(
            num_behaviors=2, num_hyperedges=2, dim=2, layers=1, tensor=tensor, seed=11
        )
        params = inst.params
        state = forward(params, inst.adj, OFF, inst.hub, corrupt_sides=())
        slope = params.dims.slope
        e = params.dims.num_hyperedges

        # straight-line dense recomputation
        psi_u = params.user_emb.copy()
        psi_v = params.item_emb.copy()
        lam_u, lam_v = params.user_emb, params.item_emb
        new_u = lam_u.copy()
        new_v = lam_v.copy()
        for k in range(2):
            z_u = dense_normalized(tensor, k) @ lam_v
            z_v = dense_normalized(tensor, k).T @ lam_u
            for z, w, acc in ((z_u, params.hyper_user[k], 0), (z_v, params.hyper_item[k], 1)):
                stab = (z @ w.T) / np.sqrt(e)
                gamma = leaky_relu(stab.T @ z, slope)
                h = leaky_relu(stab @ gamma, slope)
                if acc == 0:
                    new_u = new_u + z_u + h
                else:
                    new_v = new_v + z_v + h
        psi_u = psi_u + new_u
        psi_v = psi_v + new_v
        assert np.max(np.abs(state.psi_user - psi_u)) < 1e-10
        assert np.max(np.abs(state.psi_item - psi_v)) < 1e-10

    def test_zero_hyperedge_tables_degrade_to_plain_gnn(self):
        tensor = random_tensor(5, 4, 2, density=0.5, seed=6)
        inst = build_instance(num_behaviors=2, dim=3, layers=2, tensor=tensor, seed=6)
        for tab in inst.params.hyper_user + inst.params.hyper_item:
            tab[:] = 0.0
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())

        # independent plain multiplex GNN with residuals and order sums
        mats = [dense_normalized(tensor, k) for k in range(2)]
        lam_u, lam_v = inst.params.user_emb, inst.params.item_emb
        psi_u, psi_v = lam_u.copy(), lam_v.copy()
        for _ in range(2):
            zu = sum(m @ lam_v for m in mats)
            zv = sum(m.T @ lam_u for m in mats)
            lam_u = zu + lam_u
            lam_v = zv + lam_v
            psi_u += lam_u
            psi_v += lam_v
        assert np.max(np.abs(state.psi_user - psi_u)) < 1e-10
        assert np.max(np.abs(state.psi_item - psi_v)) < 1e-10


class TestPredict:
    def test_dot_product(self):
        inst = build_instance(layers=0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
        state.psi_user[0] = [1.0, 2.0] + [0.0] * 6
        state.psi_item[1] = [3.0, 4.0] + [0.0] * 6
        assert predict(state, 0, 1) == pytest.approx(11.0)

    def test_zero_item_embedding(self):
        inst = build_instance(layers=0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
        state.psi_item[2] = 0.0
        assert predict(state, 0, 2) == 0.0

    def test_out_of_range(self):
        inst = build_instance()
        state = forward(inst.params, inst.adj, OFF, inst.hub)
        with pytest.raises(RangeError):
            predict(state, 99, 0)
        with pytest.raises(RangeError):
            score_items(state, 0, np.array([99]))

    def test_batch_scoring_matches_loop(self):
        inst = build_instance()
        state = forward(inst.params, inst.adj, OFF, inst.hub)
        items = np.arange(inst.params.dims.num_items)
        batch = score_items(state, 3, items)
        loop = np.array([predict(state, 3, int(j)) for j in items])
        assert np.max(np.abs(batch - loop)) < 1e-12


class TestExport:
    def test_embedding_csv_roundtrip(self, tmp_path):
        inst = build_instance()
        state = forward(inst.params, inst.adj, OFF, inst.hub)
        up, ip = tmp_path / "u.csv", tmp_path / "i.csv"
        from intentrec.model import export_embeddings

        export_embeddings(state, up, ip)
        data = np.loadtxt(up, delimiter=",", skiprows=1)
        assert np.allclose(data[:, 1:], state.psi_user)
        assert np.array_equal(data[:, 0], np.arange(state.dims.num_users))
