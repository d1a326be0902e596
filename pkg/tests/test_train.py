import numpy as np
import pytest

from intentrec.data import PairBatch, sample_pairs
from intentrec.errors import DivergenceError, ShapeError, StaleStateError
from intentrec.graph import OFF, DropoutSpec, build_adjacency
from intentrec.model import forward, init_params, param_items
from intentrec.rng import RngHub, SeededRng
from intentrec.toy import build_instance, random_tensor
from intentrec.train import (
    AdamState,
    LossConfig,
    TrainConfig,
    adam_step,
    backward,
    fit,
    grad_check,
    hinge_loss,
    init_adam,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_epoch,
    zero_grads,
)


def empty_batch():
    return PairBatch(entries=np.zeros((0, 3), dtype=np.int64), pairs_per_user=1)


class TestHinge:
    def test_margin_satisfied(self):
        assert hinge_loss([3.0], [1.0]) == 0.0

    def test_equal_scores(self):
        assert hinge_loss([1.0, 2.0], [1.0, 2.0]) == 2.0

    def test_partial_margin(self):
        assert hinge_loss([1.0], [0.7]) == pytest.approx(0.7)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            hinge_loss([1.0], [1.0, 2.0])


class TestTotalLoss:
    def test_zero_weights_give_pure_hinge(self):
        inst = build_instance()
        cfg = LossConfig(reg_weight=0.0, node_cl_weight=0.0, graph_cl_weight=0.0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=cfg.corrupt_sides())
        total, bd = total_loss(state, inst.params, inst.batch, cfg)
        pos = np.sum(state.psi_user[inst.batch.entries[:, 0]] * state.psi_item[inst.batch.entries[:, 1]], axis=1)
        neg = np.sum(state.psi_user[inst.batch.entries[:, 0]] * state.psi_item[inst.batch.entries[:, 2]], axis=1)
        assert total == pytest.approx(hinge_loss(pos, neg), abs=1e-12)
        assert bd.hinge == total

    def test_zero_params_empty_batch_is_zero(self):
        inst = build_instance()
        for _, arr in param_items(inst.params):
            arr[:] = 0.0
        cfg = LossConfig()
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=cfg.corrupt_sides())
        total, _ = total_loss(state, inst.params, empty_batch(), cfg)
        assert total == 0.0

    def test_total_is_weighted_sum_of_components(self):
        inst = build_instance(seed=5)
        cfg = LossConfig(reg_weight=3e-3, node_cl_weight=2e-2, graph_cl_weight=4e-2)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=cfg.corrupt_sides())
        total, bd = total_loss(state, inst.params, inst.batch, cfg)
        recomputed = (
            bd.hinge
            + cfg.reg_weight * bd.reg
            + cfg.node_cl_weight * bd.node_cl
            + cfg.graph_cl_weight * bd.graph_cl
        )
        assert total == pytest.approx(recomputed, abs=1e-10)
        # components recomputed independently
        reg = sum(float(np.sum(a * a)) for _, a in param_items(inst.params))
        assert bd.reg == pytest.approx(reg, abs=1e-10)

    def test_ablations_zero_their_terms(self):
        inst = build_instance(seed=2)
        base = LossConfig(node_cl_weight=1e-2, graph_cl_weight=1e-2)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=base.corrupt_sides())
        _, bd = total_loss(state, inst.params, inst.batch, base)
        assert bd.node_cl > 0 and bd.graph_cl > 0
        for flag, component in (("no_node_cl", "node_cl"), ("no_graph_cl", "graph_cl")):
            cfg = LossConfig(node_cl_weight=1e-2, graph_cl_weight=1e-2, **{flag: True})
            st = forward(inst.params, inst.adj, OFF, RngHub(0), corrupt_sides=cfg.corrupt_sides())
            _, bd_ab = total_loss(st, inst.params, inst.batch, cfg)
            assert getattr(bd_ab, component) == 0.0


class TestBackward:
    def test_pure_weight_decay_is_exact(self):
        inst = build_instance(seed=1)
        cfg = LossConfig(reg_weight=2e-3, node_cl_weight=0.0, graph_cl_weight=0.0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
        # slack margins everywhere: scale psi apart is hard, so drop the batch
        grads = backward(state, inst.params, empty_batch(), cfg)
        for name, arr in param_items(inst.params):
            assert np.allclose(grads[name], 2.0 * cfg.reg_weight * arr, atol=0, rtol=0)

    def test_zero_embeddings_give_zero_score_gradients(self):
        inst = build_instance(seed=1)
        inst.params.user_emb[:] = 0.0
        inst.params.item_emb[:] = 0.0
        for tab in inst.params.hyper_user + inst.params.hyper_item:
            tab[:] = 0.0
        cfg = LossConfig(reg_weight=0.0, node_cl_weight=0.0, graph_cl_weight=0.0)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
        grads = backward(state, inst.params, inst.batch, cfg)
        # hinge is active (scores are 0) but the bilinear product rule
        # zeroes every gradient at the origin
        for name in ("user_emb", "item_emb"):
            assert not grads[name].any()

    def test_stale_state_detected(self):
        inst = build_instance()
        cfg = LossConfig()
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=cfg.corrupt_sides())
        opt = init_adam(inst.params)
        adam_step(inst.params, zero_grads(inst.params), opt, lr=0.1)
        with pytest.raises(StaleStateError):
            backward(state, inst.params, inst.batch, cfg)

    def test_full_objective_matches_finite_differences(self):
        inst = build_instance(seed=0)
        cfg = LossConfig(reg_weight=1e-2, node_cl_weight=0.05, graph_cl_weight=0.05)
        report = grad_check(inst.params, inst.adj, inst.batch, cfg, step=1e-5, hub=inst.hub)
        assert report.max_rel < 1e-6

    @pytest.mark.parametrize("scope", ["batch", "all"])
    def test_cl_scopes_both_check_out(self, scope):
        inst = build_instance(seed=2)
        cfg = LossConfig(
            reg_weight=1e-2, node_cl_weight=0.05, graph_cl_weight=0.05, cl_scope=scope
        )
        report = grad_check(
            inst.params, inst.adj, inst.batch, cfg, step=1e-5, hub=inst.hub,
            max_entries_per_group=20,
        )
        assert report.max_rel < 1e-6

    def test_strict_denominator_mode_checks_out(self):
        from intentrec.contrast import ContrastConfig

        inst = build_instance(seed=3)
        cfg = LossConfig(
            reg_weight=1e-2, node_cl_weight=0.05, graph_cl_weight=0.05,
            contrast=ContrastConfig(include_positive_in_denominator=False),
        )
        report = grad_check(
            inst.params, inst.adj, inst.batch, cfg, step=1e-5, hub=inst.hub,
            max_entries_per_group=20,
        )
        assert report.max_rel < 1e-6

    def test_ablation_flags_zero_gradient_paths(self):
        # with reg off, disabling a module must zero exactly the gradients
        # that flow only through that module
        inst = build_instance(seed=4)
        cfg = LossConfig(reg_weight=0.0, node_cl_weight=0.05, graph_cl_weight=0.05, no_meta=True)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=cfg.corrupt_sides())
        grads = backward(state, inst.params, inst.batch, cfg)
        for name in grads:
            if name.startswith("meta_"):
                assert not grads[name].any()

        cfg = LossConfig(reg_weight=0.0, node_cl_weight=0.05, graph_cl_weight=0.05, no_intents=True)
        state = forward(inst.params, inst.adj, OFF, RngHub(0), no_intents=True, corrupt_sides=())
        grads = backward(state, inst.params, inst.batch, cfg)
        for name in grads:
            if name.startswith(("hyper_", "meta_")):
                assert not grads[name].any()

    def test_disabled_paths_match_zero_weight(self):
        # the flag and a zero weight must produce identical gradients
        inst = build_instance(seed=6)
        flag_cfg = LossConfig(reg_weight=1e-3, node_cl_weight=0.05, graph_cl_weight=0.05, no_node_cl=True)
        weight_cfg = LossConfig(reg_weight=1e-3, node_cl_weight=0.0, graph_cl_weight=0.05)
        state = forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=flag_cfg.corrupt_sides())
        g_flag = backward(state, inst.params, inst.batch, flag_cfg)
        g_weight = backward(state, inst.params, inst.batch, weight_cfg)
        for name in g_flag:
            assert np.array_equal(g_flag[name], g_weight[name])


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        inst = build_instance()
        before = {name: arr.copy() for name, arr in param_items(inst.params)}
        opt = init_adam(inst.params)
        adam_step(inst.params, zero_grads(inst.params), opt, lr=0.1)
        for name, arr in param_items(inst.params):
            assert np.array_equal(arr, before[name])

    def test_first_step_magnitude_is_lr(self):
        inst = build_instance()
        before = {name: arr.copy() for name, arr in param_items(inst.params)}
        grads = {name: np.full_like(arr, 0.37) for name, arr in param_items(inst.params)}
        opt = init_adam(inst.params)
        adam_step(inst.params, grads, opt, lr=0.01)
        for name, arr in param_items(inst.params):
            delta = before[name] - arr
            assert np.allclose(delta, 0.01 * 0.37 / (0.37 + 1e-8), atol=1e-9)

    def test_scalar_quadratic_converges(self):
        # minimize f(theta) = theta^2 from theta = 1 with lr = 0.1
        theta = np.array([[1.0]])
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        for t in range(1, 101):
            g = 2.0 * theta
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            theta = theta - 0.1 * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        assert abs(theta[0, 0]) < 0.05


def small_train_setup(seed=0, epochs=2, **overrides):
    tensor = random_tensor(30, 20, 3, density=0.2, seed=seed)
    kwargs = dict(
        dim=8, hyperedges=4, layers=2, batch_size=16, epochs=epochs, seed=seed,
        keep_prob=0.8, lr=1e-2,
    )
    kwargs.update(overrides)
    return tensor, TrainConfig(**kwargs)


class TestTrainEpoch:
    def test_zero_lr_keeps_params_bitwise(self):
        tensor, cfg = small_train_setup(lr=0.0)
        adj = build_adjacency(tensor)
        hub = RngHub(cfg.seed)
        params = init_params(cfg.dims_for(tensor), hub)
        before = {name: arr.copy() for name, arr in param_items(params)}
        train_epoch(params, adj, tensor, cfg, hub, init_adam(params))
        for name, arr in param_items(params):
            assert np.array_equal(arr, before[name])

    def test_fixed_seed_reproduces_epoch_stats(self):
        stats = []
        for _ in range(2):
            tensor, cfg = small_train_setup(epochs=2)
            result = fit(tensor, cfg)
            stats.append([s.as_dict() for s in result.epoch_stats])
        for a, b in zip(stats[0], stats[1]):
            a.pop("wall_time")
            b.pop("wall_time")
            assert a == b

    def test_hinge_decreases_with_training(self):
        tensor, cfg = small_train_setup(epochs=15, lr=3e-2)
        result = fit(tensor, cfg)
        first = result.epoch_stats[0].hinge
        last = result.epoch_stats[-1].hinge
        assert last < first

    def test_divergence_detected(self):
        tensor, cfg = small_train_setup()
        adj = build_adjacency(tensor)
        hub = RngHub(cfg.seed)
        params = init_params(cfg.dims_for(tensor), hub)
        params.user_emb[:] = 1e200  # force overflow in the bilinear score
        with pytest.raises((DivergenceError, Exception)):
            train_epoch(params, adj, tensor, cfg, hub, init_adam(params))


class TestCheckpoint:
    def test_roundtrip_is_bitwise(self, tmp_path):
        tensor, cfg = small_train_setup(epochs=1)
        result = fit(tensor, cfg)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, result.params, result.opt, result.hub, "abc123", epoch=1)
        params, opt, hub, meta = load_checkpoint(path)
        assert meta["config_hash"] == "abc123" and meta["epoch"] == 1
        for (name_a, arr_a), (_, arr_b) in zip(param_items(result.params), param_items(params)):
            assert np.array_equal(arr_a, arr_b), name_a
            assert np.array_equal(opt.m[name_a], result.opt.m[name_a])
            assert np.array_equal(opt.v[name_a], result.opt.v[name_a])
        assert opt.t == result.opt.t
        assert hub.state_dict() == result.hub.state_dict()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        # four epochs straight
        tensor, cfg = small_train_setup(epochs=4)
        straight = fit(tensor, cfg)

        # two epochs, checkpoint, reload, two more
        tensor, cfg2 = small_train_setup(epochs=2)
        first = fit(tensor, cfg2)
        path = tmp_path / "mid.npz"
        save_checkpoint(path, first.params, first.opt, first.hub, "h", epoch=2)
        params, opt, hub, meta = load_checkpoint(path)
        tensor, cfg4 = small_train_setup(epochs=4)
        resumed = fit(tensor, cfg4, params=params, opt=opt, hub=hub, start_epoch=meta["epoch"])

        for (name, arr_a), (_, arr_b) in zip(
            param_items(straight.params), param_items(resumed.params)
        ):
            assert np.array_equal(arr_a, arr_b), name
