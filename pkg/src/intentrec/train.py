"""Joint objective, handwritten reverse-mode gradients, optimizer, epochs.

The objective is
    hinge(batch) + l1 * ||params||_F^2 + l2 * node_cl + l3 * graph_cl
with the contrastive terms computed per layer (averaged) and per side
(summed), over the users/items of the current batch unless cl_scope="all".
backward() produces exact gradients for every parameter table by walking the
cached ForwardState in reverse; grad_check() is the central-difference
oracle that certifies it.
"""

import json
import re
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import counters
from .contrast import (
    SIDE_CHOICES,
    ContrastConfig,
    graph_cl_with_grads,
    meta_transform,
    meta_transform_backward,
    node_cl_with_grads,
)
from .data import InteractionTensor, PairBatch, sample_pairs
from .errors import (
    ConfigError,
    DivergenceError,
    NumericOverflowError,
    ShapeError,
    StaleStateError,
)
from .graph import OFF, BehaviorAdjacency, DropoutSpec, build_adjacency, propagate_backward
from .hypergraph import corrupt_backward, hyper_backward
from .model import (
    ITEM,
    USER,
    Dims,
    ForwardState,
    ModelParams,
    forward,
    init_params,
    param_items,
)
from .rng import RngHub


@dataclass
class LossConfig:
    """Weights and switches of the joint objective (no training-loop knobs)."""

    reg_weight: float = 1e-4
    node_cl_weight: float = 1e-5
    graph_cl_weight: float = 1e-5
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    no_node_cl: bool = False
    no_graph_cl: bool = False
    no_meta: bool = False
    no_intents: bool = False
    cl_scope: str = "batch"  # "batch" or "all"

    def validate(self) -> None:
        if min(self.reg_weight, self.node_cl_weight, self.graph_cl_weight) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.cl_scope not in ("batch", "all"):
            raise ConfigError("cl_scope must be 'batch' or 'all'")
        self.contrast.validate()

    def corrupt_sides(self) -> tuple:
        if self.no_graph_cl or self.no_intents:
            return ()
        return SIDE_CHOICES[self.graph_cl_sides_tuple_key()]

    def graph_cl_sides_tuple_key(self) -> str:
        return self.contrast.graph_cl_sides


@dataclass
class TrainConfig:
    """Full training configuration; spec-default values."""

    dim: int = 32
    hyperedges: int = 32
    layers: int = 2
    slope: float = 0.5
    pairs_per_user: int = 1
    batch_size: int = 256
    keep_prob: float = 0.8
    lr: float = 1e-3
    epochs: int = 30
    reg_weight: float = 1e-4
    node_cl_weight: float = 1e-5
    graph_cl_weight: float = 1e-5
    temperature: float = 0.5
    seed: int = 0
    no_node_cl: bool = False
    no_graph_cl: bool = False
    no_meta: bool = False
    no_intents: bool = False
    node_cl_sides: str = "both"
    graph_cl_sides: str = "user"
    include_positive: bool = True
    cl_scope: str = "batch"

    def validate(self) -> None:
        if min(self.dim, self.hyperedges, self.pairs_per_user, self.batch_size) < 1:
            raise ConfigError("dim, hyperedges, pairs_per_user, batch_size must be >= 1")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must be in (0, 1]")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 1e-5 <= self.reg_weight <= 1e-2:
            raise ConfigError("reg_weight outside [1e-5, 1e-2]")
        for name in ("node_cl_weight", "graph_cl_weight"):
            val = getattr(self, name)
            if not 1e-7 <= val <= 1e-4:
                raise ConfigError(f"{name} outside [1e-7, 1e-4]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        self.to_loss_config().validate()

    def to_loss_config(self) -> LossConfig:
        return LossConfig(
            reg_weight=self.reg_weight,
            node_cl_weight=self.node_cl_weight,
            graph_cl_weight=self.graph_cl_weight,
            contrast=ContrastConfig(
                temperature=self.temperature,
                node_cl_sides=self.node_cl_sides,
                graph_cl_sides=self.graph_cl_sides,
                include_positive_in_denominator=self.include_positive,
            ),
            no_node_cl=self.no_node_cl,
            no_graph_cl=self.no_graph_cl,
            no_meta=self.no_meta,
            no_intents=self.no_intents,
            cl_scope=self.cl_scope,
        )

    def dims_for(self, tensor: InteractionTensor) -> Dims:
        return Dims(
            num_users=tensor.num_users,
            num_items=tensor.num_items,
            num_behaviors=tensor.num_behaviors,
            num_hyperedges=self.hyperedges,
            dim=self.dim,
            layers=self.layers,
            target_behavior=tensor.target_behavior,
            slope=self.slope,
        )


def hinge_loss(pos_scores, neg_scores) -> float:
    """Sum of max(0, 1 - (pos - neg)) over paired score lists."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ShapeError(f"score lists differ in shape: {pos.shape} vs {neg.shape}")
    return float(np.maximum(0.0, 1.0 - (pos - neg)).sum())


@dataclass
class LossBreakdown:
    """Raw component values; total applies the configured weights."""

    hinge: float
    reg: float
    node_cl: float
    graph_cl: float
    total: float

    def as_dict(self) -> dict:
        return {
            "hinge": self.hinge,
            "reg": self.reg,
            "node_cl": self.node_cl,
            "graph_cl": self.graph_cl,
            "total": self.total,
        }


def _batch_scores(state: ForwardState, batch: PairBatch):
    u = batch.entries[:, 0]
    p = batch.entries[:, 1]
    n = batch.entries[:, 2]
    pos = np.sum(state.psi_user[u] * state.psi_item[p], axis=1)
    neg = np.sum(state.psi_user[u] * state.psi_item[n], axis=1)
    return pos, neg


def _cl_ids(state: ForwardState, batch: PairBatch, cfg: LossConfig, side: str):
    if cfg.cl_scope == "all":
        count = state.dims.num_users if side == USER else state.dims.num_items
        return np.arange(count)
    if side == USER:
        return np.unique(batch.entries[:, 0])
    return np.unique(batch.entries[:, 1:3])


def _node_cl_active(state: ForwardState, batch: PairBatch, cfg: LossConfig) -> bool:
    return (
        not cfg.no_node_cl
        and not state.no_intents
        and state.dims.layers > 0
        and batch.entries.size > 0
    )


def _graph_cl_active(state: ForwardState, batch: PairBatch, cfg: LossConfig) -> bool:
    return (
        not cfg.no_graph_cl
        and not state.no_intents
        and state.dims.layers > 0
        and batch.entries.size > 0
    )


def _adapted_embeddings(state, params, cfg, side, layer_idx, ids):
    """Meta-adapted behavior embeddings restricted to the given rows.

    Returns (embeddings dict, meta cache dict) where the cache holds the
    per-behavior (rows, MetaResult) pairs needed by the backward pass.
    """
    dims = state.dims
    ss = state.layers[layer_idx - 1].side(side)
    embs, cache = {}, {}
    for k in range(dims.num_behaviors):
        rows = ss.hyper[k].h[ids]
        if k == dims.target_behavior or cfg.no_meta:
            embs[k] = rows
            cache[k] = None
        else:
            w = params.meta_w[(side, layer_idx, k)]
            b = params.meta_b[(side, layer_idx, k)]
            res = meta_transform(rows, w, b, dims.slope, cfg.contrast.eps)
            embs[k] = res.h_tilde
            cache[k] = res
    return embs, cache


def _graph_readouts(state, side, layer_idx):
    ss = state.layers[layer_idx - 1].side(side)
    readouts = {k: ss.hyper[k].readout for k in range(state.dims.num_behaviors)}
    if ss.corrupt is None:
        raise ConfigError(
            f"graph CL requires corruption on the {side} side; forward ran without it"
        )
    corrupted = {state.dims.target_behavior: ss.corrupt.readout}
    return readouts, corrupted


def total_loss(
    state: ForwardState, params: ModelParams, batch: PairBatch, cfg: LossConfig
):
    """Evaluate the joint objective. Returns (total, LossBreakdown)."""
    cfg.validate()
    dims = state.dims
    pos, neg = _batch_scores(state, batch) if batch.entries.size else (np.zeros(0), np.zeros(0))
    hinge = hinge_loss(pos, neg)

    reg = 0.0
    for _, arr in param_items(params):
        reg += float(np.sum(arr * arr))

    node_cl = 0.0
    if _node_cl_active(state, batch, cfg):
        for side in SIDE_CHOICES[cfg.contrast.node_cl_sides]:
            ids = _cl_ids(state, batch, cfg, side)
            if len(ids) == 0:
                continue
            side_loss = 0.0
            for layer_idx in range(1, dims.layers + 1):
                embs, _ = _adapted_embeddings(state, params, cfg, side, layer_idx, ids)
                loss, _ = node_cl_with_grads(embs, dims.target_behavior, cfg.contrast)
                side_loss += loss
            node_cl += side_loss / dims.layers

    graph_cl = 0.0
    if _graph_cl_active(state, batch, cfg):
        for side in SIDE_CHOICES[cfg.contrast.graph_cl_sides]:
            side_loss = 0.0
            for layer_idx in range(1, dims.layers + 1):
                readouts, corrupted = _graph_readouts(state, side, layer_idx)
                loss, _, _ = graph_cl_with_grads(
                    readouts, corrupted, dims.target_behavior, cfg.contrast.eps
                )
                side_loss += loss
            graph_cl += side_loss / dims.layers

    total = (
        hinge
        + cfg.reg_weight * reg
        + cfg.node_cl_weight * node_cl
        + cfg.graph_cl_weight * graph_cl
    )
    return total, LossBreakdown(
        hinge=hinge, reg=reg, node_cl=node_cl, graph_cl=graph_cl, total=total
    )


def zero_grads(params: ModelParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in param_items(params)}


def backward(
    state: ForwardState, params: ModelParams, batch: PairBatch, cfg: LossConfig
) -> dict:
    """Exact gradients of total_loss w.r.t. every parameter table.

    Requires the state produced by forward() on the current params (same
    dropout masks, same corruption permutations).
    """
    cfg.validate()
    if state.params_version != params.version:
        raise StaleStateError(
            "parameters were updated after the forward pass; rerun forward"
        )
    dims = state.dims
    kt = dims.target_behavior
    grads = zero_grads(params)

    # Pairwise hinge: only margin-violating pairs carry gradient; exact
    # margin equality is treated as inactive.
    d_psi_u = np.zeros_like(state.psi_user)
    d_psi_v = np.zeros_like(state.psi_item)
    if batch.entries.size:
        pos, neg = _batch_scores(state, batch)
        active = (1.0 - (pos - neg)) > 0.0
        au = batch.entries[active, 0]
        ap = batch.entries[active, 1]
        an = batch.entries[active, 2]
        np.add.at(d_psi_u, au, state.psi_item[an] - state.psi_item[ap])
        np.add.at(d_psi_v, ap, -state.psi_user[au])
        np.add.at(d_psi_v, an, state.psi_user[au])

    if cfg.reg_weight:
        for name, arr in param_items(params):
            grads[name] += 2.0 * cfg.reg_weight * arr

    # Node-level CL: gradients land on the hypergraph outputs H_k (scattered
    # back to full row sets) and on the meta tables.
    node_dh = {}
    if _node_cl_active(state, batch, cfg) and cfg.node_cl_weight:
        scale = cfg.node_cl_weight / dims.layers
        for side in SIDE_CHOICES[cfg.contrast.node_cl_sides]:
            ids = _cl_ids(state, batch, cfg, side)
            if len(ids) == 0:
                continue
            for layer_idx in range(1, dims.layers + 1):
                embs, cache = _adapted_embeddings(state, params, cfg, side, layer_idx, ids)
                _, gl = node_cl_with_grads(embs, kt, cfg.contrast)
                ss = state.layers[layer_idx - 1].side(side)
                for k in range(dims.num_behaviors):
                    d_ht = gl[k] * scale
                    if cache[k] is None:
                        d_rows = d_ht
                    else:
                        rows = ss.hyper[k].h[ids]
                        w = params.meta_w[(side, layer_idx, k)]
                        d_rows, d_w, d_b = meta_transform_backward(
                            rows, w, cache[k], d_ht, dims.slope, cfg.contrast.eps
                        )
                        grads[f"meta_w_{side}_l{layer_idx}_k{k}"] += d_w
                        grads[f"meta_b_{side}_l{layer_idx}_k{k}"] += d_b
                    key = (side, layer_idx, k)
                    if key not in node_dh:
                        shape = (
                            dims.num_users if side == USER else dims.num_items,
                            dims.dim,
                        )
                        node_dh[key] = np.zeros(shape, dtype=d_rows.dtype)
                    np.add.at(node_dh[key], ids, d_rows)

    # Graph-level CL: gradients land on hyperedge embeddings (broadcast of
    # the readout gradient) plus, through the corrupted view, on the
    # stabilized incidence and Z of the target behavior.
    gamma_ext, stab_ext, z_ext = {}, {}, {}
    if _graph_cl_active(state, batch, cfg) and cfg.graph_cl_weight:
        scale = cfg.graph_cl_weight / dims.layers
        for side in SIDE_CHOICES[cfg.contrast.graph_cl_sides]:
            for layer_idx in range(1, dims.layers + 1):
                readouts, corrupted = _graph_readouts(state, side, layer_idx)
                _, d_r, d_c = graph_cl_with_grads(
                    readouts, corrupted, kt, cfg.contrast.eps
                )
                e = dims.num_hyperedges
                for k, vec in d_r.items():
                    key = (side, layer_idx, k)
                    ext = np.broadcast_to(vec * scale, (e, dims.dim)).copy()
                    gamma_ext[key] = gamma_ext.get(key, 0) + ext
                ss = state.layers[layer_idx - 1].side(side)
                d_gamma_c = np.broadcast_to(d_c * scale, (e, dims.dim))
                d_stab, d_z = corrupt_backward(
                    ss.incidences[kt],
                    ss.prop.z_per_behavior[kt],
                    ss.corrupt,
                    dims.slope,
                    d_gamma_c,
                )
                skey = (side, layer_idx)
                stab_ext[skey] = stab_ext.get(skey, 0) + d_stab
                z_ext[skey] = z_ext.get(skey, 0) + d_z

    # Walk layers in reverse. g_u/g_v hold the complete gradient at the
    # current layer's lambda; each step peels off one layer and adds the
    # direct contribution of the next lower lambda to psi.
    g_u = d_psi_u.copy()
    g_v = d_psi_v.copy()
    for layer_idx in range(dims.layers, 0, -1):
        layer = state.layers[layer_idx - 1]
        from_user_side = from_item_side = None
        for side in (USER, ITEM):
            ss = layer.side(side)
            g_side = g_u if side == USER else g_v
            tables = params.hyper_user if side == USER else params.hyper_item
            table_prefix = "hyper_user" if side == USER else "hyper_item"
            dz_list = []
            for k in range(dims.num_behaviors):
                dz = g_side.copy()
                if not state.no_intents:
                    d_h = g_side
                    key = (side, layer_idx, k)
                    if key in node_dh:
                        d_h = d_h + node_dh[key]
                    d_z_hyper, d_w = hyper_backward(
                        ss.incidences[k],
                        ss.prop.z_per_behavior[k],
                        tables[k],
                        ss.hyper[k],
                        dims.slope,
                        d_h,
                        d_gamma_ext=gamma_ext.get(key),
                        d_stab_ext=stab_ext.get((side, layer_idx)) if k == kt else None,
                        d_z_ext=z_ext.get((side, layer_idx)) if k == kt else None,
                    )
                    grads[f"{table_prefix}_k{k}"] += d_w
                    dz = dz + d_z_hyper
                dz_list.append(dz)
            prev_grad = propagate_backward(ss.prop.masked_mats, dz_list)
            if side == USER:
                from_user_side = prev_grad  # lands on item-side lambda
            else:
                from_item_side = prev_grad  # lands on user-side lambda
        g_u = g_u + from_item_side + d_psi_u
        g_v = g_v + from_user_side + d_psi_v
    grads["user_emb"] += g_u
    grads["item_emb"] += g_v
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in param_items(params)},
        v={name: np.zeros_like(arr) for name, arr in param_items(params)},
    )


def adam_step(
    params: ModelParams,
    grads: dict,
    opt: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Standard bias-corrected update, in place; bumps the params version."""
    opt.t += 1
    bc1 = 1.0 - beta1**opt.t
    bc2 = 1.0 - beta2**opt.t
    for name, arr in param_items(params):
        g = grads[name]
        opt.m[name] = beta1 * opt.m[name] + (1.0 - beta1) * g
        opt.v[name] = beta2 * opt.v[name] + (1.0 - beta2) * (g * g)
        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.bump_version()
    return opt


@dataclass
class EpochStats:
    epoch: int
    hinge: float
    reg: float
    node_cl: float
    graph_cl: float
    total: float
    batches: int
    wall_time: float
    graph_macs: int
    hyper_macs: int
    contrast_macs: int

    def as_dict(self) -> dict:
        return self.__dict__.copy()


def train_epoch(
    params: ModelParams,
    adj: BehaviorAdjacency,
    train: InteractionTensor,
    cfg: TrainConfig,
    hub: RngHub,
    opt: AdamState,
    epoch: int = 0,
) -> EpochStats:
    """One pass over shuffled user batches: sample, forward, loss, backward,
    Adam. Raises DivergenceError on a non-finite loss."""
    loss_cfg = cfg.to_loss_config()
    drop = DropoutSpec(keep_prob=cfg.keep_prob, enabled=True)
    target_sets = train.target_sets()
    eligible = np.array(
        [u for u in range(train.num_users) if len(target_sets[u]) > 0], dtype=np.int64
    )
    order = hub.stream("batching").permutation(len(eligible))
    shuffled = eligible[order]

    start = time.perf_counter()
    macs0 = counters.snapshot()
    sums = {"hinge": 0.0, "reg": 0.0, "node_cl": 0.0, "graph_cl": 0.0, "total": 0.0}
    batches = 0
    for lo in range(0, len(shuffled), cfg.batch_size):
        chunk = shuffled[lo : lo + cfg.batch_size]
        batch = sample_pairs(train, cfg.pairs_per_user, hub.stream("negatives"), users=chunk)
        state = forward(
            params,
            adj,
            drop,
            hub,
            no_intents=cfg.no_intents,
            corrupt_sides=loss_cfg.corrupt_sides(),
        )
        total, bd = total_loss(state, params, batch, loss_cfg)
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {batches}")
        grads = backward(state, params, batch, loss_cfg)
        adam_step(params, grads, opt, cfg.lr)
        for key in sums:
            sums[key] += getattr(bd, key)
        batches += 1
    macs1 = counters.snapshot()
    return EpochStats(
        epoch=epoch,
        hinge=sums["hinge"],
        reg=sums["reg"],
        node_cl=sums["node_cl"],
        graph_cl=sums["graph_cl"],
        total=sums["total"],
        batches=batches,
        wall_time=time.perf_counter() - start,
        graph_macs=macs1.get(counters.GRAPH, 0) - macs0.get(counters.GRAPH, 0),
        hyper_macs=macs1.get(counters.HYPER, 0) - macs0.get(counters.HYPER, 0),
        contrast_macs=macs1.get(counters.CONTRAST, 0) - macs0.get(counters.CONTRAST, 0),
    )


@dataclass
class TrainResult:
    params: ModelParams
    opt: AdamState
    hub: RngHub
    adj: BehaviorAdjacency
    epoch_stats: list
    diverged: bool = False


def fit(
    train: InteractionTensor,
    cfg: TrainConfig,
    params: ModelParams | None = None,
    opt: AdamState | None = None,
    hub: RngHub | None = None,
    start_epoch: int = 0,
    epoch_callback=None,
) -> TrainResult:
    """Train for cfg.epochs epochs (resumable via params/opt/hub/start_epoch)."""
    cfg.validate()
    adj = build_adjacency(train)
    if hub is None:
        hub = RngHub(cfg.seed)
    if params is None:
        params = init_params(cfg.dims_for(train), hub)
    if opt is None:
        opt = init_adam(params)
    stats = []
    diverged = False
    for epoch in range(start_epoch, cfg.epochs):
        try:
            st = train_epoch(params, adj, train, cfg, hub, opt, epoch=epoch)
        except DivergenceError:
            diverged = True
            break
        stats.append(st)
        if epoch_callback is not None:
            epoch_callback(epoch, params, opt, hub, st)
    return TrainResult(
        params=params, opt=opt, hub=hub, adj=adj, epoch_stats=stats, diverged=diverged
    )


# -- gradient oracle ----------------------------------------------------------


@dataclass
class GradCheckReport:
    groups: dict  # name -> {rel, max_entry_rel, mean_entry_rel, max_abs, grad_scale, checked}
    max_rel: float  # worst per-group relative error
    max_entry_rel: float  # worst per-entry relative error (floored denominator)
    excluded_pairs: int
    checked_entries: int
    min_kink_margin: float

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_rel < tol

    def as_dict(self) -> dict:
        return {
            "groups": self.groups,
            "max_rel": self.max_rel,
            "max_entry_rel": self.max_entry_rel,
            "excluded_pairs": self.excluded_pairs,
            "checked_entries": self.checked_entries,
            "min_kink_margin": self.min_kink_margin,
        }


def _kink_margin(state: ForwardState) -> float:
    """Smallest nonzero |pre-activation| over every cached LeakyReLU input.

    Exact zeros are structural (rows of isolated nodes stay identically zero
    under any perturbation) and cannot flip; a nonzero margin far above the
    probe step guarantees no activation flips during probing."""
    margin = np.inf

    def update(arr):
        nonlocal margin
        nz = np.abs(arr[arr != 0.0])
        if nz.size:
            margin = min(margin, float(nz.min()))

    for layer in state.layers:
        for side in (USER, ITEM):
            ss = layer.side(side)
            if ss.hyper is None:
                continue
            for st in ss.hyper:
                update(st.gamma_pre)
                update(st.h_pre)
            if ss.corrupt is not None:
                update(ss.corrupt.gamma_pre)
    return margin


def grad_check(
    params: ModelParams,
    adj: BehaviorAdjacency,
    batch: PairBatch,
    cfg: LossConfig,
    step: float = 1e-5,
    hub: RngHub | None = None,
    max_entries_per_group: int | None = None,
    rel_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare backward() with central finite differences entry by entry.

    Runs with dropout disabled and pinned corruption permutations so the
    probed loss is a deterministic smooth function of the parameters. Pairs
    whose hinge margin sits within 10*step of the kink are excluded from the
    compared objective. Large tables can be subsampled with a seeded draw.

    The headline number per parameter group is the vector-level relative
    error max|analytic - fd| / max(|analytic|, |fd|) over the group; a
    per-entry relative error with a floored denominator (entries whose
    gradients sit below rel_floor are compared absolutely against
    rel_floor * tolerance, the double-precision noise floor of the probe)
    is reported alongside.
    """
    if hub is None:
        hub = RngHub(0)
    sides = cfg.corrupt_sides()
    state = forward(params, adj, OFF, hub, no_intents=cfg.no_intents, corrupt_sides=sides)
    perms = state.corruption_perms()

    excluded = 0
    if batch.entries.size:
        pos, neg = _batch_scores(state, batch)
        keep = np.abs(1.0 - (pos - neg)) >= 10.0 * step
        excluded = int((~keep).sum())
        batch = PairBatch(entries=batch.entries[keep], pairs_per_user=batch.pairs_per_user)

    analytic = backward(state, params, batch, cfg)
    min_margin = _kink_margin(state)

    def loss_at() -> float:
        st = forward(
            params, adj, OFF, hub,
            no_intents=cfg.no_intents, corrupt_sides=sides, reuse_perms=perms,
        )
        val, _ = total_loss(st, params, batch, cfg)
        if not np.isfinite(val):
            raise NumericOverflowError("non-finite loss during finite-difference probe")
        return val

    pick_rng = hub.stream("gradcheck")
    groups = {}
    overall_group = 0.0
    overall_entry = 0.0
    checked_total = 0
    for name, arr in param_items(params):
        flat = arr.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_group is not None and flat.size > max_entries_per_group:
            idxs = np.sort(
                pick_rng.choice(flat.size, size=max_entries_per_group, replace=False)
            )
        a_flat = analytic[name].reshape(-1)
        max_entry = mean_entry = max_abs = grad_scale = 0.0
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + step
            lp = loss_at()
            flat[idx] = orig - step
            lm = loss_at()
            flat[idx] = orig
            fd = (lp - lm) / (2.0 * step)
            a = float(a_flat[idx])
            abs_err = abs(a - fd)
            grad_scale = max(grad_scale, abs(a), abs(fd))
            rel = abs_err / max(abs(a), abs(fd), rel_floor)
            max_entry = max(max_entry, rel)
            mean_entry += rel
            max_abs = max(max_abs, abs_err)
        group_rel = max_abs / max(grad_scale, rel_floor)
        groups[name] = {
            "rel": group_rel,
            "max_entry_rel": max_entry,
            "mean_entry_rel": mean_entry / max(len(idxs), 1),
            "max_abs": max_abs,
            "grad_scale": grad_scale,
            "checked": int(len(idxs)),
        }
        overall_group = max(overall_group, group_rel)
        overall_entry = max(overall_entry, max_entry)
        checked_total += len(idxs)
    return GradCheckReport(
        groups=groups,
        max_rel=overall_group,
        max_entry_rel=overall_entry,
        excluded_pairs=excluded,
        checked_entries=checked_total,
        min_kink_margin=min_margin,
    )


# -- checkpointing -------------------------------------------------------------

CHECKPOINT_FORMAT = 1
_META_KEY_RE = re.compile(r"^meta_(w|b)_(user|item)_l(\d+)_k(\d+)$")


def save_checkpoint(
    path,
    params: ModelParams,
    opt: AdamState,
    hub: RngHub,
    config_hash: str = "",
    epoch: int = 0,
) -> None:
    """Versioned npz container: parameter tables, Adam moments, RNG stream
    positions, and run metadata. Reloading resumes bitwise-identically."""
    arrays = {}
    for name, arr in param_items(params):
        arrays[f"param/{name}"] = arr
        arrays[f"adam_m/{name}"] = opt.m[name]
        arrays[f"adam_v/{name}"] = opt.v[name]
    dims = params.dims
    meta = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "config_hash": config_hash,
        "adam_t": opt.t,
        "params_version": params.version,
        "dims": {
            "num_users": dims.num_users,
            "num_items": dims.num_items,
            "num_behaviors": dims.num_behaviors,
            "num_hyperedges": dims.num_hyperedges,
            "dim": dims.dim,
            "layers": dims.layers,
            "target_behavior": dims.target_behavior,
            "slope": dims.slope,
        },
        "rng": hub.state_dict(),
    }
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (params, opt, hub, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format: {meta.get('format')}")
        dims = Dims(**meta["dims"])
        hyper_user = [data[f"param/hyper_user_k{k}"] for k in range(dims.num_behaviors)]
        hyper_item = [data[f"param/hyper_item_k{k}"] for k in range(dims.num_behaviors)]
        meta_w, meta_b = {}, {}
        m_state, v_state = {}, {}
        for key in data.files:
            if not key.startswith("param/"):
                continue
            name = key[len("param/") :]
            match = _META_KEY_RE.match(name)
            if match:
                kind, side, layer, k = match.groups()
                target = meta_w if kind == "w" else meta_b
                target[(side, int(layer), int(k))] = data[key]
        params = ModelParams(
            dims=dims,
            user_emb=data["param/user_emb"],
            item_emb=data["param/item_emb"],
            hyper_user=hyper_user,
            hyper_item=hyper_item,
            meta_w=meta_w,
            meta_b=meta_b,
            version=int(meta["params_version"]),
        )
        for name, _ in param_items(params):
            m_state[name] = data[f"adam_m/{name}"]
            v_state[name] = data[f"adam_v/{name}"]
        opt = AdamState(m=m_state, v=v_state, t=int(meta["adam_t"]))
    hub = RngHub(int(meta["rng"]["seed"]))
    hub.load_state_dict(meta["rng"])
    return params, opt, hub, meta
