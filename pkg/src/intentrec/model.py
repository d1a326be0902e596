"""Parameter tables, the residual multi-order forward pass, and scoring.

One layer couples the two node sides: user-side behavior embeddings are
propagated from the previous item-side state and vice versa, each side then
runs the per-behavior hypergraph pass on its fresh behavior embeddings, and
the layer output is the residual sum z_sum + h_sum + previous. Final
embeddings sum the order-0 base tables and every layer output.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericOverflowError, RangeError, ShapeError
from .graph import BehaviorAdjacency, DropoutSpec, PropagateResult, relation_propagate
from .hypergraph import (
    CorruptState,
    HyperIncidence,
    HyperState,
    corrupt_forward,
    hyper_incidence,
    hyper_propagate,
)
from .rng import RngHub

USER, ITEM = "user", "item"


@dataclass
class Dims:
    num_users: int
    num_items: int
    num_behaviors: int
    num_hyperedges: int
    dim: int
    layers: int
    target_behavior: int
    slope: float = 0.5

    def validate(self) -> None:
        for name in ("num_users", "num_items", "num_behaviors", "num_hyperedges", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if not 0 <= self.target_behavior < self.num_behaviors:
            raise ConfigError("target_behavior out of range")

    def aux_behaviors(self) -> list:
        return [k for k in range(self.num_behaviors) if k != self.target_behavior]


@dataclass
class ModelParams:
    """Every trainable table. Meta tables exist per (layer, auxiliary
    behavior, side); the target behavior is never transformed."""

    dims: Dims
    user_emb: np.ndarray  # (I, d)
    item_emb: np.ndarray  # (J, d)
    hyper_user: list  # k -> (E, d)
    hyper_item: list  # k -> (E, d)
    meta_w: dict  # (side, layer, k) -> (d, d)
    meta_b: dict  # (side, layer, k) -> (d,)
    version: int = 0

    def bump_version(self) -> None:
        self.version += 1


def param_items(params: ModelParams) -> list:
    """Canonical (name, array) pairs; the single source of ordering for
    optimizer state, checkpoints, regularization, and gradient checks."""
    items = [("user_emb", params.user_emb), ("item_emb", params.item_emb)]
    for k, tab in enumerate(params.hyper_user):
        items.append((f"hyper_user_k{k}", tab))
    for k, tab in enumerate(params.hyper_item):
        items.append((f"hyper_item_k{k}", tab))
    for key in sorted(params.meta_w):
        side, layer, k = key
        items.append((f"meta_w_{side}_l{layer}_k{k}", params.meta_w[key]))
    for key in sorted(params.meta_b):
        side, layer, k = key
        items.append((f"meta_b_{side}_l{layer}_k{k}", params.meta_b[key]))
    return items


def get_param(params: ModelParams, name: str) -> np.ndarray:
    for pname, arr in param_items(params):
        if pname == name:
            return arr
    raise KeyError(name)


def init_params(dims: Dims, hub: RngHub, dtype=np.float64) -> ModelParams:
    """Uniform init in [-1/sqrt(d), 1/sqrt(d)] for every table, drawn from
    the "init" stream in a fixed order."""
    dims.validate()
    rng = hub.stream("init")
    bound = 1.0 / np.sqrt(dims.dim)

    def table(*shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    user_emb = table(dims.num_users, dims.dim)
    item_emb = table(dims.num_items, dims.dim)
    hyper_user = [table(dims.num_hyperedges, dims.dim) for _ in range(dims.num_behaviors)]
    hyper_item = [table(dims.num_hyperedges, dims.dim) for _ in range(dims.num_behaviors)]
    meta_w, meta_b = {}, {}
    for side in (USER, ITEM):
        for layer in range(1, dims.layers + 1):
            for k in dims.aux_behaviors():
                meta_w[(side, layer, k)] = table(dims.dim, dims.dim)
                meta_b[(side, layer, k)] = table(dims.dim)
    return ModelParams(
        dims=dims,
        user_emb=user_emb,
        item_emb=item_emb,
        hyper_user=hyper_user,
        hyper_item=hyper_item,
        meta_w=meta_w,
        meta_b=meta_b,
    )


@dataclass
class SideLayerState:
    """Cached activations of one (side, layer)."""

    prop: PropagateResult
    incidences: list | None  # k -> HyperIncidence, None when intents disabled
    hyper: list | None  # k -> HyperState
    h_sum: np.ndarray | None
    corrupt: CorruptState | None  # target-behavior corrupted view (graph CL)

    def readouts(self) -> np.ndarray:
        return np.stack([h.readout for h in self.hyper], axis=0)


@dataclass
class LayerState:
    user: SideLayerState
    item: SideLayerState

    def side(self, name: str) -> SideLayerState:
        return self.user if name == USER else self.item


@dataclass
class ForwardState:
    """Everything backward needs: per-layer activations plus the final sums."""

    dims: Dims
    lambdas_user: list  # l = 0..L
    lambdas_item: list
    layers: list  # l = 1..L -> LayerState
    psi_user: np.ndarray
    psi_item: np.ndarray
    dropout_active: bool
    params_version: int
    no_intents: bool
    corrupt_sides: tuple

    def corruption_perms(self) -> list:
        perms = []
        for layer in self.layers:
            entry = {}
            for side in self.corrupt_sides:
                st = layer.side(side).corrupt
                if st is not None:
                    entry[side] = st.perm
            perms.append(entry)
        return perms


def _check_finite(arr: np.ndarray, layer: int, side: str, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericOverflowError(
            f"non-finite values in {what} at layer {layer}, {side} side"
        )


def forward(
    params: ModelParams,
    adj: BehaviorAdjacency,
    drop: DropoutSpec,
    hub: RngHub,
    no_intents: bool = False,
    corrupt_sides: tuple = (USER,),
    reuse_perms: list | None = None,
) -> ForwardState:
    """Run the full multi-order pass and cache every intermediate.

    Corruption permutations for the graph-level contrastive view are drawn
    here (one per layer and corrupted side) from the "corruption" stream;
    pass reuse_perms to pin them, e.g. when probing the loss for a
    finite-difference check.
    """
    dims = params.dims
    if adj.num_users != dims.num_users or adj.num_items != dims.num_items:
        raise ShapeError("adjacency and parameter dimensions disagree")
    lam_u = [params.user_emb]
    lam_v = [params.item_emb]
    layers = []
    drop_rng = hub.stream("dropout")
    corr_rng = hub.stream("corruption")
    for layer in range(1, dims.layers + 1):
        sides = {}
        for side in (USER, ITEM):
            if side == USER:
                mats, src = adj.by_user, lam_v[-1]
                tables = params.hyper_user
            else:
                mats, src = adj.by_item, lam_u[-1]
                tables = params.hyper_item
            prop = relation_propagate(mats, src, drop, drop_rng)
            _check_finite(prop.z_sum, layer, side, "behavior embeddings")
            incidences = hyper = h_sum = corrupt = None
            if not no_intents:
                incidences, hyper = [], []
                h_sum = np.zeros_like(prop.z_sum)
                for k in range(dims.num_behaviors):
                    inc = hyper_incidence(prop.z_per_behavior[k], tables[k])
                    st = hyper_propagate(inc, prop.z_per_behavior[k], dims.slope)
                    _check_finite(st.h, layer, side, f"hypergraph output (behavior {k})")
                    incidences.append(inc)
                    hyper.append(st)
                    h_sum += st.h
                if side in corrupt_sides:
                    kt = dims.target_behavior
                    perm = None
                    if reuse_perms is not None:
                        perm = reuse_perms[layer - 1].get(side)
                    corrupt = corrupt_forward(
                        incidences[kt],
                        prop.z_per_behavior[kt],
                        dims.slope,
                        corr_rng,
                        perm=perm,
                    )
            sides[side] = SideLayerState(
                prop=prop, incidences=incidences, hyper=hyper, h_sum=h_sum, corrupt=corrupt
            )
        # canonical addition order z + h + prev keeps the residual identity
        # bitwise-checkable
        new_u = sides[USER].prop.z_sum
        if sides[USER].h_sum is not None:
            new_u = new_u + sides[USER].h_sum
        new_u = new_u + lam_u[-1]
        new_v = sides[ITEM].prop.z_sum
        if sides[ITEM].h_sum is not None:
            new_v = new_v + sides[ITEM].h_sum
        new_v = new_v + lam_v[-1]
        lam_u.append(new_u)
        lam_v.append(new_v)
        layers.append(LayerState(user=sides[USER], item=sides[ITEM]))

    psi_u = np.zeros_like(params.user_emb)
    for lam in lam_u:
        psi_u += lam
    psi_v = np.zeros_like(params.item_emb)
    for lam in lam_v:
        psi_v += lam
    return ForwardState(
        dims=dims,
        lambdas_user=lam_u,
        lambdas_item=lam_v,
        layers=layers,
        psi_user=psi_u,
        psi_item=psi_v,
        dropout_active=drop.active,
        params_version=params.version,
        no_intents=no_intents,
        corrupt_sides=corrupt_sides if not no_intents else (),
    )


def predict(state: ForwardState, user: int, item: int) -> float:
    """Dot-product score of one (user, item) pair."""
    if not 0 <= user < state.dims.num_users:
        raise RangeError(f"user {user} out of range")
    if not 0 <= item < state.dims.num_items:
        raise RangeError(f"item {item} out of range")
    return float(state.psi_user[user] @ state.psi_item[item])


def score_items(state: ForwardState, user: int, items: np.ndarray) -> np.ndarray:
    """Scores of one user against a list of candidate items."""
    if not 0 <= user < state.dims.num_users:
        raise RangeError(f"user {user} out of range")
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= state.dims.num_items):
        raise RangeError("item id out of range")
    return state.psi_item[items] @ state.psi_user[user]


def export_embeddings(state: ForwardState, user_path, item_path) -> None:
    """Write final embeddings as CSV `node_id, dim_0..dim_{d-1}` per side."""
    for path, mat in ((user_path, state.psi_user), (item_path, state.psi_item)):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("node_id," + ",".join(f"dim_{t}" for t in range(mat.shape[1])) + "\n")
            for idx, row in enumerate(mat):
                fh.write(str(idx) + "," + ",".join(repr(float(x)) for x in row) + "\n")
