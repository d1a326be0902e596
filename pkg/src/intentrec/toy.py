"""Small random problem instances for gradient checks, diagnostics and demos."""

from dataclasses import dataclass

import numpy as np

from .data import InteractionTensor, PairBatch, sample_pairs
from .graph import BehaviorAdjacency, build_adjacency
from .model import Dims, ModelParams, init_params
from .rng import RngHub, SeededRng


def random_tensor(
    num_users: int,
    num_items: int,
    num_behaviors: int,
    density: float = 0.45,
    seed: int = 0,
    ensure_target: bool = True,
) -> InteractionTensor:
    """Dense-ish random multi-behavior tensor; optionally guarantees every
    user at least one target interaction so pair sampling never starves."""
    rng = SeededRng(seed, "toy")
    target = num_behaviors - 1
    rows = []
    for k in range(num_behaviors):
        mask = rng.random((num_users, num_items)) < density
        us, vs = np.nonzero(mask)
        rows.extend((int(u), int(v), k) for u, v in zip(us, vs))
    have_target = {u for u, _, k in rows if k == target}
    if ensure_target:
        for u in range(num_users):
            if u not in have_target:
                v = int(rng.integers(0, num_items))
                rows.append((u, v, target))
    # keep at least one non-target item per user so negatives always exist
    for u in range(num_users):
        items = {v for uu, v, k in rows if uu == u and k == target}
        if len(items) >= num_items:
            rows.remove((u, max(items), target))
    if not rows:
        rows.append((0, 0, 0))
    triples = np.array(sorted(set(rows)), dtype=np.int64)
    triples = triples[rng.permutation(len(triples))]
    return InteractionTensor(
        num_users=num_users,
        num_items=num_items,
        num_behaviors=num_behaviors,
        target_behavior=target,
        triples=triples,
    )


def two_component_tensor(
    num_behaviors: int = 2, seed: int = 0, density: float = 0.7
) -> InteractionTensor:
    """Two disconnected bipartite blocks with every node covered.

    Users 0..2 with items 0..1 form one component, users 3..5 with items
    2..4 the other, so cross-component pairs sit beyond any hop distance
    while still having nonzero incidence rows.
    """
    rng = SeededRng(seed, "toy-components")
    blocks = [((0, 3), (0, 2)), ((3, 6), (2, 5))]
    rows = []
    for (u_lo, u_hi), (v_lo, v_hi) in blocks:
        for k in range(num_behaviors):
            for u in range(u_lo, u_hi):
                for v in range(v_lo, v_hi):
                    if rng.random() < density:
                        rows.append((u, v, k))
            # cover every node in the block for this behavior
            for u in range(u_lo, u_hi):
                if not any(r[0] == u and r[2] == k for r in rows):
                    rows.append((u, v_lo, k))
            for v in range(v_lo, v_hi):
                if not any(r[1] == v and r[2] == k for r in rows):
                    rows.append((u_lo, v, k))
    triples = np.array(sorted(set(rows)), dtype=np.int64)
    triples = triples[rng.permutation(len(triples))]
    return InteractionTensor(
        num_users=6,
        num_items=5,
        num_behaviors=num_behaviors,
        target_behavior=num_behaviors - 1,
        triples=triples,
    )


@dataclass
class ToyInstance:
    tensor: InteractionTensor
    adj: BehaviorAdjacency
    params: ModelParams
    batch: PairBatch
    hub: RngHub


def build_instance(
    num_users: int = 6,
    num_items: int = 5,
    num_behaviors: int = 3,
    num_hyperedges: int = 4,
    dim: int = 8,
    layers: int = 2,
    seed: int = 0,
    pairs_per_user: int = 2,
    density: float = 0.6,
    slope: float = 0.5,
    tensor: InteractionTensor | None = None,
) -> ToyInstance:
    """Tensor + adjacency + seeded params + one sampled pair batch."""
    if tensor is None:
        tensor = random_tensor(num_users, num_items, num_behaviors, density, seed)
    adj = build_adjacency(tensor)
    dims = Dims(
        num_users=tensor.num_users,
        num_items=tensor.num_items,
        num_behaviors=tensor.num_behaviors,
        num_hyperedges=num_hyperedges,
        dim=dim,
        layers=layers,
        target_behavior=tensor.target_behavior,
        slope=slope,
    )
    hub = RngHub(seed)
    params = init_params(dims, hub)
    batch = sample_pairs(tensor, pairs_per_user, hub.stream("negatives"))
    return ToyInstance(tensor=tensor, adj=adj, params=params, batch=batch, hub=hub)
