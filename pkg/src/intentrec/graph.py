"""Per-behavior bipartite adjacency and relation-aware message passing.

Each behavior gets a symmetric degree-normalized adjacency (coefficient
1/sqrt(deg_k(u) * deg_k(v)) per edge) stored in CSR form for both
propagation directions. Propagation sums per-behavior messages; train-time
edge dropout uses inverted scaling so the expectation matches the
dropout-off output.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import counters
from .data import InteractionTensor
from .errors import ConfigError, DataError, ShapeError
from .rng import SeededRng


@dataclass
class DropoutSpec:
    keep_prob: float = 1.0
    enabled: bool = False

    def validate(self) -> None:
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must be in (0, 1], got {self.keep_prob}")

    @property
    def active(self) -> bool:
        return self.enabled and self.keep_prob < 1.0


OFF = DropoutSpec(keep_prob=1.0, enabled=False)


@dataclass
class BehaviorAdjacency:
    """Normalized bipartite adjacency per behavior, both directions."""

    num_users: int
    num_items: int
    num_behaviors: int
    by_user: list  # k -> csr_matrix (I, J)
    by_item: list  # k -> csr_matrix (J, I)

    def nnz(self) -> int:
        return sum(int(m.nnz) for m in self.by_user)


def build_adjacency(train: InteractionTensor) -> BehaviorAdjacency:
    """Assemble per-behavior CSR matrices with symmetric normalization.

    Isolated nodes simply get empty rows; coefficients only exist on stored
    edges, where both endpoint degrees are at least one.
    """
    if train.nnz == 0:
        raise DataError("cannot build adjacency from an empty train set")
    by_user, by_item = [], []
    for k in range(train.num_behaviors):
        edges = train.behavior_edges(k)
        if len(edges) == 0:
            empty_ui = sp.csr_matrix((train.num_users, train.num_items))
            by_user.append(empty_ui)
            by_item.append(sp.csr_matrix((train.num_items, train.num_users)))
            continue
        u, v = edges[:, 0], edges[:, 1]
        deg_u = np.bincount(u, minlength=train.num_users)
        deg_v = np.bincount(v, minlength=train.num_items)
        coef = 1.0 / np.sqrt(deg_u[u] * deg_v[v])
        mat = sp.coo_matrix(
            (coef, (u, v)), shape=(train.num_users, train.num_items)
        )
        by_user.append(mat.tocsr())
        by_item.append(mat.T.tocsr())
    return BehaviorAdjacency(
        num_users=train.num_users,
        num_items=train.num_items,
        num_behaviors=train.num_behaviors,
        by_user=by_user,
        by_item=by_item,
    )


@dataclass
class PropagateResult:
    z_per_behavior: list  # k -> (rows, d)
    z_sum: np.ndarray
    masked_mats: list  # the matrices actually applied (needed by backward)


def relation_propagate(
    mats: list, src_emb: np.ndarray, drop: DropoutSpec, rng: SeededRng | None = None
) -> PropagateResult:
    """Message passing z_k = M_k @ src for each behavior, plus the sum.

    With dropout active, each edge message is kept with probability
    keep_prob and scaled by 1/keep_prob. Masks are drawn in CSR data order
    from the provided stream, one behavior after another.
    """
    if src_emb.ndim != 2 or src_emb.shape[1] == 0:
        raise ConfigError(f"source embeddings must be (nodes, d>0), got {src_emb.shape}")
    drop.validate()
    masked = []
    if drop.active:
        if rng is None:
            raise ConfigError("dropout requires an rng stream")
        for mat in mats:
            mask = rng.random(mat.nnz) < drop.keep_prob
            data = mat.data * (mask / drop.keep_prob)
            masked.append(
                sp.csr_matrix((data, mat.indices, mat.indptr), shape=mat.shape)
            )
    else:
        masked = list(mats)

    z_list = []
    d = src_emb.shape[1]
    for mat in masked:
        if mat.shape[1] != src_emb.shape[0]:
            raise ShapeError(
                f"adjacency {mat.shape} incompatible with embeddings {src_emb.shape}"
            )
        z_list.append(mat @ src_emb)
        counters.add(counters.GRAPH, mat.nnz * d)
    z_sum = np.zeros((mats[0].shape[0], d), dtype=src_emb.dtype)
    for z in z_list:
        z_sum += z
    return PropagateResult(z_per_behavior=z_list, z_sum=z_sum, masked_mats=masked)


def propagate_backward(masked_mats: list, grads_per_behavior: list) -> np.ndarray:
    """VJP of relation_propagate onto the source embeddings.

    Uses the exact masked matrices from the forward pass, transposed.
    """
    out = None
    for mat, grad in zip(masked_mats, grads_per_behavior):
        contrib = mat.T @ grad
        out = contrib if out is None else out + contrib
    return out
