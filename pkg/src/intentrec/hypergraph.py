"""Parameterized node-hyperedge incidence and two-step hypergraph passing.

The incidence of behavior k is the bilinear form H_k = Z_k @ W_k^T between
propagated node embeddings and a learnable table of hyperedge vectors, one
channel per latent intent. The stabilized form divides by sqrt(E). Message
passing runs node -> hyperedge -> node with a LeakyReLU after each hop.
Row-shuffling the stabilized incidence produces the corrupted view used for
graph-level contrastive negatives.
"""

from dataclasses import dataclass

import numpy as np

from . import counters
from .errors import CorruptionError, ShapeError
from .linalg import leaky_relu, leaky_relu_grad
from .rng import SeededRng


@dataclass
class HyperIncidence:
    """Incidence of one (side, behavior) slice."""

    raw: np.ndarray  # (nodes, E) Z @ W^T
    stabilized: np.ndarray  # raw / sqrt(E)

    @property
    def num_edges(self) -> int:
        return self.raw.shape[1]


@dataclass
class HyperState:
    """Cached activations of one hypergraph pass (needed by backward)."""

    gamma_pre: np.ndarray  # (E, d)
    gamma: np.ndarray  # (E, d) hyperedge embeddings
    h_pre: np.ndarray  # (nodes, d)
    h: np.ndarray  # (nodes, d) smoothed node embeddings

    @property
    def readout(self) -> np.ndarray:
        return self.gamma.sum(axis=0)


def hyper_incidence(z: np.ndarray, w: np.ndarray) -> HyperIncidence:
    """Learnable incidence H = Z @ W^T with stabilized form H / sqrt(E)."""
    if z.ndim != 2 or w.ndim != 2 or z.shape[1] != w.shape[1]:
        raise ShapeError(f"incidence needs Z (n, d) and W (E, d); got {z.shape}, {w.shape}")
    raw = z @ w.T
    counters.add(counters.HYPER, z.shape[0] * z.shape[1] * w.shape[0])
    return HyperIncidence(raw=raw, stabilized=raw / np.sqrt(w.shape[0]))


def hyper_propagate(inc: HyperIncidence, z: np.ndarray, slope: float) -> HyperState:
    """Two-step pass: Gamma = act(Ht^T Z), H = act(Ht Gamma)."""
    if inc.stabilized.shape[0] != z.shape[0]:
        raise ShapeError(
            f"incidence rows {inc.stabilized.shape} do not match embeddings {z.shape}"
        )
    gamma_pre = inc.stabilized.T @ z
    gamma = leaky_relu(gamma_pre, slope)
    h_pre = inc.stabilized @ gamma
    h = leaky_relu(h_pre, slope)
    counters.add(counters.HYPER, 2 * z.shape[0] * inc.num_edges * z.shape[1])
    return HyperState(gamma_pre=gamma_pre, gamma=gamma, h_pre=h_pre, h=h)


def corrupt_incidence(stabilized: np.ndarray, rng: SeededRng):
    """Permute node rows uniformly at random; resample once on an identity draw.

    Returns (permuted matrix, permutation). The multiset of rows is
    preserved exactly, so column sums are invariant.
    """
    n = stabilized.shape[0]
    if n < 2:
        raise CorruptionError("cannot corrupt an incidence with fewer than 2 rows")
    perm = rng.permutation(n)
    if np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return stabilized[perm], perm


@dataclass
class CorruptState:
    """Corrupted-view activations for one (side, layer) target slice."""

    perm: np.ndarray
    gamma_pre: np.ndarray
    gamma: np.ndarray

    @property
    def readout(self) -> np.ndarray:
        return self.gamma.sum(axis=0)


def corrupt_forward(
    inc: HyperIncidence, z: np.ndarray, slope: float, rng: SeededRng | None, perm=None
) -> CorruptState:
    """Hyperedge embeddings recomputed from a row-shuffled incidence."""
    if perm is None:
        shuffled, perm = corrupt_incidence(inc.stabilized, rng)
    else:
        shuffled = inc.stabilized[perm]
    gamma_pre = shuffled.T @ z
    gamma = leaky_relu(gamma_pre, slope)
    return CorruptState(perm=perm, gamma_pre=gamma_pre, gamma=gamma)


def hyper_backward(
    inc: HyperIncidence,
    z: np.ndarray,
    w: np.ndarray,
    state: HyperState,
    slope: float,
    d_h: np.ndarray,
    d_gamma_ext: np.ndarray | None = None,
    d_stab_ext: np.ndarray | None = None,
    d_z_ext: np.ndarray | None = None,
):
    """VJP of the incidence + propagation chain for one slice.

    d_h flows into the node output; d_gamma_ext adds gradient arriving
    directly at the hyperedge embeddings (readout path); d_stab_ext and
    d_z_ext add gradient arriving at the stabilized incidence and at Z from
    the corrupted view. Returns (d_z, d_w).
    """
    e = inc.num_edges
    d_q = d_h * leaky_relu_grad(state.h_pre, slope)
    d_stab = d_q @ state.gamma.T
    if d_stab_ext is not None:
        d_stab = d_stab + d_stab_ext
    d_gamma = inc.stabilized.T @ d_q
    if d_gamma_ext is not None:
        d_gamma = d_gamma + d_gamma_ext
    d_p = d_gamma * leaky_relu_grad(state.gamma_pre, slope)
    d_stab = d_stab + z @ d_p.T
    d_z = inc.stabilized @ d_p
    if d_z_ext is not None:
        d_z = d_z + d_z_ext
    d_raw = d_stab / np.sqrt(e)
    d_w = d_raw.T @ z
    d_z = d_z + d_raw @ w
    return d_z, d_w


def corrupt_backward(inc: HyperIncidence, z: np.ndarray, cstate: CorruptState, slope: float, d_gamma_c: np.ndarray):
    """VJP of corrupt_forward: gradient w.r.t. the unshuffled stabilized
    incidence and w.r.t. Z. Returns (d_stab, d_z)."""
    shuffled = inc.stabilized[cstate.perm]
    d_pre = d_gamma_c * leaky_relu_grad(cstate.gamma_pre, slope)
    d_shuffled = z @ d_pre.T
    d_stab = np.zeros_like(d_shuffled)
    d_stab[cstate.perm] = d_shuffled
    d_z = shuffled @ d_pre
    return d_stab, d_z
