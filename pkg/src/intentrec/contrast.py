"""Meta-network behavior adaptation and the two contrastive objectives.

Node level: auxiliary-behavior embeddings are gated by a small transform of
their own normalized rows, then pulled toward the same node's target-behavior
embedding with InfoNCE against the other nodes' target embeddings.
Graph level: behavior readouts (sum-pooled hyperedge embeddings) of the
target behavior are contrasted against readouts recomputed from a
row-shuffled incidence.

Each loss comes in a plain and a with-gradients flavor; the gradient
variants return hand-derived VJPs that the finite-difference oracle checks.
"""

from dataclasses import dataclass

import numpy as np

from . import counters
from .errors import ConfigError
from .linalg import (
    cosine,
    cosine_backward,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    leaky_relu,
    leaky_relu_grad,
)

SIDE_CHOICES = {"user": ("user",), "item": ("item",), "both": ("user", "item")}


@dataclass
class ContrastConfig:
    temperature: float = 0.5
    node_cl_sides: str = "both"
    graph_cl_sides: str = "user"
    include_positive_in_denominator: bool = True
    eps: float = 1e-8

    def validate(self) -> None:
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.node_cl_sides not in SIDE_CHOICES:
            raise ConfigError(f"node_cl_sides must be one of {sorted(SIDE_CHOICES)}")
        if self.graph_cl_sides not in ("user", "both"):
            raise ConfigError("graph_cl_sides must be 'user' or 'both'")


@dataclass
class MetaResult:
    normed: np.ndarray
    gate_pre: np.ndarray
    gate: np.ndarray
    h_tilde: np.ndarray


def meta_transform(
    h: np.ndarray, w: np.ndarray, b: np.ndarray, slope: float = 0.5, eps: float = 1e-8
) -> MetaResult:
    """H_tilde = H * act(Norm(H) @ W + b), rowwise."""
    normed = l2_normalize_rows(h, eps)
    gate_pre = normed @ w + b
    gate = leaky_relu(gate_pre, slope)
    return MetaResult(normed=normed, gate_pre=gate_pre, gate=gate, h_tilde=h * gate)


def meta_transform_backward(
    h: np.ndarray,
    w: np.ndarray,
    res: MetaResult,
    d_ht: np.ndarray,
    slope: float = 0.5,
    eps: float = 1e-8,
):
    """VJP of meta_transform. Returns (d_h, d_w, d_b)."""
    d_h = d_ht * res.gate
    d_gate = d_ht * h
    d_pre = d_gate * leaky_relu_grad(res.gate_pre, slope)
    d_b = d_pre.sum(axis=0)
    d_w = res.normed.T @ d_pre
    d_normed = d_pre @ w.T
    d_h = d_h + l2_normalize_rows_backward(h, d_normed, eps)
    return d_h, d_w, d_b


def node_cl_loss(embeddings: dict, target: int, cfg: ContrastConfig) -> float:
    """InfoNCE over one side and layer; see node_cl_with_grads."""
    loss, _ = node_cl_with_grads(embeddings, target, cfg)
    return loss


def node_cl_with_grads(embeddings: dict, target: int, cfg: ContrastConfig):
    """Node-level InfoNCE and its gradients for one (side, layer).

    embeddings maps behavior -> (n, d) adapted rows over the same n nodes.
    For each node i and auxiliary behavior k, the positive similarity is
    cos(emb[target][i], emb[k][i]); the denominator sums
    exp(cos(emb[target][i'], emb[target][i]) / tau) over all n nodes i'
    (self included), plus the positive term when configured.

    Returns (loss, grads) with grads keyed like embeddings.
    """
    cfg.validate()
    tau = cfg.temperature
    eps = cfg.eps
    normed = {k: l2_normalize_rows(v, eps) for k, v in embeddings.items()}
    t_hat = normed[target]
    n, d = t_hat.shape
    sim_tt = t_hat @ t_hat.T
    exp_tt = np.exp(sim_tt / tau)
    den_base = exp_tt.sum(axis=0)
    counters.add(counters.CONTRAST, n * n * d)

    loss = 0.0
    d_sim_tt = np.zeros_like(sim_tt)
    d_t_hat = np.zeros_like(t_hat)
    d_normed = {k: np.zeros_like(v) for k, v in normed.items()}
    for k in embeddings:
        if k == target:
            continue
        a_hat = normed[k]
        s_pos = np.sum(t_hat * a_hat, axis=1)
        counters.add(counters.CONTRAST, n * d)
        p = np.exp(s_pos / tau)
        den = den_base + p if cfg.include_positive_in_denominator else den_base
        loss += float(np.sum(np.log(den) - s_pos / tau))
        d_spos = np.full(n, -1.0 / tau)
        if cfg.include_positive_in_denominator:
            d_spos = d_spos + p / (tau * den)
        d_sim_tt += exp_tt * (1.0 / (tau * den))[None, :]
        d_t_hat += d_spos[:, None] * a_hat
        d_normed[k] += d_spos[:, None] * t_hat
    d_t_hat += (d_sim_tt + d_sim_tt.T) @ t_hat
    d_normed[target] += d_t_hat

    grads = {
        k: l2_normalize_rows_backward(embeddings[k], d_normed[k], eps) for k in embeddings
    }
    return loss, grads


def graph_cl_loss(readouts: dict, corrupted: dict, target: int, eps: float = 1e-8) -> float:
    """Graph-level contrastive loss; see graph_cl_with_grads."""
    loss, _, _ = graph_cl_with_grads(readouts, corrupted, target, eps)
    return loss


def graph_cl_with_grads(readouts: dict, corrupted: dict, target: int, eps: float = 1e-8):
    """Sum over auxiliary behaviors k of softplus(s_neg - s_pos), where
    s_pos = cos(readout[target], readout[k]) and s_neg uses the corrupted
    target readout. Equals -log(exp(s_pos) / (exp(s_pos) + exp(s_neg)))
    exactly. Zero-vector readouts get similarity 0 via the eps guard.

    Returns (loss, d_readouts, d_corrupted_target).
    """
    r_t = readouts[target]
    r_c = corrupted[target]
    loss = 0.0
    d_readouts = {k: np.zeros_like(v) for k, v in readouts.items()}
    d_corr = np.zeros_like(r_c)
    for k in readouts:
        if k == target:
            continue
        r_k = readouts[k]
        s_pos = cosine(r_t, r_k, eps)
        s_neg = cosine(r_c, r_k, eps)
        loss += float(np.logaddexp(0.0, s_neg - s_pos))
        sig = 1.0 / (1.0 + np.exp(-(s_neg - s_pos)))
        da, db = cosine_backward(r_t, r_k, -sig, eps)
        d_readouts[target] += da
        d_readouts[k] += db
        da, db = cosine_backward(r_c, r_k, sig, eps)
        d_corr += da
        d_readouts[k] += db
    return loss, d_readouts, d_corr
