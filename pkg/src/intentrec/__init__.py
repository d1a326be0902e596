"""Multi-behavior graph collaborative filtering with latent intent channels.

A numpy/scipy implementation of a heterogeneous recommender: per-behavior
graph propagation, learnable hypergraph intent channels, meta-adapted
node-level and corruption-based graph-level contrastive objectives, joint
pairwise training with handwritten reverse-mode gradients, and leave-one-out
top-N evaluation. Every gradient path is certified by a central
finite-difference oracle.
"""

from .contrast import ContrastConfig, graph_cl_loss, meta_transform, node_cl_loss
from .data import (
    DatasetSchema,
    InteractionTensor,
    PairBatch,
    SplitDataset,
    SynthConfig,
    leave_one_out_split,
    load_interactions,
    sample_pairs,
    synth_generate,
)
from .evaluate import Metrics, evaluate, rank_oracle_check, train_mf_baseline
from .graph import BehaviorAdjacency, DropoutSpec, build_adjacency, relation_propagate
from .hypergraph import corrupt_incidence, hyper_incidence, hyper_propagate
from .model import Dims, ForwardState, ModelParams, forward, init_params, predict
from .rng import RngHub, SeededRng
from .train import (
    AdamState,
    LossConfig,
    TrainConfig,
    adam_step,
    backward,
    fit,
    grad_check,
    hinge_loss,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_epoch,
)

__version__ = "0.1.0"
