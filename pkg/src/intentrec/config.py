"""Flat key=value run configuration with layered overrides.

Precedence: built-in defaults < config file < INTENTREC_* environment
variables < command-line flags. Unknown keys are rejected everywhere. The
canonical hash digests the full effective mapping with sorted keys, so it is
stable under key ordering.
"""

import hashlib
import json
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "INTENTREC_"


@dataclass(frozen=True)
class Field:
    type: str  # "int" | "float" | "bool" | "str"
    default: object
    help: str


FIELDS = {
    # shared
    "data": Field("str", "", "path to a TSV interaction file"),
    "out": Field("str", "runs", "root directory for run artifacts"),
    "seed": Field("int", 0, "global RNG seed"),
    "threads": Field("int", 1, "worker threads for parallel-safe paths (1 = bitwise reproducible)"),
    "num_behaviors": Field("int", 3, "behavior count K declared for TSV ingestion"),
    "target_behavior": Field("int", 2, "target behavior index"),
    "eval_cutoffs": Field("str", "1,3,5,7,9,10", "comma-separated top-N cutoffs"),
    "eval_negatives": Field("int", 99, "sampled negatives per evaluation user"),
    "export_embeddings": Field("bool", False, "write final embeddings as CSV"),
    # training
    "dim": Field("int", 32, "embedding dimension d"),
    "hyperedges": Field("int", 32, "intent channels E per behavior"),
    "layers": Field("int", 2, "message-passing orders L"),
    "slope": Field("float", 0.5, "LeakyReLU negative slope (1.0 = identity)"),
    "pairs_per_user": Field("int", 1, "ranking pairs S per user per batch"),
    "batch_size": Field("int", 256, "users per training batch"),
    "keep_prob": Field("float", 0.8, "edge-dropout keep probability"),
    "lr": Field("float", 1e-3, "Adam learning rate"),
    "epochs": Field("int", 30, "training epochs"),
    "reg_weight": Field("float", 1e-4, "weight-decay strength"),
    "node_cl_weight": Field("float", 1e-5, "node-level contrastive weight"),
    "graph_cl_weight": Field("float", 1e-5, "graph-level contrastive weight"),
    "temperature": Field("float", 0.5, "InfoNCE temperature"),
    "no_node_cl": Field("bool", False, "ablation: disable node-level contrast"),
    "no_graph_cl": Field("bool", False, "ablation: disable graph-level contrast"),
    "no_meta": Field("bool", False, "ablation: disable the meta transform"),
    "no_intents": Field("bool", False, "ablation: disable the intent channels"),
    "node_cl_sides": Field("str", "both", "node contrast sides: user|item|both"),
    "graph_cl_sides": Field("str", "user", "graph contrast sides: user|both"),
    "include_positive": Field("bool", True, "include the positive pair in the InfoNCE denominator"),
    "cl_scope": Field("str", "batch", "contrastive denominator scope: batch|all"),
    "checkpoint_every": Field("int", 0, "write a checkpoint every N epochs (0 = final only)"),
    # evaluation
    "checkpoint": Field("str", "", "checkpoint path for eval"),
    # synthetic data
    "synth_users": Field("int", 2000, "synthetic user count"),
    "synth_items": Field("int", 1000, "synthetic item count"),
    "synth_intents": Field("int", 4, "planted intent count"),
    "synth_funnel_probs": Field("str", "0.06,0.02,0.008", "per-behavior base rates, non-increasing"),
    "synth_mismatch": Field("float", 0.1, "rate damping for mismatched intents"),
    "synth_out": Field("str", "", "explicit output path for the synthetic TSV"),
    # gradient check
    "gc_users": Field("int", 6, "gradcheck instance users"),
    "gc_items": Field("int", 5, "gradcheck instance items"),
    "gc_behaviors": Field("int", 3, "gradcheck instance behaviors"),
    "gc_hyperedges": Field("int", 4, "gradcheck instance intent channels"),
    "gc_dim": Field("int", 8, "gradcheck instance dimension"),
    "gc_layers": Field("int", 2, "gradcheck instance layers"),
    "gc_step": Field("float", 1e-5, "central-difference step"),
    "gc_tolerance": Field("float", 1e-6, "max relative error allowed"),
    "gc_reg_weight": Field("float", 1e-2, "weight-decay strength during the check"),
    "gc_node_cl_weight": Field("float", 0.05, "node contrast weight during the check"),
    "gc_graph_cl_weight": Field("float", 0.05, "graph contrast weight during the check"),
    # decomposition diagnostics
    "diag_instances": Field("int", 20, "random instances per decomposition check"),
    "diag_tolerance": Field("float", 1e-8, "max |direct - reconstructed| allowed"),
}


def _coerce(key: str, raw, kind: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse boolean from {raw!r}")
    return str(raw)


def parse_config_file(path) -> dict:
    """Read `key=value` lines; '#' starts a comment, blanks ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = stripped.partition("=")
            values[key.strip()] = raw.strip()
    return values


@dataclass
class RunConfig:
    values: dict

    def get(self, key: str):
        return self.values[key]

    def config_hash(self) -> str:
        blob = json.dumps(self.values, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def cutoffs(self) -> list:
        return [int(x) for x in str(self.values["eval_cutoffs"]).split(",") if x.strip()]

    def funnel_probs(self) -> tuple:
        return tuple(float(x) for x in str(self.values["synth_funnel_probs"]).split(",") if x.strip())

    def as_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=2)


def build_config(file_path=None, env=None, overrides=None) -> RunConfig:
    """Merge the override layers into a full, validated mapping."""
    values = {key: field.default for key, field in FIELDS.items()}

    def apply(source: dict, origin: str):
        for key, raw in source.items():
            if key not in FIELDS:
                raise ConfigError(f"unknown config key {key!r} (from {origin})")
            values[key] = _coerce(key, raw, FIELDS[key].type)

    if file_path:
        apply(parse_config_file(file_path), f"file {file_path}")
    env = os.environ if env is None else env
    env_values = {}
    for name, raw in env.items():
        if name.startswith(ENV_PREFIX):
            env_values[name[len(ENV_PREFIX) :].lower()] = raw
    apply(env_values, "environment")
    if overrides:
        apply(overrides, "command line")
    return RunConfig(values=values)
