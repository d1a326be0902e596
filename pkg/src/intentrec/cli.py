"""Command-line entry points: train, eval, gradcheck, synth, diag, sweep.

Every command resolves its configuration through the layered key=value
system, writes a JSON echo of the effective config next to its artifacts,
and places everything under a run directory named by timestamp and config
hash. Exit codes: 0 success, 1 tolerance violated, 2 bad configuration,
3 training divergence.
"""

import argparse
import csv
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import counters
from .config import FIELDS, RunConfig, build_config
from .data import (
    DatasetSchema,
    SynthConfig,
    leave_one_out_split,
    load_interactions,
    synth_generate,
)
from .diagnostics import (
    adaptivity_witness,
    complexity_report,
    gnn_decompose,
    hop_distances,
    hyper_decompose,
)
from .errors import ConfigError, IntentRecError
from .evaluate import Metrics, evaluate, rank_oracle_check, train_mf_baseline
from .graph import OFF, build_adjacency
from .model import export_embeddings, forward
from .rng import RngHub, SeededRng
from .toy import build_instance, two_component_tensor
from .train import (
    LossConfig,
    TrainConfig,
    fit,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def make_run_dir(cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    run_dir = Path(cfg.get("out")) / f"{stamp}_{cfg.config_hash()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "effective_config.json", "w", encoding="utf-8") as fh:
        fh.write(cfg.as_json() + "\n")
    return run_dir


def train_config_from(cfg: RunConfig) -> TrainConfig:
    tc = TrainConfig(
        dim=cfg.get("dim"),
        hyperedges=cfg.get("hyperedges"),
        layers=cfg.get("layers"),
        slope=cfg.get("slope"),
        pairs_per_user=cfg.get("pairs_per_user"),
        batch_size=cfg.get("batch_size"),
        keep_prob=cfg.get("keep_prob"),
        lr=cfg.get("lr"),
        epochs=cfg.get("epochs"),
        reg_weight=cfg.get("reg_weight"),
        node_cl_weight=cfg.get("node_cl_weight"),
        graph_cl_weight=cfg.get("graph_cl_weight"),
        temperature=cfg.get("temperature"),
        seed=cfg.get("seed"),
        no_node_cl=cfg.get("no_node_cl"),
        no_graph_cl=cfg.get("no_graph_cl"),
        no_meta=cfg.get("no_meta"),
        no_intents=cfg.get("no_intents"),
        node_cl_sides=cfg.get("node_cl_sides"),
        graph_cl_sides=cfg.get("graph_cl_sides"),
        include_positive=cfg.get("include_positive"),
        cl_scope=cfg.get("cl_scope"),
    )
    tc.validate()
    return tc


def load_split_from(cfg: RunConfig):
    path = cfg.get("data")
    if not path:
        raise ConfigError("a dataset path is required (key: data)")
    schema = DatasetSchema(
        num_behaviors=cfg.get("num_behaviors"),
        target_behavior=cfg.get("target_behavior"),
    )
    tensor = load_interactions(path, schema)
    split_rng = SeededRng(cfg.get("seed"), "negatives")
    return leave_one_out_split(tensor, split_rng, num_negatives=cfg.get("eval_negatives"))


def write_metrics(run_dir: Path, cfg: RunConfig, metrics: Metrics, extra=None) -> None:
    ranks_path = run_dir / "per_user_ranks.json"
    with open(ranks_path, "w", encoding="utf-8") as fh:
        json.dump({str(u): int(r) for u, r in metrics.per_user_ranks.items()}, fh)
    payload = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.get("seed"),
        **metrics.as_dict(),
        "per_user_ranks_path": ranks_path.name,
    }
    if extra:
        payload.update(extra)
    with open(run_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    rows = [
        {"metric": f"hr@{n}", "value": v} for n, v in metrics.hr.items()
    ] + [{"metric": f"ndcg@{n}", "value": v} for n, v in metrics.ndcg.items()]
    with open(run_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "value"])
        writer.writeheader()
        writer.writerows(rows)


def cmd_synth(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg)
    synth_cfg = SynthConfig(
        num_users=cfg.get("synth_users"),
        num_items=cfg.get("synth_items"),
        num_behaviors=cfg.get("num_behaviors"),
        intents=cfg.get("synth_intents"),
        funnel_probs=cfg.funnel_probs(),
        mismatch_factor=cfg.get("synth_mismatch"),
        seed=cfg.get("seed"),
    )
    result = synth_generate(synth_cfg)
    out_path = Path(cfg.get("synth_out")) if cfg.get("synth_out") else run_dir / "dataset.tsv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result.tensor.save_tsv(out_path)
    with open(run_dir / "intents.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "user_intents": result.user_intents.tolist(),
                "item_intents": result.item_intents.tolist(),
            },
            fh,
        )
    counts = result.tensor.behavior_counts().tolist()
    print(f"wrote {out_path} nnz={result.tensor.nnz} behavior_counts={counts}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg)
    tc = train_config_from(cfg)
    split = load_split_from(cfg)
    ckpt_path = run_dir / "checkpoint.npz"
    every = cfg.get("checkpoint_every")

    def on_epoch(epoch, params, opt, hub, stats):
        if every and (epoch + 1) % every == 0:
            save_checkpoint(ckpt_path, params, opt, hub, cfg.config_hash(), epoch + 1)

    result = fit(split.train, tc, epoch_callback=on_epoch)
    with open(run_dir / "epoch_stats.csv", "w", encoding="utf-8", newline="") as fh:
        fieldnames = [
            "epoch", "hinge", "reg", "node_cl", "graph_cl", "total",
            "batches", "wall_time", "graph_macs", "hyper_macs", "contrast_macs",
        ]
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for st in result.epoch_stats:
            writer.writerow(st.as_dict())
    save_checkpoint(
        ckpt_path, result.params, result.opt, result.hub, cfg.config_hash(),
        len(result.epoch_stats),
    )
    if result.diverged:
        print("training diverged; last-good checkpoint kept", file=sys.stderr)
        return EXIT_DIVERGED
    state = forward(
        result.params, result.adj, OFF, RngHub(tc.seed),
        no_intents=tc.no_intents, corrupt_sides=(),
    )
    metrics = evaluate(state, split, cutoffs=cfg.cutoffs(), threads=cfg.get("threads"))
    ablations = {
        "no_node_cl": tc.no_node_cl,
        "no_graph_cl": tc.no_graph_cl,
        "no_meta": tc.no_meta,
        "no_intents": tc.no_intents,
    }
    write_metrics(run_dir, cfg, metrics, extra={"ablations": ablations, "epochs_run": len(result.epoch_stats)})
    if cfg.get("export_embeddings"):
        export_embeddings(state, run_dir / "user_embeddings.csv", run_dir / "item_embeddings.csv")
    print(f"hr@10={metrics.hr.get(10, float('nan')):.4f} artifacts in {run_dir}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = cfg.get("checkpoint")
    if not ckpt or not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt!r}")
    run_dir = make_run_dir(cfg)
    params, _, _, meta = load_checkpoint(ckpt)
    split = load_split_from(cfg)
    adj = build_adjacency(split.train)
    state = forward(params, adj, OFF, RngHub(cfg.get("seed")), corrupt_sides=())
    metrics = evaluate(state, split, cutoffs=cfg.cutoffs(), threads=cfg.get("threads"))
    oracle = rank_oracle_check(state, split, SeededRng(cfg.get("seed"), "rank-oracle"))
    write_metrics(
        run_dir, cfg, metrics,
        extra={"checkpoint": str(ckpt), "checkpoint_epoch": meta.get("epoch"), "rank_oracle": oracle},
    )
    if cfg.get("export_embeddings"):
        export_embeddings(state, run_dir / "user_embeddings.csv", run_dir / "item_embeddings.csv")
    print(f"hr@10={metrics.hr.get(10, float('nan')):.4f} artifacts in {run_dir}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg)
    inst = build_instance(
        num_users=cfg.get("gc_users"),
        num_items=cfg.get("gc_items"),
        num_behaviors=cfg.get("gc_behaviors"),
        num_hyperedges=cfg.get("gc_hyperedges"),
        dim=cfg.get("gc_dim"),
        layers=cfg.get("gc_layers"),
        seed=cfg.get("seed"),
    )
    loss_cfg = LossConfig(
        reg_weight=cfg.get("gc_reg_weight"),
        node_cl_weight=cfg.get("gc_node_cl_weight"),
        graph_cl_weight=cfg.get("gc_graph_cl_weight"),
    )
    report = grad_check(
        inst.params, inst.adj, inst.batch, loss_cfg,
        step=cfg.get("gc_step"), hub=inst.hub,
    )
    tol = cfg.get("gc_tolerance")
    with open(run_dir / "gradcheck.json", "w", encoding="utf-8") as fh:
        json.dump({"tolerance": tol, **report.as_dict()}, fh, indent=2)
    print(f"{'group':28s} {'rel':>12s} {'max_abs':>12s} {'grad_scale':>12s} {'checked':>8s}")
    for name, row in report.groups.items():
        print(
            f"{name:28s} {row['rel']:12.3e} {row['max_abs']:12.3e} "
            f"{row['grad_scale']:12.3e} {row['checked']:8d}"
        )
    status = "PASS" if report.passed(tol) else "FAIL"
    print(
        f"{status}: max group relative error {report.max_rel:.3e} (tolerance {tol:.1e}), "
        f"{report.excluded_pairs} pair(s) excluded at the hinge kink"
    )
    return EXIT_OK if report.passed(tol) else EXIT_TOLERANCE


def cmd_diag(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg)
    tol = cfg.get("diag_tolerance")
    n_instances = cfg.get("diag_instances")
    worst_gnn = worst_hyper = 0.0
    witnessed = 0
    rows = []
    for t in range(n_instances):
        tensor = two_component_tensor(num_behaviors=2, seed=cfg.get("seed") + t)
        inst = build_instance(
            num_behaviors=2, num_hyperedges=3, dim=4, layers=2,
            seed=cfg.get("seed") + t, tensor=tensor, slope=1.0,
        )
        gnn = gnn_decompose(inst.adj, inst.params.user_emb, inst.params.item_emb, 2, 0, 0)
        hyper = hyper_decompose(inst.params, inst.adj, 0, 0)
        dist = hop_distances(inst.adj, 0)
        beyond = [
            u for u in range(inst.tensor.num_users)
            if (dist[u] < 0 or dist[u] > 2 * 2) and abs(hyper.user_coefficients[u]) > 1e-6
        ]
        witnessed += bool(beyond)
        worst_gnn = max(worst_gnn, gnn.max_abs_error)
        worst_hyper = max(worst_hyper, hyper.max_abs_error)
        rows.append(
            {
                "instance": t,
                "gnn_error": gnn.max_abs_error,
                "hyper_error": hyper.max_abs_error,
                "beyond_hop_witnesses": len(beyond),
            }
        )
    counters.reset()
    inst = build_instance(seed=cfg.get("seed"))
    forward(inst.params, inst.adj, OFF, inst.hub, corrupt_sides=())
    macs = counters.snapshot()
    comp = complexity_report(
        macs,
        {
            "nnz": 2 * inst.adj.nnz(),  # both directions
            "dim": inst.params.dims.dim,
            "layers": inst.params.dims.layers,
            "num_users": inst.params.dims.num_users,
            "num_items": inst.params.dims.num_items,
            "num_hyperedges": inst.params.dims.num_hyperedges,
            "forward_passes": 1,
        },
    )
    payload = {
        "tolerance": tol,
        "instances": rows,
        "max_gnn_error": worst_gnn,
        "max_hyper_error": worst_hyper,
        "beyond_hop_witnessed": witnessed,
        "complexity": comp,
    }
    with open(run_dir / "diag.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(f"{'check':32s} {'value':>14s}")
    print(f"{'max |direct-recon| (linear)':32s} {worst_gnn:14.3e}")
    print(f"{'max |direct-recon| (hypergraph)':32s} {worst_hyper:14.3e}")
    print(f"{'beyond-hop witnesses':32s} {witnessed:9d}/{n_instances}")
    for name, row in comp.items():
        print(f"{'macs ' + name:32s} {row['measured_macs']:14d} (x{row['ratio']:.2f} of formula)")
    passed = worst_gnn < tol and worst_hyper < tol and witnessed == n_instances
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_TOLERANCE


def cmd_sweep(cfg: RunConfig, grid_specs: list) -> int:
    if not grid_specs:
        raise ConfigError("sweep requires at least one --grid key=v1,v2 specification")
    run_dir = make_run_dir(cfg)
    keys, value_lists = [], []
    for spec in grid_specs:
        if "=" not in spec:
            raise ConfigError(f"bad --grid spec {spec!r}; expected key=v1,v2")
        key, _, raw = spec.partition("=")
        key = key.strip()
        if key not in FIELDS:
            raise ConfigError(f"unknown sweep key {key!r}")
        keys.append(key)
        value_lists.append([v.strip() for v in raw.split(",") if v.strip()])
    rows = []
    for combo in itertools.product(*value_lists):
        cell = dict(cfg.values)
        cell_cfg = build_config(env={}, overrides={**{k: v for k, v in zip(keys, combo)}, **{
            k: str(v) for k, v in cell.items() if k not in keys
        }})
        tc = train_config_from(cell_cfg)
        split = load_split_from(cell_cfg)
        result = fit(split.train, tc)
        state = forward(
            result.params, result.adj, OFF, RngHub(tc.seed),
            no_intents=tc.no_intents, corrupt_sides=(),
        )
        metrics = evaluate(state, split, cutoffs=cell_cfg.cutoffs())
        row = {k: v for k, v in zip(keys, combo)}
        row.update(
            config_hash=cell_cfg.config_hash(),
            seed=tc.seed,
            **{f"hr@{n}": metrics.hr[n] for n in metrics.hr},
            **{f"ndcg@{n}": metrics.ndcg[n] for n in metrics.ndcg},
        )
        rows.append(row)
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    with open(run_dir / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"artifacts in {run_dir}")
    return EXIT_OK


ABLATION_FLAGS = ("no_node_cl", "no_graph_cl", "no_meta", "no_intents")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentrec",
        description="multi-behavior graph recommender with hypergraph intent channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "gradcheck", "synth", "diag", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument(
            "--ablate", action="append", default=[], choices=ABLATION_FLAGS,
            help="shorthand for --<flag> true",
        )
        if name == "sweep":
            p.add_argument(
                "--grid", action="append", default=[],
                help="key=v1,v2 Cartesian sweep axis (repeatable)",
            )
        for key, field in FIELDS.items():
            p.add_argument(f"--{key}", default=None, help=field.help, metavar=field.type.upper())
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in FIELDS
        if getattr(args, key, None) is not None
    }
    for flag in args.ablate:
        overrides[flag] = "true"
    try:
        cfg = build_config(file_path=args.config, overrides=overrides)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "diag":
            return cmd_diag(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.grid)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntentRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
