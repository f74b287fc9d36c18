"""Command-line pipeline: gen, featurize, train, eval, attn, bench.

Every command writes a run manifest (config snapshot, input checksums,
tool version, wall time, output paths) next to its outputs, so reruns
are verifiable: deterministic commands reproduce byte-identical data
files for identical inputs and seed.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

import hoga
from hoga import circuits, graph, hopfeat, model as M, train as TR


class DataError(Exception):
    """Missing/malformed inputs or mismatched shapes (exit code 3)."""


EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(
    out_path: Path, command: str, config: dict, inputs: list[Path], outputs: list[Path], started: float
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "tool_version": hoga.__version__,
        "wall_time_s": round(time.perf_counter() - started, 6),
        "outputs": [str(p) for p in outputs],
    }
    out_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_graph(path: Path) -> graph.CircuitGraph:
    if not path.exists():
        raise DataError(f"no such file: {path}")
    text = path.read_text()
    if path.suffix == ".aag" or text.lstrip().startswith("aag"):
        return graph.parse_aiger_ascii(text)
    return graph.parse_edge_list(text)


def _load_labels(path: Path, task: str) -> np.ndarray:
    if not path.exists():
        raise DataError(f"no such file: {path}")
    text = path.read_text()
    if task == TR.TASK_NODE_CLASS4:
        return circuits.read_labels_csv(text).astype(np.int64)
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "node_id,value":
        raise DataError("regression labels CSV must start with 'node_id,value'")
    pairs = [(int(a), float(b)) for a, b in (ln.split(",") for ln in lines[1:])]
    out = np.zeros(max(p[0] for p in pairs) + 1, dtype=np.float64)
    for node, val in pairs:
        out[node] = val
    return out


def _load_dataset(features: Path, labels: Path, task: str) -> TR.NodeDataset:
    if not features.exists():
        raise DataError(f"no such file: {features}")
    tens = hopfeat.load_hop_tensor(features)
    labs = _load_labels(labels, task)
    if labs.shape[0] != tens.num_nodes:
        raise DataError(f"{labs.shape[0]} labels for {tens.num_nodes} nodes")
    return TR.NodeDataset.from_hop_tensor(tens, labs)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    started = time.perf_counter()
    c = circuits.gen_csa_multiplier(args.bits)
    mismatches = circuits.verify_labels(c)
    if mismatches:
        raise DataError(f"generator self-check failed: {mismatches[:3]}")
    outdir = Path(args.out)
    paths = circuits.write_circuit_bundle(c, outdir)
    _write_manifest(
        outdir / "manifest.json",
        "gen",
        {"kind": args.kind, "bits": args.bits},
        [],
        [Path(p) for p in paths.values()],
        started,
    )
    print(f"gen: {c.graph.num_nodes} nodes, {c.graph.num_edges} edges -> {outdir}")
    return 0


def cmd_featurize(args) -> int:
    started = time.perf_counter()
    gpath = Path(args.graph)
    g = _load_graph(gpath)
    mode = (
        graph.AdjacencyMode.SYMMETRIC_UNDIRECTED
        if args.mode == "sym"
        else graph.AdjacencyMode.DIRECTED_FANIN
    )
    adj = graph.normalize_adjacency(g, mode, add_self_loops=args.self_loops)
    feats = graph.build_node_features(g)
    tens = hopfeat.generate_hop_features(adj, feats, args.k, graph.graph_checksum(g))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hopfeat.save_hop_tensor(tens, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "featurize",
        {"graph": str(gpath), "k": args.k, "mode": args.mode, "self_loops": args.self_loops},
        [gpath],
        [out],
        started,
    )
    print(f"featurize: ({tens.num_nodes}, {tens.hops + 1}, {tens.dim}) -> {out}")
    return 0


def _train_config(args, tens_hops: int) -> TR.TrainConfig:
    cfg = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise DataError(f"no such config file: {cfg_path}")
        cfg = json.loads(cfg_path.read_text())
    overrides = {
        "task": args.task,
        "model": args.model,
        "hops": tens_hops,
        "hidden_dim": args.hidden_dim,
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "workers": args.workers,
        "seed": args.seed,
        "attention_layers": args.layers,
        "class_weighting": not args.no_class_weights,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    adam = TR.AdamConfig(**cfg.pop("adam", {}))
    try:
        return TR.TrainConfig(adam=adam, **cfg)
    except TypeError as exc:
        raise DataError(f"bad config: {exc}") from None


def cmd_train(args) -> int:
    started = time.perf_counter()
    fpath, lpath = Path(args.features), Path(args.labels)
    if not fpath.exists():
        raise DataError(f"no such file: {fpath}")
    tens = hopfeat.load_hop_tensor(fpath)
    config = _train_config(args, tens.hops)
    labels = _load_labels(lpath, config.task)
    if labels.shape[0] != tens.num_nodes:
        raise DataError(f"{labels.shape[0]} labels for {tens.num_nodes} nodes")
    data = TR.NodeDataset.from_hop_tensor(tens, labels)
    result = TR.train(data, config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt = outdir / "model.ckpt"
    M.save_checkpoint(ckpt, config.model, result.model_config, config.seed, result.params)
    curve = outdir / "metrics.csv"
    with open(curve, "w") as fh:
        fh.write("epoch,loss,accuracy\n")
        for h in result.history:
            acc = "" if h.accuracy is None else repr(h.accuracy)
            fh.write(f"{h.epoch},{h.loss!r},{acc}\n")
    final = TR.evaluate(
        result.params, result.model_config, config.model, data, config.task,
        loss_curve=tuple(result.loss_curve),
    )
    mjson = outdir / "metrics.json"
    mjson.write_text(json.dumps(_metrics_dict(final), indent=2, sort_keys=True) + "\n")
    _write_manifest(
        outdir / "manifest.json",
        "train",
        dataclasses.asdict(config),
        [fpath, lpath],
        [ckpt, curve, mjson],
        started,
    )
    acc = final.overall_accuracy
    tail = f"train acc {acc:.4f}" if acc is not None else f"MAPE {final.mape_value:.3f}%"
    print(f"train: {config.model} {config.epochs} epochs, {tail} -> {outdir}")
    return 0


def _metrics_dict(m: TR.Metrics) -> dict:
    return {
        "overall_accuracy": m.overall_accuracy,
        "per_class_accuracy": None if m.per_class_accuracy is None else list(m.per_class_accuracy),
        "mape": m.mape_value,
        "loss_curve": list(m.loss_curve),
    }


def cmd_eval(args) -> int:
    started = time.perf_counter()
    cpath, fpath, lpath = Path(args.checkpoint), Path(args.features), Path(args.labels)
    if not cpath.exists():
        raise DataError(f"no such file: {cpath}")
    ckpt = M.load_checkpoint(cpath)
    task = TR.TASK_NODE_CLASS4 if ckpt.config.head == "classifier" else TR.TASK_GRAPH_REGRESS
    data = _load_dataset(fpath, lpath, task)
    metrics = TR.evaluate(ckpt.params, ckpt.config, ckpt.kind, data, task)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(_metrics_dict(metrics), indent=2, sort_keys=True) + "\n")
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "eval",
        {"checkpoint": str(cpath)},
        [cpath, fpath, lpath],
        [out],
        started,
    )
    if metrics.overall_accuracy is not None:
        print(f"eval: overall accuracy {metrics.overall_accuracy:.4f} -> {out}")
    else:
        print(f"eval: MAPE {metrics.mape_value:.3f}% -> {out}")
    return 0


def cmd_attn(args) -> int:
    started = time.perf_counter()
    cpath, fpath, lpath = Path(args.checkpoint), Path(args.features), Path(args.labels)
    if not cpath.exists():
        raise DataError(f"no such file: {cpath}")
    ckpt = M.load_checkpoint(cpath)
    if ckpt.kind != "hoga":
        raise DataError(f"attention export needs a hoga checkpoint, got {ckpt.kind!r}")
    data = _load_dataset(fpath, lpath, TR.TASK_NODE_CLASS4)
    scores = TR.attention_scores(ckpt.params, ckpt.config, data.features)
    ids, short = TR.sample_per_class(data.labels, args.per_class, args.seed)
    for c in short:
        name = circuits.LABEL_NAMES[circuits.Label(c)]
        print(
            f"warning: class {name} has fewer than {args.per_class} nodes; taking all",
            file=sys.stderr,
        )
    k = scores.shape[1]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("node_id,label," + ",".join(f"c_{j}" for j in range(1, k + 1)) + "\n")
        for node in ids:
            name = circuits.LABEL_NAMES[circuits.Label(int(data.labels[node]))]
            row = ",".join(repr(float(v)) for v in scores[node])
            fh.write(f"{node},{name},{row}\n")
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "attn",
        {"checkpoint": str(cpath), "per_class": args.per_class, "seed": args.seed},
        [cpath, fpath, lpath],
        [out],
        started,
    )
    print(f"attn: {ids.shape[0]} rows -> {out}")
    return 0


def cmd_bench(args) -> int:
    started = time.perf_counter()
    fpath, lpath = Path(args.features), Path(args.labels)
    data = _load_dataset(fpath, lpath, TR.TASK_NODE_CLASS4)
    counts = [int(tok) for tok in args.workers.split(",")]
    if not counts or any(c < 1 for c in counts):
        raise DataError(f"bad worker list {args.workers!r}")
    config = TR.TrainConfig(
        hops=data.features.shape[1] - 1,
        hidden_dim=args.hidden_dim or 64,
        epochs=args.epochs or 3,
        batch_size=args.batch_size or 1024,
        seed=args.seed or 0,
    )
    rows = TR.bench_scaling(data, config, counts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("workers,seconds,epochs_per_sec,speedup,final_loss\n")
        for r in rows:
            fh.write(f"{r.workers},{r.seconds!r},{r.epochs_per_sec!r},{r.speedup!r},{r.final_loss!r}\n")
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "bench",
        dataclasses.asdict(config) | {"worker_counts": counts},
        [fpath, lpath],
        [out],
        started,
    )
    for r in rows:
        print(f"bench: workers={r.workers} epochs/s={r.epochs_per_sec:.3f} speedup={r.speedup:.2f}x")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoga", description=__doc__)
    parser.add_argument("--version", action="version", version=hoga.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled CSA multiplier AIG")
    p.add_argument("--kind", choices=["csa"], default="csa")
    p.add_argument("--bits", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("featurize", help="precompute the hop tensor for a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--mode", choices=["sym", "fanin"], default="sym")
    p.add_argument("--self-loops", action="store_true", help="normalize A+I (ablation)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train on a hop tensor plus labels")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=["hoga", "hop_mlp"], default=None)
    p.add_argument("--task", choices=[TR.TASK_NODE_CLASS4, TR.TASK_GRAPH_REGRESS], default=None)
    p.add_argument("--config", help="JSON file with TrainConfig fields (flags win)")
    p.add_argument("--hidden-dim", type=_positive_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--layers", type=_positive_int, default=None)
    p.add_argument("--no-class-weights", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled hop tensor")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn", help="export per-node hop attention scores")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("bench", help="throughput versus worker count")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--workers", default="1,2,4", help="comma-separated counts")
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--hidden-dim", type=_positive_int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DataError, graph.GraphFormatError, circuits.CircuitError, hopfeat.HopTensorIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TR.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
