"""Command line: ``dve {synth,split,stats,train,eval,export}``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime or numeric error.
Every command writes ``<command>_manifest.json`` into its output directory;
wall-clock timestamps appear only there.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .encoders import FUSIONS, VARIANTS, Encoder
from .evaluation import (EvaluationError, ProbeConfig, closeness_stats, eval_recommendation,
                         eval_sign_prediction, export_embeddings_csv, write_histogram_csv)
from .graph import (GraphError, generate_planted_sign_graph, graph_stats, read_edge_list,
                    split_edges, write_edge_list, write_split)
from .trainer import DivergenceError, TrainConfig, train

log = logging.getLogger("dve")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: Path, command: str, args, inputs, outputs, started: float, extra=None) -> Path:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {os.fspath(p): _digest(p) for p in inputs},
        "outputs": [os.fspath(p) for p in outputs],
        "build_id": f"dve-v{__version__}",
        "timings": {"started": started, "finished": time.time(), "seconds": time.time() - started},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"{command}_manifest.json"
    _write_json(manifest, path)
    return path


def _read_graph(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return read_edge_list(path)


def cmd_synth(args) -> None:
    started = time.time()
    g = generate_planted_sign_graph(args.nodes, args.communities, args.p_intra, args.p_inter,
                                    args.flip_noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "graph.txt"
    write_edge_list(g, path)
    _write_manifest(out, "synth", args, [], [path], started)
    print(path)


def cmd_split(args) -> None:
    started = time.time()
    g = _read_graph(args.input)
    split = split_edges(g, args.train_fraction, args.seed)
    out = Path(args.out_dir)
    paths = write_split(split, out)
    _write_manifest(out, "split", args, [args.input], list(paths.values()), started)
    print(json.dumps(split.metadata(), sort_keys=True))


def cmd_stats(args) -> None:
    g = _read_graph(args.input)
    text = graph_stats(g).to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def _train_config(args) -> TrainConfig:
    return TrainConfig(variant=args.variant, epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, dropout_rate=args.dropout, n_noise=args.n_noise,
                       d1=args.d1, d=args.d, n_gcn_layers=args.layers, fusion=args.fusion,
                       seed=args.seed, rmsprop_decay=args.rmsprop_decay,
                       rmsprop_epsilon=args.rmsprop_epsilon, checkpoint_every=args.checkpoint_every,
                       kl_weight=args.kl_weight).validate()


def cmd_train(args) -> None:
    started = time.time()
    config = _train_config(args)
    g = _read_graph(args.train)
    out = Path(args.out_dir)
    # relative to the checkpoint directory, so relocated run trees stay byte-identical
    extra = {"train_graph": os.path.relpath(os.path.abspath(args.train), os.path.abspath(out)),
             "train_graph_sha256": _digest(args.train)}
    result = train(g, config, out, checkpoint_extra=extra)
    z_s, z_t = result.embeddings()
    emb = out / "embeddings.csv"
    export_embeddings_csv(z_s, z_t, emb)
    outputs = result.checkpoints + [out / "train_log.csv", emb]
    _write_manifest(out, "train", args, [args.train], outputs, started, {
        "train_config": config.to_dict(),
        "epoch_mean_loss": result.epoch_losses,
    })
    print(out / "checkpoint.bin")


def _load_model(checkpoint, train_path):
    spec, weights, header = load_checkpoint(checkpoint)
    g = _read_graph(train_path)
    if g.num_nodes != spec.n_nodes:
        raise CheckpointError(f"checkpoint expects {spec.n_nodes} nodes, graph {train_path} has {g.num_nodes}")
    return spec, weights, header, g


def _run_task(args, z_s, z_t, train_g, test_g, out: Path):
    if args.task == "sign":
        cfg = ProbeConfig(hidden=args.probe_hidden, epochs=args.probe_epochs, learning_rate=args.probe_lr,
                          representation=args.representation)
        return eval_sign_prediction(z_s, z_t, train_g, test_g, cfg, args.seed), []
    if args.task == "recommend":
        ks = [int(k) for k in str(args.k).split(",") if k]
        return eval_recommendation(z_s, z_t, train_g, test_g, ks).to_dict(), []
    graph = test_g if args.closeness_graph == "test" else train_g
    stats = closeness_stats(z_s, z_t, graph, args.null_samples, args.seed)
    hist = out / "histogram.csv"
    write_histogram_csv(stats, hist)
    metrics = {f"{c}_{s}": v[s] for c, v in stats["classes"].items() for s in ("mean", "variance", "count")}
    return metrics, [hist]


def cmd_eval(args) -> None:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test_g = _read_graph(args.test)
    train_g = None
    per_ckpt = []
    for ckpt in args.checkpoint:
        spec, weights, header, train_g = _load_model(ckpt, args.train)
        if test_g.num_nodes != spec.n_nodes:
            raise CheckpointError(f"test graph has {test_g.num_nodes} nodes, checkpoint expects {spec.n_nodes}")
        z_s, z_t = Encoder(spec, train_g).embed(weights)
        metrics, extra_out = _run_task(args, z_s, z_t, train_g, test_g, out)
        per_ckpt.append((ckpt, metrics, extra_out))
    if args.select == "best-test":
        # model selection on the test set; this peeks at test data
        key = {"sign": "auc", "recommend": f"recall@{str(args.k).split(',')[-1]}"}.get(args.task)
        if key is None:
            raise UsageError("--select best-test applies to the sign and recommend tasks")
        chosen = max(per_ckpt, key=lambda r: r[1][key])
    else:
        chosen = per_ckpt[-1]
    config = {k: v for k, v in vars(args).items() if k not in ("func", "checkpoint", "train", "test", "out", "config")}
    doc = {"task": args.task, "metrics": chosen[1], "config": config,
           "checkpoint": Path(chosen[0]).name, "variant": spec.variant}
    metrics_path = out / "metrics.json"
    _write_json(doc, metrics_path)
    _write_manifest(out, "eval", args, list(args.checkpoint) + [args.train, args.test],
                    [metrics_path] + chosen[2], started,
                    {"all_checkpoints": {os.fspath(c): m for c, m, _ in per_ckpt}})
    print(json.dumps(chosen[1], sort_keys=True))


def cmd_export(args) -> None:
    started = time.time()
    spec, weights, header = load_checkpoint(args.checkpoint)
    train_path = args.train
    recorded = header.get("extra", {})
    if train_path is None and "train_graph" in recorded:
        train_path = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), recorded["train_graph"])
        if not Path(train_path).is_file() or _digest(train_path) != recorded.get("train_graph_sha256"):
            raise UsageError(f"recorded training graph {train_path} is missing or changed; pass --train")
    if train_path is None and spec.variant not in ("bpwr", "mf"):
        raise UsageError("--train is required: the checkpoint does not record its training graph")
    if train_path is None:
        from .graph import SignedDigraph
        g = SignedDigraph.from_arrays(spec.n_nodes, [], [], [])
    else:
        spec, weights, header, g = _load_model(args.checkpoint, train_path)
    z_s, z_t = Encoder(spec, g).embed(weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embeddings.csv"
    export_embeddings_csv(z_s, z_t, path)
    _write_manifest(out, "export", args, [args.checkpoint] + ([train_path] if train_path else []), [path], started)
    print(path)


def _read_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="dve", description="Decoupled variational embeddings for signed directed graphs.",
                formatter_class=fmt)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="RNG seed")
        sp.add_argument("--config", default=None, help="flat key=value file; flags override its entries")
        sp.add_argument("--threads", type=int, default=1, help="upper bound on BLAS threads")

    s = sub.add_parser("synth", help="write a planted-community signed graph", formatter_class=fmt)
    s.add_argument("--nodes", type=int, default=200, help="number of nodes")
    s.add_argument("--communities", type=int, default=2, help="number of planted communities")
    s.add_argument("--p-intra", type=float, default=0.1, help="link probability inside a community")
    s.add_argument("--p-inter", type=float, default=0.05, help="link probability across communities")
    s.add_argument("--flip-noise", type=float, default=0.0, help="probability of flipping each sign")
    s.add_argument("--out", required=True, help="output directory (graph.txt)")
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="random train/test edge split", formatter_class=fmt)
    s.add_argument("--input", required=True, help="edge-list file")
    s.add_argument("--train-fraction", type=float, default=0.8, help="share of edges kept for training")
    s.add_argument("--out-dir", required=True, help="output directory (train.txt, test.txt, split.json)")
    common(s)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("stats", help="node/edge counts and densities as JSON", formatter_class=fmt)
    s.add_argument("--input", required=True, help="edge-list file")
    s.add_argument("--out", default=None, help="optional JSON output path")
    common(s, seed=False)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", help="train an embedding model", formatter_class=fmt)
    s.add_argument("--train", required=True, help="training edge-list file")
    s.add_argument("--variant", choices=VARIANTS, default="dve", help="model variant")
    s.add_argument("--epochs", type=int, default=200, help="training epochs")
    s.add_argument("--batch-size", type=int, default=1000, help="edges per batch")
    s.add_argument("--lr", type=float, default=0.01, help="RMSProp learning rate")
    s.add_argument("--dropout", type=float, default=0.2, help="dropout probability")
    s.add_argument("--n-noise", type=int, default=5, help="non-linked targets sampled per edge")
    s.add_argument("--d1", type=int, default=128, help="hidden GCN width")
    s.add_argument("--d", type=int, default=64, help="per-branch embedding size")
    s.add_argument("--layers", type=int, default=2, help="GCN layers (1-4)")
    s.add_argument("--fusion", choices=FUSIONS, default="concat", help="branch fusion function")
    s.add_argument("--rmsprop-decay", type=float, default=0.9, help="RMSProp squared-gradient decay")
    s.add_argument("--rmsprop-epsilon", type=float, default=1e-8, help="RMSProp denominator epsilon")
    s.add_argument("--kl-weight", type=float, default=1.0, help="multiplier on the KL terms")
    s.add_argument("--checkpoint-every", type=int, default=0, help="extra checkpoint every N epochs (0: final only)")
    s.add_argument("--out-dir", required=True, help="output directory")
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate checkpoint embeddings", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, action="append", help="checkpoint file (repeatable)")
    s.add_argument("--train", required=True, help="training edge-list file used for the checkpoint")
    s.add_argument("--test", required=True, help="test edge-list file")
    s.add_argument("--task", choices=("sign", "recommend", "closeness"), default="sign", help="evaluation task")
    s.add_argument("--k", default="10,20,50", help="comma-separated cut-offs for recommendation")
    s.add_argument("--select", choices=("final", "best-test"), default="final",
                   help="with several checkpoints: report the last, or the best on the test set")
    s.add_argument("--representation", choices=("directional", "symmetric"), default="directional",
                   help="link representation fed to the sign probe")
    s.add_argument("--probe-hidden", type=int, default=64, help="probe hidden width")
    s.add_argument("--probe-epochs", type=int, default=100, help="probe training epochs")
    s.add_argument("--probe-lr", type=float, default=0.01, help="probe learning rate")
    s.add_argument("--null-samples", type=int, default=10000, help="non-linked pairs for closeness stats")
    s.add_argument("--closeness-graph", choices=("train", "test"), default="train",
                   help="edges whose pairs are scored by the closeness task")
    s.add_argument("--out", required=True, help="output directory (metrics.json)")
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", help="write eval-mode embeddings as CSV", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--train", default=None, help="training edge list (default: the path recorded in the checkpoint)")
    s.add_argument("--out", required=True, help="output directory (embeddings.csv)")
    common(s, seed=False)
    s.set_defaults(func=cmd_export)
    return p


def _apply_config_file(parser, argv):
    """Parse ``argv``; entries of a ``--config`` file become subcommand defaults, so flags win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if known.config and command is not None:
        sub = subparsers[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in _read_config_file(known.config).items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {command}")
            action = actions[key]
            value = action.type(raw) if action.type else raw
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config {key}={raw!r}: choose from {sorted(action.choices)}")
            if isinstance(action, argparse._AppendAction):
                # argparse appends to list defaults, so an explicit flag must replace the file entry
                if any(a.split("=")[0] in action.option_strings for a in argv):
                    continue
                value = [value]
            defaults[key] = value
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


@contextlib.contextmanager
def _thread_limit(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # results do not depend on it
        yield
        return
    with threadpool_limits(limits=max(1, n)):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except (UsageError, OSError, ValueError) as exc:
        print(f"dve: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            args.func(args)
    except (UsageError, GraphError, FileNotFoundError, CheckpointError, EvaluationError, ValueError) as exc:
        print(f"dve: error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"dve: training diverged: {exc} (last good checkpoint: {exc.last_good})", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, OSError) as exc:
        print(f"dve: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
