"""Command-line entry point: ``grassp {synth,split,train,eval,embed}``.

Every command writes a JSON run manifest next to its outputs.  Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .estimator import GraSSP
from .evaluation import TASKS, save_metrics
from .graph import DatasetSplit, load_graph, save_graph, split_dataset
from .model import write_snapshots
from .synthetic import AlphaSpec, BetaSpec, generate_alpha, generate_beta
from .training import DEFAULT_LAMBDA_GRID, TrainSchedule, read_config_file, write_loss_trace

__all__ = ["main", "build_parser"]

DEFAULT_PRIOR_SCALE = 1e5


class UsageError(Exception):
    """Invalid combination of arguments (exit code 2)."""


def _write_manifest(path, command, args, inputs, outputs, started, **extra):
    payload = {
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "duration_seconds": time.perf_counter() - started,
        **extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _sidecar(path):
    return Path(path).with_suffix(".manifest.json")


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_grid(text):
    """``start:stop:step`` with ``stop`` included when hit exactly."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, started):
    if args.kind == "alpha":
        spec = AlphaSpec(num_nodes=args.n, horizon=args.horizon if args.horizon else 1.0,
                         num_bins=args.bins if args.bins else 10)
        graph, _, _ = generate_alpha(spec, args.seed)
    else:
        spec = BetaSpec(num_nodes=args.n, horizon=args.horizon if args.horizon else 800.0,
                        num_time_bins=args.bins if args.bins else 8,
                        num_clusters=args.clusters, p_intra=args.p_intra,
                        p_inter=args.p_inter)
        graph = generate_beta(spec, args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    _write_manifest(_sidecar(out), "synth", args, [], [out], started,
                    generator={"kind": args.kind, "spec": asdict(spec)},
                    num_nodes=graph.num_nodes, horizon=graph.horizon,
                    num_intervals=graph.num_intervals, num_events=graph.num_events)


def _graph_shape(path, num_nodes, horizon):
    """Fill missing node count / horizon from a sidecar manifest."""
    side = _sidecar(path)
    if (num_nodes is None or horizon is None) and side.exists():
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
        num_nodes = meta.get("num_nodes") if num_nodes is None else num_nodes
        horizon = meta.get("horizon") if horizon is None else horizon
    return num_nodes, horizon


def cmd_split(args, started):
    num_nodes, horizon = _graph_shape(args.graph, args.num_nodes, args.horizon)
    graph = load_graph(args.graph, num_nodes, horizon)
    split = split_dataset(graph, args.future_frac, args.heldout_frac, args.seed)
    out = Path(args.output)
    split.save(out)
    files = [out / name for name in ("train.csv", "heldout.csv", "future.csv", "split.json")]
    _write_manifest(out / "manifest.json", "split", args, [args.graph], files, started)


def _train_settings(args):
    model_kw, schedule, extra = ({}, TrainSchedule(), {})
    if args.config:
        model_kw, schedule, extra = read_config_file(args.config)
    for key in ("num_nodes", "horizon"):
        if key in model_kw:
            raise UsageError(f"config key {key!r} is taken from the data and cannot be set")
    if args.epochs is not None:
        e1, e2, e3 = args.epochs
        schedule = TrainSchedule(**{**asdict(schedule), "stage1_epochs": e1,
                                    "stage2_epochs": e2, "stage3_epochs": e3})
    seed = args.seed if args.seed is not None else extra.get("seed", 0)
    return model_kw, schedule, extra, seed


def cmd_train(args, started):
    if args.resume:
        raise UsageError("resuming from a checkpoint is not supported")
    model_kw, schedule, extra, seed = _train_settings(args)
    src = Path(args.data)
    if src.is_dir():
        data = DatasetSplit.load(src)
        inputs = [src / "split.json", src / "train.csv", src / "heldout.csv"]
    else:
        num_nodes, horizon = _graph_shape(src, None, None)
        data = load_graph(src, num_nodes, horizon)
        inputs = [src]
    if args.lambda_grid is not None:
        if not isinstance(data, DatasetSplit):
            raise UsageError("--lambda-grid needs a split directory (validation dyads)")
        prior_scale = None
        grid = args.lambda_grid or list(DEFAULT_LAMBDA_GRID)
    else:
        prior_scale = args.prior_scale or model_kw.get("prior_scale", DEFAULT_PRIOR_SCALE)
        grid = list(DEFAULT_LAMBDA_GRID)
    est = GraSSP(
        dim=model_kw.get("dim", 2), num_bins=model_kw.get("num_bins", 100),
        prior_scale=prior_scale, lambda_grid=tuple(grid),
        **asdict(schedule),
        normalize_time=extra.get("normalize_time", True), random_state=seed)
    est.fit(data)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, trace = out / "checkpoint.json", out / "loss_trace.csv"
    est.save(ckpt)
    write_loss_trace(trace, est.trace_)
    outputs = [ckpt, trace]
    if est.selection_ is not None:
        sel = out / "selection.json"
        with open(sel, "w", encoding="utf-8") as fh:
            json.dump({"best": est.prior_scale_, "table": est.selection_}, fh, indent=2)
            fh.write("\n")
        outputs.append(sel)
    _write_manifest(out / "manifest.json", "train", args, inputs, outputs, started,
                    prior_scale=est.prior_scale_, schedule=asdict(schedule))


def cmd_eval(args, started):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    est = GraSSP.load(ckpt)
    split = DatasetSplit.load(args.split)
    tasks = list(TASKS) if args.task == "all" else [args.task]
    records = est.evaluate(split, tasks, seeds=args.seeds)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_metrics(out, records, checkpoint=str(ckpt), split=str(args.split))
    _write_manifest(_sidecar(out), "eval", args, [ckpt, args.split], [out], started)


def cmd_embed(args, started):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    est = GraSSP.load(ckpt)
    times = args.grid if args.grid is not None else args.times
    if any(t < 0 for t in times):
        raise ValueError("snapshot times must be non-negative")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_snapshots(out, est.params_, est.config_, times, est.time_scale_)
    _write_manifest(_sidecar(out), "embed", args, [ckpt], [out], started)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="grassp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="cap on numeric worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic interval graph")
    p.add_argument("kind", choices=["alpha", "beta"])
    p.add_argument("-o", "--output", required=True, help="interval CSV to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="number of nodes")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--bins", type=int, default=None, help="ground-truth time bins")
    p.add_argument("--clusters", type=int, default=10, help="beta: clusters per bin")
    p.add_argument("--p-intra", type=float, default=0.8, help="beta: intra-cluster link prob.")
    p.add_argument("--p-inter", type=float, default=1e-2, help="beta: inter-cluster link prob.")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="train / held-out / future split")
    p.add_argument("graph", help="interval CSV")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--future-frac", type=float, default=0.1)
    p.add_argument("--heldout-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-nodes", type=int, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit the model")
    p.add_argument("data", help="split directory or interval CSV")
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--prior-scale", type=float, default=None)
    p.add_argument("--lambda-grid", nargs="?", const="", default=None, type=_parse_floats,
                   help="select the prior scale on validation AUC (default grid 1e1..1e10)")
    p.add_argument("--epochs", type=_parse_ints, default=None,
                   help="stage epochs as e1,e2,e3")
    p.add_argument("--resume", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("split", help="split directory")
    p.add_argument("--task", choices=list(TASKS) + ["all"], default="all")
    p.add_argument("--seeds", type=_parse_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("-o", "--output", required=True, help="metrics JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export latent positions")
    p.add_argument("checkpoint")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid", type=_parse_grid, help="start:stop:step")
    group.add_argument("--times", type=_parse_floats, help="comma-separated times")
    p.add_argument("-o", "--output", required=True, help="snapshot CSV")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.epochs is not None and len(args.epochs) != 3:
        parser.error("--epochs needs three comma-separated counts")
    started = time.perf_counter()
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args, started)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"grassp: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"grassp {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
