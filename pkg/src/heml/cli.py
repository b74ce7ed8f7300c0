"""Command-line entry point: ``heml {train,eval,ablate,lr,bench-loss}``.

Exit codes: 0 success, 2 usage or config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .encoder import EncoderParams
from .evaluator import write_json, write_per_query_csv
from .experiment import ConfigError, evaluate_params, load_config, make_datasets, run
from .fileio import read_checkpoint, write_checkpoint
from .trainer import TrainConfig, metric_loss, optimal_lr_for_size

log = logging.getLogger("heml")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ABLATIONS = {
    "dict_size": ("dict_capacity", "256,512,1024"),
    "momentum": ("ema_momentum", "0,0.9,0.99,0.999"),
    "batch_shape": (("groups_C", "per_group_N"), "16x4,8x8,4x16"),
    "loss": ("loss", "he,tri_hard,tri_all"),
    "past_positives": ("include_past_positives", "false,true"),
    "metric": ("metric", "euclidean,neg_cosine"),
}

BENCH_LOSSES = ("he", "tri_all", "tri_hard", "npair", "ranked_list", "infonce_out", "infonce_out_hard")


def _load(args):
    return load_config(args.config, args.set or ())


def cmd_train(args):
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    with open(os.path.join(args.out, "metrics.jsonl"), "w") as fh:
        res = run(cfg, on_step=lambda r: fh.write(json.dumps(r) + "\n"))
    write_checkpoint(os.path.join(args.out, "checkpoint.bin"), res.state.params.to_layers())
    write_json(os.path.join(args.out, "eval.json"), res.retrieval)
    write_per_query_csv(os.path.join(args.out, "per_query.csv"), res.retrieval)
    print(f"map={res.retrieval.map:.4f} rank1={res.retrieval.rank1:.4f} -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _load(args)
    params = EncoderParams.from_layers(read_checkpoint(args.checkpoint))
    _, test = make_datasets(cfg)
    if params.input_dim != test[0].shape[1]:
        raise ConfigError(f"checkpoint expects input_dim {params.input_dim}, data has {test[0].shape[1]}")
    result = evaluate_params(params, test)
    if args.out:
        write_json(args.out, result)
    print(json.dumps({"map": result.map, "rank1": result.rank1}))
    return EXIT_OK


def _ablation_settings(dimension, values):
    keys, default = ABLATIONS[dimension]
    settings = []
    for token in (values or default).split(","):
        token = token.strip()
        if isinstance(keys, tuple):
            c, n = token.lower().split("x")
            settings.append((token, [f"groups_C={c}", f"per_group_N={n}"]))
        else:
            settings.append((token, [f"{keys}={token}"]))
    return settings


def cmd_ablate(args):
    base_overrides = list(args.set or ())
    settings = _ablation_settings(args.dimension, args.values)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [None]
    # validate the whole grid up front so config mistakes exit 2 before any training
    grid = []
    for label, extra in settings:
        for seed in seeds:
            ov = base_overrides + extra + ([f"seed={seed}"] if seed is not None else [])
            grid.append((label, seed, load_config(args.config, ov)))
    rows = []
    for label, seed, cfg in grid:
        row = {"setting": label, "seed": cfg.seed, "map": "", "rank1": "", "final_loss": "", "error": ""}
        try:
            res = run(cfg)
            row.update(map=repr(res.retrieval.map), rank1=repr(res.retrieval.rank1), final_loss=repr(res.final_loss))
        except Exception as err:  # a failed grid point is recorded, the sweep goes on
            log.warning("%s=%s seed=%s failed: %s", args.dimension, label, cfg.seed, err)
            row["error"] = f"{type(err).__name__}: {err}"
        rows.append(row)
        print(f"{args.dimension}={label} seed={cfg.seed} map={row['map'] or 'nan'}", file=sys.stderr)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=["setting", "seed", "map", "rank1", "final_loss", "error"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK if all(not r["error"] for r in rows) else EXIT_RUNTIME


def cmd_lr(args):
    try:
        value = optimal_lr_for_size(args.size)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    print(repr(value))
    return EXIT_OK


def cmd_bench_loss(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    losses = args.losses.split(",")
    rng = np.random.default_rng(args.seed)
    C, N = args.groups, args.per_group
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["loss", "dict_size", "queries", "seconds_per_call"])
        for size in sizes:
            if size < C * N:
                raise ConfigError(f"dictionary size {size} is smaller than one batch ({C * N})")
            keys = rng.normal(size=(size, args.dim))
            key_labels = rng.integers(C, C + 1000, size=size)
            key_labels[: C * N] = np.repeat(np.arange(C), N)
            queries = keys[: C * N] + 0.1 * rng.normal(size=(C * N, args.dim))
            roles = np.where(key_labels[None, :] == key_labels[: C * N, None], 1, -1).astype(np.int8)
            roles[np.arange(C * N), np.arange(C * N)] = 0
            for loss in losses:
                cfg = TrainConfig(groups_C=C, per_group_N=N, dict_capacity=size, loss=loss)
                metric_loss(cfg, queries, keys, roles)  # warm-up
                t0 = time.perf_counter()
                for _ in range(args.repeats):
                    metric_loss(cfg, queries, keys, roles)
                w.writerow([loss, size, C * N, f"{(time.perf_counter() - t0) / args.repeats:.6g}"])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="heml", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable; beats the file)")

    sp = sub.add_parser("train", help="train, then write metrics, checkpoint and evaluation")
    with_config(sp)
    sp.add_argument("--out", default="run", help="output directory (default: %(default)s)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    with_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", help="write the evaluation JSON here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sweep one dimension and tabulate mAP")
    sp.add_argument("dimension", choices=sorted(ABLATIONS))
    with_config(sp)
    sp.add_argument("--values", help="comma-separated grid (batch_shape uses CxN)")
    sp.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("lr", help="reference learning rate for a dataset size")
    sp.add_argument("size", type=float)
    sp.set_defaults(func=cmd_lr)

    sp = sub.add_parser("bench-loss", help="time each loss against dictionary size")
    sp.add_argument("--sizes", default="256,1024,4096,8192")
    sp.add_argument("--losses", default=",".join(BENCH_LOSSES))
    sp.add_argument("--groups", type=int, default=16)
    sp.add_argument("--per-group", type=int, default=16)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_bench_loss)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"heml: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:
        log.debug("failure", exc_info=True)
        print(f"heml: runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
