"""Command-line entry point: ``tasif <verb> [options]``.

Every config key is also a flag (``--train.lr 1e-3``, ``--model.use_tsp false``).
Errors are reported on stderr as one tab-separated line,
``error<TAB>category=<name><TAB>message=<text>``, with a per-category exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bench import bench_scaling, write_scaling_table
from .checkpoint import load_checkpoint
from .config import RunConfig, config_keys, load_config, parse_value
from .errors import ConfigError, DataError, TasifError
from .evaluation import evaluate, write_rank_dump
from .experiments import ablate, filter_study, sweep, write_tables
from .pipeline import (Example, InteractionDataset, Split, leave_one_out_split, make_batch,
                       prepare_dataset)
from .synthetic import sample_path
from .train import train

log = logging.getLogger("tasif")


# -- helpers -----------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for key in config_keys():
        value = getattr(args, "cfg__" + key.replace(".", "__"), None)
        if value is not None:
            overrides[key] = parse_value(value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = parse_value(value)
    if getattr(args, "sample", False):
        overrides.setdefault("data.path", str(sample_path()))
        overrides.setdefault("data.attributes", ["category"])
    return load_config(args.config, overrides)


def load_data(run: RunConfig) -> tuple[InteractionDataset, Split, bool]:
    if not run.data.path:
        raise ConfigError("data.path is not set (use --data.path FILE or --sample)")
    cache = run.data.cache_dir or str(Path(run.output_dir) / "cache")
    ds, hit = prepare_dataset(run.data.path, run.data.schema(), run.data.k_core, run.model.span_days,
                              run.model.n, run.data.min_timestamp, cache)
    return ds, leave_one_out_split(ds), hit


def data_factory(run: RunConfig):
    ds, split, _ = load_data(run)
    return ds, split


def _out(run: RunConfig) -> Path:
    p = Path(run.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _metrics_rows(record: dict) -> list[list]:
    return [[k, f"{v:.6f}"] for k, v in record.items() if "@" in k]


# -- verbs -------------------------------------------------------------------

def cmd_prepare(args) -> int:
    run = resolve_config(args)
    ds, split, hit = load_data(run)
    out = _out(run)
    stats = ds.statistics()
    rows = [[k, json.dumps(v) if isinstance(v, dict) else v] for k, v in stats.items()]
    rows += [["train_examples", len(split.train)], ["dropped_users", split.dropped_users],
             ["cache_hit", str(hit).lower()], ["fingerprint", ds.fingerprint()]]
    _write_tsv(out / "dataset_stats.tsv", ["statistic", "value"], rows)
    print(f"dataset {run.data.path}: {stats['users']} users, {stats['items']} items, "
          f"{stats['interactions']} interactions, density {stats['density']:.4f}, "
          f"{stats['time_tokens']} time tokens ({'cache hit' if hit else 'prepared'})")
    print(f"statistics written to {out / 'dataset_stats.tsv'}")
    return 0


def cmd_train(args) -> int:
    run = resolve_config(args)
    ds, split, _ = load_data(run)
    out = _out(run)
    res = train(run, ds, split, run_dir=out, resume=args.resume)
    model = res.best_model()
    report = evaluate(model, ds, split.test, run.eval.beta, run.eval.batch_size, run.eval.cutoffs,
                      run.eval.mask_history, seed=run.train.seed)
    rec = report.record()
    _write_tsv(out / "test_metrics.tsv", ["metric", "value"], _metrics_rows(rec))
    (out / "test_metrics.json").write_text(json.dumps(rec, sort_keys=True) + "\n")
    print(f"trained {len(res.history)} epoch(s); best epoch {res.best_epoch} "
          f"(valid ndcg@20 {res.best_score:.4f}){'; stopped early' if res.stopped_early else ''}")
    print("test " + "  ".join(f"{k}={v:.4f}" for k, v in rec.items() if "@" in k))
    print(f"checkpoints and log in {out}")
    return 0


def cmd_eval(args) -> int:
    run = resolve_config(args)
    ds, split, _ = load_data(run)
    ck = load_checkpoint(args.checkpoint, expected_dataset=ds.fingerprint())
    if ck.model.config.n != run.model.n or ck.model.config.span_days != run.model.span_days:
        raise ConfigError("checkpoint sequence length/span differ from the prepared dataset")
    beta = run.eval.beta if args.beta is None else args.beta
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [run.train.seed]
    examples = split.get(args.split)
    reports = [evaluate(ck.model, ds, examples, beta, run.eval.batch_size, run.eval.cutoffs,
                        run.eval.mask_history, seed=s) for s in seeds]
    cols = [k for k in reports[0].record() if "@" in k]
    mean = {c: float(np.mean([r.record()[c] for r in reports])) for c in cols}
    std = {c: float(np.std([r.record()[c] for r in reports])) for c in cols}
    out = _out(run)
    _write_tsv(out / f"eval_{args.split}.tsv", ["metric", "mean", "std"],
               [[c, f"{mean[c]:.6f}", f"{std[c]:.6f}"] for c in cols])
    if args.rank_dump:
        write_rank_dump(args.rank_dump, ds, examples, reports[0].ranks)
    print(f"{args.split} ({reports[0].evaluated_users} users, beta={beta}, seeds={seeds})")
    print("  ".join(f"{c}={mean[c]:.4f}" for c in cols))
    return 0


def _study(args, fn, name: str) -> int:
    run = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = _out(run)
    results = fn(run, data_factory, seeds, out / name)
    _, summary_path, text = write_tables(results, out / name)
    print(text)
    print(f"tables written to {summary_path.parent}")
    return 0


def cmd_ablate(args) -> int:
    return _study(args, ablate, "ablation")


def cmd_filter_study(args) -> int:
    return _study(args, filter_study, "filter_study")


def cmd_sweep(args) -> int:
    run = resolve_config(args)
    grid = {}
    for item in args.grid or []:
        key, _, values = item.partition("=")
        if not values:
            raise ConfigError(f"--grid expects key=v1,v2,..., got {item!r}")
        grid[key.strip()] = [parse_value(v) for v in values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = _out(run)
    results = sweep(run, data_factory, grid, seeds, out / "sweep")
    _, summary_path, text = write_tables(results, out / "sweep")
    print(text)
    print(f"tables written to {summary_path.parent}")
    return 0


def cmd_bench_scaling(args) -> int:
    counts = [int(c) for c in args.attribute_counts.split(",")]
    records, slopes = bench_scaling(counts, args.n, args.d, args.batch, args.trials, args.heads, args.seed)
    text = write_scaling_table(records, slopes, Path(args.output_dir) / "scaling.tsv")
    print(text)
    print(f"table written to {Path(args.output_dir) / 'scaling.tsv'}")
    return 0


def cmd_dump_attention(args) -> int:
    run = resolve_config(args)
    ds, _, _ = load_data(run)
    ck = load_checkpoint(args.checkpoint, expected_dataset=ds.fingerprint())
    users = {s.user: i for i, s in enumerate(ds.sequences)}
    if args.user not in users:
        raise DataError(f"unknown user {args.user!r}")
    seq = ds.sequences[users[args.user]]
    n = ck.model.config.n
    ex = Example(users[args.user], seq.items, seq.time_tokens, int(seq.items[-1]), int(seq.timestamps[-1]))
    batch = make_batch([ex], [0], ds, n)
    out = ck.model.forward(batch, training=False, keep_attention=True)
    final = out.attention_maps[-1]
    items = ds.item_names()
    labels = [ds.attribute_names(j) for j in range(len(ds.attribute_types))]
    rows = []
    for stream, probs in final.items():
        pathway = "i-i" if stream == "id" else f"a-a:{ds.attribute_types[int(stream[1:])]}"
        for h in range(probs.shape[1]):
            for pos in range(n):
                item = int(batch.items[0, pos])
                vals = ["|".join(labels[j][v] for v in batch.attributes[j][0, pos] if v > 0)
                        for j in range(len(labels))]
                rows.append([pathway, h, pos, items[item] if item else "<pad>", ";".join(vals),
                             f"{probs[0, h, -1, pos]:.10f}"])
    path = Path(args.output) if args.output else _out(run) / f"attention_{args.user}.tsv"
    _write_tsv(path, ["pathway", "head", "key_position", "item", "attributes", "weight"], rows)
    print(f"final-block attention of the last position for user {args.user} written to {path}")
    return 0


# -- parser ------------------------------------------------------------------

def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--sample", action="store_true", help="use the bundled 200-row sample dataset")
    g = p.add_argument_group("config keys")
    for key in config_keys():
        g.add_argument("--" + key, dest="cfg__" + key.replace(".", "__"), metavar="V", default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tasif", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tasif {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    cfg = _config_parent()

    sub.add_parser("prepare", parents=[cfg], help="build and cache a dataset").set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", parents=[cfg], help="train a model")
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt in output_dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[cfg], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--beta", type=float)
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--rank-dump", help="write per-user ranks to this TSV")
    p.set_defaults(fn=cmd_eval)

    for verb, fn, help_ in (("ablate", cmd_ablate, "train every single-switch ablation"),
                            ("filter-study", cmd_filter_study, "compare filter kinds")):
        p = sub.add_parser(verb, parents=[cfg], help=help_)
        p.add_argument("--seeds", help="comma-separated seeds (default sweep.seeds)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep", parents=[cfg], help="grid over config keys and seeds")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="grid axis (repeatable)")
    p.add_argument("--seeds", help="comma-separated seeds (default sweep.seeds)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench-scaling", help="time fusion layers against attribute count")
    p.add_argument("--attribute-counts", default="1,2,4,8")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default="runs/bench")
    p.set_defaults(fn=cmd_bench_scaling)

    p = sub.add_parser("dump-attention", parents=[cfg], help="write attention rows for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--output", help="TSV path (default output_dir/attention_<user>.tsv)")
    p.set_defaults(fn=cmd_dump_attention)
    return parser


def report_error(exc: BaseException) -> int:
    category = getattr(exc, "category", "internal")
    code = getattr(exc, "exit_code", 1)
    message = " ".join(str(exc).split())
    print(f"error\tcategory={category}\tmessage={message}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (TasifError, OSError, ValueError) as exc:
        return report_error(exc)


if __name__ == "__main__":
    sys.exit(main())
