"""Multi-variant, multi-seed training: ablations, the filter study and grid sweeps."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .evaluation import MetricsReport, evaluate
from .pipeline import InteractionDataset, Split
from .train import train

log = logging.getLogger(__name__)

ABLATIONS: dict[str, dict] = {
    "full": {},
    "w/o TSP": {"model.use_tsp": False},
    "w/o AFF": {"model.use_aff": False},
    "w/o ASIF": {"model.use_asif": False},
    "w/o NAP": {"model.use_nap": False},
    "w/o URA": {"model.use_ura": False},
    "w/o I2A": {"model.use_i2a": False},
}

FILTER_VARIANTS: dict[str, dict] = {
    "none": {"model.filter_kind": "none"},
    "LPF": {"model.filter_kind": "low_pass"},
    "HSF": {"model.filter_kind": "high_suppress"},
    "LF": {"model.filter_kind": "learnable"},
    "AFF": {"model.filter_kind": "adaptive"},
}

DataFactory = Callable[[RunConfig], tuple[InteractionDataset, Split]]


@dataclass
class TrialResult:
    variant: str
    seed: int
    overrides: dict
    report: MetricsReport
    best_epoch: int
    parameters: int


def run_trials(base: RunConfig, variants: Mapping[str, Mapping], seeds: Sequence[int],
               data: DataFactory, out_dir: str | Path | None = None) -> list[TrialResult]:
    """Train and test-evaluate every variant under every seed.

    ``data`` maps a resolved config to its dataset and split, so variants that
    change preprocessing (e.g. the span length) get their own data.
    """
    results = []
    for name, overrides in variants.items():
        for seed in seeds:
            run = base.replace(**{**overrides, "train.seed": seed})
            dataset, split = data(run)
            rd = None
            if out_dir is not None:
                rd = Path(out_dir) / _slug(name) / f"seed{seed}"
            res = train(run, dataset, split, run_dir=rd)
            model = res.best_model()
            report = evaluate(model, dataset, split.test, run.eval.beta, run.eval.batch_size,
                              run.eval.cutoffs, run.eval.mask_history, seed=seed)
            log.info("%s seed %d: %s", name, seed, report.record())
            results.append(TrialResult(name, seed, dict(overrides), report, res.best_epoch,
                                       model.parameter_count()))
    return results


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower() or "variant"


def metric_columns(cutoffs: Sequence[int]) -> list[str]:
    return [f"recall@{k}" for k in cutoffs] + [f"ndcg@{k}" for k in cutoffs]


def summarize(results: Sequence[TrialResult]) -> list[dict]:
    """Mean and standard deviation per variant, in first-seen order."""
    rows = []
    names = list(dict.fromkeys(r.variant for r in results))
    for name in names:
        group = [r for r in results if r.variant == name]
        row = {"variant": name, "seeds": len(group), "parameters": group[0].parameters}
        for col in metric_columns(list(group[0].report.recall)):
            kind, k = col.split("@")
            vals = np.array([getattr(r.report, kind)[int(k)] for r in group])
            row[col] = float(vals.mean())
            row[col + "_std"] = float(vals.std())
        rows.append(row)
    return rows


def write_tables(results: Sequence[TrialResult], path_prefix: str | Path) -> tuple[Path, Path, str]:
    """Write per-trial and summary TSVs; return their paths and a readable summary."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    cutoffs = list(results[0].report.recall)
    cols = metric_columns(cutoffs)
    trials_path = prefix.with_name(prefix.name + "_trials.tsv")
    with trials_path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "seed", "best_epoch", *cols])
        for r in results:
            rec = r.report.record()
            w.writerow([r.variant, r.seed, r.best_epoch, *(f"{rec[c]:.6f}" for c in cols)])
    summary = summarize(results)
    summary_path = prefix.with_name(prefix.name + "_summary.tsv")
    with summary_path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "seeds", "parameters", *cols, *(c + "_std" for c in cols)])
        for row in summary:
            w.writerow([row["variant"], row["seeds"], row["parameters"],
                        *(f"{row[c]:.6f}" for c in cols), *(f"{row[c + '_std']:.6f}" for c in cols)])
    return trials_path, summary_path, format_summary(summary, cols)


def format_summary(rows: Sequence[dict], cols: Sequence[str]) -> str:
    width = max(len(r["variant"]) for r in rows) + 2
    lines = ["variant".ljust(width) + "  ".join(c.rjust(10) for c in cols)]
    for r in rows:
        lines.append(r["variant"].ljust(width) + "  ".join(f"{r[c]:10.4f}" for c in cols))
    return "\n".join(lines)


def ablate(base: RunConfig, data: DataFactory, seeds: Sequence[int] | None = None,
           out_dir: str | Path | None = None) -> list[TrialResult]:
    return run_trials(base, ABLATIONS, seeds if seeds is not None else base.sweep.seeds, data, out_dir)


def filter_study(base: RunConfig, data: DataFactory, seeds: Sequence[int] | None = None,
                 out_dir: str | Path | None = None) -> list[TrialResult]:
    return run_trials(base, FILTER_VARIANTS, seeds if seeds is not None else base.sweep.seeds,
                      data, out_dir)


def grid_variants(grid: Mapping[str, Sequence]) -> dict[str, dict]:
    """Cartesian product of dotted-key value lists, named ``key=value,...``."""
    keys = list(grid)
    out = {}
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        out[",".join(f"{k}={v}" for k, v in overrides.items()) or "base"] = overrides
    return out


def sweep(base: RunConfig, data: DataFactory, grid: Mapping[str, Sequence],
          seeds: Sequence[int] | None = None, out_dir: str | Path | None = None) -> list[TrialResult]:
    """Retrain every grid point under every seed (seeds vary training, not evaluation)."""
    return run_trials(base, grid_variants(grid), seeds if seeds is not None else base.sweep.seeds,
                      data, out_dir)
