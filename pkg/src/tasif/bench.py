"""Fusion-layer cost as the number of attribute types grows.

The TASIF fusion layer is: fuse the streams, one guided attention on the ID
stream and one self-attention per attribute stream, i.e. ``|A| + 1`` attention
matrices. The reference cross-fusion layer attends from every source to every
source over ``|A| + 2`` sources (ID, each attribute, position), i.e.
``(|A| + 2)^2`` attention matrices. Both run forward only on random inputs.
"""

from __future__ import annotations

import csv
import gc
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core.tensor import Tensor, no_grad
from .model import (ModelConfig, VocabSizes, _attend, asif_attention, attention_bias,
                    attribute_self_attention, fuse_representations, init_params)


@dataclass
class ScalingRecord:
    attribute_count: int
    attention_matrix_count: int
    fusion_layer_wall_time: float
    model_variant: str


def _random_streams(rng, b: int, n: int, d: int, n_attr: int):
    h_id = Tensor(rng.standard_normal((b, n, d)))
    attrs = [Tensor(rng.standard_normal((b, n, d))) for _ in range(n_attr)]
    return h_id, attrs


def tasif_fusion_layer(h_id, attrs, params, config: ModelConfig, bias) -> tuple[Tensor, list]:
    pre = "blocks.0"
    fused = fuse_representations(h_id, attrs, params["emb.pos"], params, f"{pre}.fusion", config.fusion_mode)
    out, p_id, _ = asif_attention(fused, h_id, bias, params, f"{pre}.attn.id", config)
    maps = [p_id]
    for j, a in enumerate(attrs):
        _, p, _ = attribute_self_attention(a, bias, params, f"{pre}.attn.a{j}", config)
        maps.append(p)
    return out, maps


def reference_params(config: ModelConfig, n_sources: int, seed: int = 0) -> dict[str, Tensor]:
    """One projection set per ordered (query source, key/value source) pair."""
    rng = np.random.default_rng(seed)
    d = config.d
    params = {}
    for p in range(n_sources):
        for q in range(n_sources):
            pre = f"x{p}_{q}"
            for proj in ("q", "k", "v", "o"):
                params[f"{pre}.{proj}.w"] = Tensor(0.02 * rng.standard_normal((d, d)))
                params[f"{pre}.{proj}.b"] = Tensor(np.zeros(d))
            params[f"{pre}.ln.g"] = Tensor(np.ones(d))
            params[f"{pre}.ln.b"] = Tensor(np.zeros(d))
    return params


def reference_fusion_layer(sources: Sequence[Tensor], params, config: ModelConfig, bias):
    """Cross-attention from every source to every source, summed per query source."""
    maps, outs = [], []
    for p, src_q in enumerate(sources):
        acc = None
        for q, src_kv in enumerate(sources):
            out, probs, _ = _attend(src_q, src_kv, bias, params, f"x{p}_{q}", config, False, None,
                                    key_src=src_kv)
            maps.append(probs)
            acc = out if acc is None else acc + out
        outs.append(acc)
    return outs, maps


def bench_scaling(attribute_counts: Sequence[int] = (1, 2, 4, 8), n: int = 64, d: int = 64,
                  batch: int = 16, trials: int = 10, heads: int = 2, seed: int = 0,
                  warmup: int = 3) -> tuple[list[ScalingRecord], dict[str, float]]:
    """Median wall time of each fusion layer and the fitted log-log growth exponents.

    Trials are taken round-robin over every (attribute count, variant) pair, so
    a transient slowdown of the machine spreads over all configurations
    instead of skewing one of them. Each timed call follows an untimed one of
    the same configuration so every measurement starts from warm caches.
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(d=d, n=n, L=1, heads=heads, dropout_rate=0.0, fusion_mode="gate")
    bias = attention_bias(np.ones((batch, n), dtype=bool), causal=True)
    runs = []
    for n_attr in attribute_counts:
        params = init_params(config, VocabSizes(4, (4,) * n_attr, 1), seed)
        h_id, attrs = _random_streams(rng, batch, n, d, n_attr)
        ref = reference_params(config, n_attr + 2, seed)
        sources = [h_id, *attrs, params["emb.pos"] + Tensor(np.zeros((batch, n, d)))]
        runs.append((n_attr, "tasif",
                     lambda h_id=h_id, attrs=attrs, params=params:
                     tasif_fusion_layer(h_id, attrs, params, config, bias)[1]))
        runs.append((n_attr, "mssr_reference",
                     lambda sources=sources, ref=ref: reference_fusion_layer(sources, ref, config, bias)[1]))
    times: list[list[float]] = [[] for _ in runs]
    counts = []
    gc_was_enabled = gc.isenabled()
    with threadpool_limits(limits=1), no_grad():
        for _, _, fn in runs:
            counts.append(len(fn()))
            for _ in range(warmup):
                fn()
        gc.disable()
        try:
            for _ in range(trials):
                for i, (_, _, fn) in enumerate(runs):
                    fn()  # re-warm caches evicted by the previous configuration
                    t0 = time.perf_counter()
                    fn()
                    times[i].append(time.perf_counter() - t0)
        finally:
            if gc_was_enabled:
                gc.enable()
    records = [ScalingRecord(n_attr, count, statistics.median(ts), variant)
               for (n_attr, variant, _), count, ts in zip(runs, counts, times)]
    return records, fit_slopes(records)


def fit_slopes(records: Sequence[ScalingRecord]) -> dict[str, float]:
    """Least-squares slope of log(time) against log(|A| + 2) per variant."""
    slopes = {}
    for variant in dict.fromkeys(r.model_variant for r in records):
        rs = [r for r in records if r.model_variant == variant]
        x = np.log([r.attribute_count + 2 for r in rs])
        y = np.log([r.fusion_layer_wall_time for r in rs])
        slopes[variant] = float(np.polyfit(x, y, 1)[0])
    return slopes


def write_scaling_table(records: Sequence[ScalingRecord], slopes: dict[str, float],
                        path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["model_variant", "attribute_count", "attention_matrix_count", "fusion_layer_wall_time"])
        for r in records:
            w.writerow([r.model_variant, r.attribute_count, r.attention_matrix_count,
                        f"{r.fusion_layer_wall_time:.6e}"])
    lines = [f"{'variant':<16}{'|A|':>5}{'matrices':>10}{'median s':>12}"]
    lines += [f"{r.model_variant:<16}{r.attribute_count:>5}{r.attention_matrix_count:>10}"
              f"{r.fusion_layer_wall_time:>12.5f}" for r in records]
    lines += [f"slope {k}: {v:.3f}" for k, v in slopes.items()]
    return "\n".join(lines)
