"""Full-catalogue scoring and leave-one-out ranking metrics."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .core.tensor import no_grad
from .pipeline import Example, InteractionDataset, build_batches

CUTOFFS = (10, 20)


@dataclass
class MetricsReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    evaluated_users: int
    seed: int = 0
    wall_time: float = 0.0
    ranks: np.ndarray | None = field(default=None, repr=False)

    def record(self) -> dict:
        out = {f"recall@{k}": v for k, v in self.recall.items()}
        out.update({f"ndcg@{k}": v for k, v in self.ndcg.items()})
        out.update(users=self.evaluated_users, seed=self.seed, wall_time=round(self.wall_time, 4))
        return out


def item_attribute_matrix(dataset: InteractionDataset, j: int) -> sparse.csr_matrix:
    """Row-normalised (|I|+1) x |A_j| map from items to their attribute values.

    Column ``k`` stands for value index ``k + 1``. Row 0 (padding) and items
    without a value are all-zero.
    """
    table = dataset.item_attributes[j]
    rows, cols = np.nonzero(table > 0)
    vals = table[rows, cols] - 1
    counts = np.bincount(rows, minlength=table.shape[0]).astype(np.float64)
    data = 1.0 / counts[rows]
    shape = (table.shape[0], dataset.attribute_sizes()[j])
    return sparse.csr_matrix((data, (rows, vals)), shape=shape)


def composite_score(s_id: np.ndarray, s_attrs: Sequence[np.ndarray], item_table: np.ndarray,
                    attr_tables: Sequence[np.ndarray], item_attr: Sequence[sparse.spmatrix],
                    attr_weights: Sequence[float], beta: float) -> np.ndarray:
    """Blend ID scores with attribute scores gathered onto items.

    Returns a B x (|I|+1) matrix whose column 0 (padding) is ``-inf``.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    scores = (1.0 - beta) * (s_id @ item_table.T) if beta < 1.0 else np.zeros((len(s_id), len(item_table)))
    if beta > 0.0:
        for s_a, table, m, w in zip(s_attrs, attr_tables, item_attr, attr_weights):
            value_scores = s_a @ table[1:].T                      # B x |A_j|
            scores = scores + beta * w * np.asarray(m @ value_scores.T).T
    scores[:, 0] = -np.inf
    return scores


def target_ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target; ties go to the lower item index."""
    targets = np.asarray(targets)
    if (targets <= 0).any():
        raise ValueError("target item 0 is the padding index")
    rows = np.arange(len(targets))
    t_score = scores[rows, targets][:, None]
    before = np.arange(scores.shape[1])[None, :] < targets[:, None]
    return 1 + (scores > t_score).sum(axis=1) + ((scores == t_score) & before).sum(axis=1)


def metrics_from_ranks(ranks: np.ndarray, cutoffs: Sequence[int] = CUTOFFS, seed: int = 0,
                       wall_time: float = 0.0) -> MetricsReport:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no users to evaluate")
    gains = 1.0 / np.log2(ranks + 1.0)
    recall = {k: float(np.mean(ranks <= k)) for k in cutoffs}
    ndcg = {k: float(np.mean(np.where(ranks <= k, gains, 0.0))) for k in cutoffs}
    return MetricsReport(recall, ndcg, int(ranks.size), seed, wall_time, ranks)


def rank_and_measure(scores: np.ndarray, targets: np.ndarray,
                     cutoffs: Sequence[int] = CUTOFFS) -> MetricsReport:
    return metrics_from_ranks(target_ranks(scores, targets), cutoffs)


def evaluate(model, dataset: InteractionDataset, examples: Sequence[Example], beta: float = 0.3,
             batch_size: int = 256, cutoffs: Sequence[int] = CUTOFFS, mask_history: bool = False,
             seed: int = 0) -> MetricsReport:
    """Score every example against the whole catalogue with dropout off."""
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    start = time.perf_counter()
    params = model.params
    n_attr = len(dataset.attribute_types)
    item_attr = [item_attribute_matrix(dataset, j) for j in range(n_attr)]
    attr_tables = [params[f"emb.attr{j}"].data for j in range(n_attr)]
    weights = model.attribute_weights()
    ranks = []
    with no_grad():
        for batch in build_batches(examples, dataset, model.config.n, batch_size, shuffle=False):
            out = model.forward(batch, training=False)
            scores = composite_score(out.s_id.data, [a.data for a in out.s_attrs],
                                     params["emb.item"].data, attr_tables, item_attr, weights, beta)
            if mask_history:
                tr = np.arange(batch.size)
                kept = scores[tr, batch.target_item].copy()
                rows = np.repeat(tr, batch.items.shape[1])
                hist = batch.items.reshape(-1)
                scores[rows[hist > 0], hist[hist > 0]] = -np.inf
                # the target stays a candidate even if it was seen before
                scores[tr, batch.target_item] = kept
            ranks.append(target_ranks(scores, batch.target_item))
    return metrics_from_ranks(np.concatenate(ranks), cutoffs, seed, time.perf_counter() - start)


def write_rank_dump(path: str | Path, dataset: InteractionDataset, examples: Sequence[Example],
                    ranks: np.ndarray) -> None:
    """Per-user ``user, target, rank`` TSV for debugging."""
    items = dataset.item_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["user", "target", "rank"])
        for ex, r in zip(examples, ranks):
            w.writerow([dataset.sequences[ex.user].user, items[ex.target], int(r)])
