"""The training loop: Adam steps on the joint loss, validation, early stopping, resume."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .core.optim import Adam
from .core.tensor import Tensor
from .errors import NonFiniteLossError, TasifError
from .evaluation import MetricsReport, evaluate
from .losses import LossBreakdown, compute_losses
from .model import TasifModel, VocabSizes, decay_masks
from .pipeline import InteractionDataset, Split, build_batches

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-9
EARLY_STOP_METRIC = "ndcg@20"


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    mean_rec_id: float
    valid: dict | None
    seconds: float


@dataclass
class TrainResult:
    model: TasifModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = -math.inf
    stopped_early: bool = False
    run_dir: Path | None = None
    best_params: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def best_model(self) -> TasifModel:
        """The parameters of the best validation epoch (the final ones if never validated)."""
        if self.best_params is None:
            return self.model
        params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.best_params.items()}
        return TasifModel(self.model.config, self.model.sizes, params=params)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.history]


class JsonlLog:
    """Append-only line-delimited JSON; a no-op without a path."""

    def __init__(self, path: Path | None):
        self.path = path

    def write(self, record: dict) -> None:
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _valid_score(report: MetricsReport) -> float:
    k = int(EARLY_STOP_METRIC.split("@")[1])
    return report.ndcg.get(k, report.ndcg[max(report.ndcg)])


def train_one_epoch(model: TasifModel, opt: Adam, run: RunConfig, dataset: InteractionDataset,
                    split: Split, epoch: int, logger: JsonlLog, run_dir: Path | None,
                    step_hook: Callable[[LossBreakdown], None] | None = None) -> tuple[float, float]:
    """One pass over the shuffled training examples. Returns mean joint and mean rec_id."""
    cfg, tr = model.config, run.train
    rng = np.random.default_rng([tr.seed, epoch])
    shuffle_seed = int(rng.integers(2**63 - 1))
    weights = tr.loss_weights()
    joint_sum = rec_sum = 0.0
    count = 0
    for b_idx, batch in enumerate(build_batches(split.train, dataset, cfg.n, tr.batch_size,
                                                seed=shuffle_seed)):
        opt.zero_grad()
        out = model.forward(batch, training=True, rng=rng)
        loss, br = compute_losses(model.params, cfg, batch, out, weights)
        if not math.isfinite(br.joint):
            if run_dir is not None:
                (run_dir / "nonfinite_batch.json").write_text(json.dumps(
                    {"epoch": epoch, "batch": b_idx, "example_ids": batch.example_ids.tolist(),
                     "breakdown": br.record()}, default=float))
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
        if abs(br.joint - br.recomputed_joint()) > IDENTITY_TOL:
            raise TasifError(f"joint loss {br.joint} disagrees with its components "
                             f"({br.recomputed_joint()})")
        loss.backward()
        opt.step()
        if step_hook is not None:
            step_hook(br)
        if tr.log_every and b_idx % tr.log_every == 0:
            logger.write({"event": "step", "epoch": epoch, "batch": b_idx,
                          "step": opt.state.step_count, **br.record()})
        joint_sum += br.joint * batch.size
        rec_sum += br.rec_id * batch.size
        count += batch.size
    return joint_sum / max(count, 1), rec_sum / max(count, 1)


def train(run: RunConfig, dataset: InteractionDataset, split: Split, run_dir: str | Path | None = None,
          resume: bool = False,
          epoch_hook: Callable[[TasifModel, EpochRecord], bool] | None = None,
          step_hook: Callable[[LossBreakdown], None] | None = None) -> TrainResult:
    """Train a model on ``split.train`` and early-stop on validation ndcg@20.

    With a ``run_dir`` the resolved config, a JSONL log, ``last.ckpt`` (with
    optimizer state) and ``best.ckpt`` are written there. ``resume`` continues
    from ``last.ckpt``; per-epoch random streams are derived from
    ``(seed, epoch)`` so a resumed run matches an uninterrupted one.
    ``epoch_hook`` may return True to stop training early.
    """
    if not split.train:
        raise TasifError("no training examples; every user needs at least 4 interactions")
    tr = run.train
    rd = Path(run_dir) if run_dir is not None else None
    fingerprint = dataset.fingerprint()
    model = TasifModel(run.model, VocabSizes.of(dataset), seed=tr.seed)
    opt = Adam(model.params, lr=tr.lr, weight_decay=tr.weight_decay, decay_masks=decay_masks(model.params))
    result = TrainResult(model, run_dir=rd)
    start_epoch = 0
    if rd is not None:
        rd.mkdir(parents=True, exist_ok=True)
        if resume and (rd / "last.ckpt").exists():
            ck = load_checkpoint(rd / "last.ckpt", run.model.hash(), fingerprint)
            for k, p in ck.model.params.items():
                model.params[k].data[...] = p.data
            opt.state = ck.optimizer
            start_epoch = ck.epoch + 1
            result.best_epoch = ck.extra["best_epoch"]
            result.best_score = ck.extra["best_score"]
            result.history = [EpochRecord(**r) for r in ck.extra["history"]]
            if (rd / "best.ckpt").exists():
                best = load_checkpoint(rd / "best.ckpt", run.model.hash(), fingerprint)
                result.best_params = {k: p.data for k, p in best.model.params.items()}
            log.info("resuming at epoch %d", start_epoch)
        else:
            run.save(rd / "config.yaml")
            (rd / "train_log.jsonl").write_text("")
    logger = JsonlLog(rd / "train_log.jsonl" if rd is not None else None)

    for epoch in range(start_epoch, tr.epochs):
        t0 = time.perf_counter()
        mean_loss, mean_rec = train_one_epoch(model, opt, run, dataset, split, epoch, logger, rd, step_hook)
        valid = None
        if split.valid and tr.eval_every and (epoch + 1) % tr.eval_every == 0:
            report = evaluate(model, dataset, split.valid, run.eval.beta, run.eval.batch_size,
                              run.eval.cutoffs, run.eval.mask_history)
            valid = report.record()
            valid.pop("wall_time")
            score = _valid_score(report)
            if score > result.best_score:
                result.best_score, result.best_epoch = score, epoch
                result.best_params = {k: p.data.copy() for k, p in model.params.items()}
                if rd is not None:
                    save_checkpoint(rd / "best.ckpt", model, fingerprint, epoch=epoch)
        rec = EpochRecord(epoch, mean_loss, mean_rec, valid, time.perf_counter() - t0)
        result.history.append(rec)
        logger.write({"event": "epoch", "epoch": epoch, "loss": mean_loss, "rec_id": mean_rec,
                      "valid": valid})
        if rd is not None:
            extra = {"best_epoch": result.best_epoch, "best_score": result.best_score,
                     "history": [vars(r) for r in result.history]}
            save_checkpoint(rd / "last.ckpt", model, fingerprint, opt.state, epoch, extra)
        if epoch_hook is not None and epoch_hook(model, rec):
            break
        if result.best_epoch >= 0 and epoch - result.best_epoch >= tr.patience:
            result.stopped_early = True
            log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
            break
    return result
