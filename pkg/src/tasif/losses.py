"""Training objectives and their weighted combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.tensor import Tensor
from .model import ForwardOutput, ModelConfig
from .pipeline import SequenceBatch

log = logging.getLogger(__name__)

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class LossWeights:
    rec_attr: float = 1.0   # lambda_1
    align: float = 0.1      # lambda_2
    i2a: float = 10.0       # lambda_3
    temperature: float = 0.07


@dataclass
class LossBreakdown:
    rec_id: float
    rec_attr: list[float]
    align: list[float]
    i2a: list[float]
    joint: float
    attr_weights: list[float]
    skipped_rows: int = 0
    zero_norm: int = 0
    lambdas: tuple[float, float, float] = (1.0, 0.1, 10.0)

    def recomputed_joint(self) -> float:
        l1, l2, l3 = self.lambdas
        total = self.rec_id
        for w, ra, al, ia in zip(self.attr_weights, self.rec_attr, self.align, self.i2a):
            total += w * (l1 * ra + l2 * al + l3 * ia)
        return total

    def record(self) -> dict:
        return {"rec_id": self.rec_id, "rec_attr": self.rec_attr, "align": self.align,
                "i2a": self.i2a, "joint": self.joint, "attr_weights": self.attr_weights}


def _zero() -> Tensor:
    return Tensor(0.0)


def recommendation_loss_id(s_id: Tensor, item_table: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of the next item over the full catalogue (padding row excluded)."""
    targets = np.asarray(targets)
    if (targets <= 0).any():
        raise ValueError("target item 0 is the padding index")
    logits = ops.matmul(s_id, ops.transpose(ops.getitem(item_table, slice(1, None))))
    logp = ops.log_softmax(logits, axis=-1)
    picked = ops.getitem(logp, (np.arange(len(targets)), targets - 1))
    return -ops.mean(picked)


def recommendation_loss_attr(s_attr: Tensor, attr_table: Tensor, multi_hot: np.ndarray
                             ) -> tuple[Tensor, int]:
    """Soft cross-entropy against the normalised multi-hot attribute target.

    Rows with no labelled value are skipped. Returns the loss and the skip count.
    """
    multi_hot = np.asarray(multi_hot, dtype=np.float64)
    counts = multi_hot.sum(axis=1)
    keep = counts > 0
    skipped = int((~keep).sum())
    if not keep.any():
        log.warning("attribute loss: no row in the batch has a labelled value")
        return _zero(), skipped
    soft = multi_hot[keep] / counts[keep, None]
    rows = ops.getitem(s_attr, np.flatnonzero(keep))
    logits = ops.matmul(rows, ops.transpose(ops.getitem(attr_table, slice(1, None))))
    logp = ops.log_softmax(logits, axis=-1)
    return -ops.sum_(logp * soft) / float(keep.sum()), skipped


def alignment_loss(e_id: Tensor, e_attr: Tensor, temperature: float = 0.07) -> tuple[Tensor, int]:
    """ID-anchored InfoNCE between item embeddings and their attribute embeddings.

    In-batch negatives, duplicates kept. A zero-norm vector has cosine 0 with
    everything; the number of such vectors is returned alongside the loss.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    a, za = ops.l2_normalize(e_id, axis=-1)
    b, zb = ops.l2_normalize(e_attr, axis=-1)
    sim = ops.matmul(a, ops.transpose(b)) / temperature
    logp = ops.log_softmax(sim, axis=-1)
    diag = np.arange(e_id.shape[0])
    return -ops.mean(ops.getitem(logp, (diag, diag))), za + zb


def item_to_attribute_loss(s_id: Tensor, weight: Tensor, bias: Tensor, labels: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over attribute values, averaged over the batch."""
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("item-to-attribute labels must be 0 or 1")
    z = ops.clip(ops.linear(s_id, ops.transpose(weight), bias), -LOGIT_CLAMP, LOGIT_CLAMP)
    # -[y log sigmoid(z) + (1 - y) log(1 - sigmoid(z))] = softplus(z) - y z
    per_entry = ops.softplus(z) - z * labels
    return ops.sum_(per_entry) / float(labels.shape[0])


def joint_loss(rec_id: Tensor, rec_attr: list[Tensor], align: list[Tensor], i2a: list[Tensor],
               weight_logits: Tensor | None, weights: LossWeights = LossWeights()
               ) -> tuple[Tensor, LossBreakdown]:
    """``rec_id + sum_j softplus(w_j) (l1 rec_attr_j + l2 align_j + l3 i2a_j)``."""
    total = rec_id
    attr_w = ops.softplus(weight_logits) if weight_logits is not None else None
    for j in range(len(rec_attr)):
        inner = weights.rec_attr * rec_attr[j] + weights.align * align[j] + weights.i2a * i2a[j]
        total = total + ops.getitem(attr_w, j) * inner
    breakdown = LossBreakdown(
        rec_id=rec_id.item(),
        rec_attr=[t.item() for t in rec_attr],
        align=[t.item() for t in align],
        i2a=[t.item() for t in i2a],
        joint=total.item(),
        attr_weights=[] if attr_w is None else attr_w.data.tolist(),
        lambdas=(weights.rec_attr, weights.align, weights.i2a),
    )
    return total, breakdown


def target_attribute_embedding(attr_table: Tensor, multi_hot: np.ndarray) -> Tensor:
    """Mean of the attribute-value embeddings of each target item (zero if it has none)."""
    multi_hot = np.asarray(multi_hot, dtype=np.float64)
    counts = np.maximum(multi_hot.sum(axis=1, keepdims=True), 1.0)
    return ops.matmul(Tensor(multi_hot / counts), ops.getitem(attr_table, slice(1, None)))


def compute_losses(params: dict[str, Tensor], config: ModelConfig, batch: SequenceBatch,
                   out: ForwardOutput, weights: LossWeights = LossWeights()
                   ) -> tuple[Tensor, LossBreakdown]:
    """All objectives for one batch given the forward pass over it."""
    rec_id = recommendation_loss_id(out.s_id, params["emb.item"], batch.target_item)
    rec_attr, align, i2a = [], [], []
    skipped = zero_norm = 0
    e_id = ops.embedding(params["emb.item"], batch.target_item)
    for j, labels in enumerate(batch.target_attributes):
        table = params[f"emb.attr{j}"]
        if config.use_nap:
            loss, sk = recommendation_loss_attr(out.s_attrs[j], table, labels)
            skipped += sk
        else:
            loss = _zero()
        rec_attr.append(loss)
        if config.use_ura:
            loss, zn = alignment_loss(e_id, target_attribute_embedding(table, labels), weights.temperature)
            zero_norm += zn
        else:
            loss = _zero()
        align.append(loss)
        if config.use_i2a:
            loss = item_to_attribute_loss(out.s_id, params[f"i2a.{j}.w"], params[f"i2a.{j}.b"], labels)
        else:
            loss = _zero()
        i2a.append(loss)
    total, breakdown = joint_loss(rec_id, rec_attr, align, i2a, params.get("attr_weight_logits"), weights)
    breakdown.skipped_rows = skipped
    breakdown.zero_norm = zero_norm
    return total, breakdown
