"""Single-file checkpoints.

Layout::

    magic        10 bytes  b"TASIFCKPT\\x01"
    length        8 bytes  unsigned little-endian length of the manifest
    manifest              UTF-8 JSON (see below)
    blocks                raw little-endian float64 arrays, C order

The manifest holds the model config and its SHA-256 hash, vocabulary sizes,
the dataset fingerprint, training position, and a ``blocks`` list of
``{"name", "shape", "offset"}`` entries. Offsets are in bytes from the start of
the block area. Adam moments, when saved, are stored as blocks named
``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.optim import AdamState
from .core.tensor import Tensor
from .errors import CheckpointError
from .model import ModelConfig, TasifModel, VocabSizes

MAGIC = b"TASIFCKPT\x01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: TasifModel
    dataset_fingerprint: str
    optimizer: AdamState | None = None
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, model: TasifModel, dataset_fingerprint: str,
                    optimizer: AdamState | None = None, epoch: int = 0,
                    extra: dict | None = None) -> None:
    blocks: list[tuple[str, np.ndarray]] = [(k, p.data) for k, p in model.params.items()]
    opt_meta = None
    if optimizer is not None:
        opt_meta = {"step_count": optimizer.step_count, "beta1": optimizer.beta1,
                    "beta2": optimizer.beta2, "epsilon": optimizer.epsilon,
                    "learning_rate": optimizer.learning_rate}
        blocks += [(f"adam.m/{k}", v) for k, v in optimizer.first_moment.items()]
        blocks += [(f"adam.v/{k}", v) for k, v in optimizer.second_moment.items()]
    entries, offset = [], 0
    for name, arr in blocks:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "format": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "vocab": {"n_items": model.sizes.n_items, "attribute_sizes": list(model.sizes.attribute_sizes),
                  "n_time_tokens": model.sizes.n_time_tokens},
        "dataset_fingerprint": dataset_fingerprint,
        "epoch": epoch,
        "optimizer": opt_meta,
        "extra": extra or {},
        "blocks": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> tuple[dict, int]:
    """Return the manifest and the byte offset where the block area starts."""
    try:
        with Path(path).open("rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint file")
            (length,) = struct.unpack("<Q", fh.read(8))
            manifest = json.loads(fh.read(length).decode("utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}: {exc}") from exc
    return manifest, len(MAGIC) + 8 + length


def load_checkpoint(path: str | Path, expected_config_hash: str | None = None,
                    expected_dataset: str | None = None) -> Checkpoint:
    manifest, start = read_manifest(path)
    config = ModelConfig.from_dict(manifest["config"])
    if config.hash() != manifest["config_hash"]:
        raise CheckpointError(f"{path}: stored config does not match its recorded hash")
    if expected_config_hash is not None and manifest["config_hash"] != expected_config_hash:
        raise CheckpointError(f"{path}: config hash {manifest['config_hash'][:12]} differs from "
                              f"expected {expected_config_hash[:12]}")
    if expected_dataset is not None and manifest["dataset_fingerprint"] != expected_dataset:
        raise CheckpointError(f"{path}: checkpoint was trained on a different dataset")
    raw = Path(path).read_bytes()[start:]
    arrays = {}
    for e in manifest["blocks"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * 8
        if end > len(raw):
            raise CheckpointError(f"{path}: block {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                          offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
    v = manifest["vocab"]
    sizes = VocabSizes(v["n_items"], tuple(v["attribute_sizes"]), v["n_time_tokens"])
    params = {k: Tensor(a, requires_grad=True, name=k) for k, a in arrays.items() if not k.startswith("adam.")}
    expected = TasifModel(config, sizes, seed=0).params
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in params):
        raise CheckpointError(f"{path}: parameter layout does not match its config")
    opt = None
    if manifest["optimizer"] is not None:
        o = manifest["optimizer"]
        opt = AdamState(
            {k[len("adam.m/"):]: a for k, a in arrays.items() if k.startswith("adam.m/")},
            {k[len("adam.v/"):]: a for k, a in arrays.items() if k.startswith("adam.v/")},
            o["step_count"], o["beta1"], o["beta2"], o["epsilon"], o["learning_rate"])
    return Checkpoint(TasifModel(config, sizes, params=params), manifest["dataset_fingerprint"],
                      opt, manifest["epoch"], manifest["extra"])
