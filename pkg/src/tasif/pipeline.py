"""Interaction ingest, k-core filtering, time-span tokens, leave-one-out and batching."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import pickle
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
SPAN_GRID = (7, 30, 90, 180, 365)


@dataclass(frozen=True)
class RawInteraction:
    user: str
    item: str
    timestamp: int
    attributes: dict = field(default_factory=dict, hash=False, compare=True)


@dataclass(frozen=True)
class Schema:
    """Column mapping of an interaction TSV."""

    user: str = "user_id"
    item: str = "item_id"
    timestamp: str = "timestamp"
    attributes: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(d.get("user", "user_id"), d.get("item", "item_id"),
                   d.get("timestamp", "timestamp"), tuple(d.get("attributes", ())))


class LoadResult(NamedTuple):
    records: list[RawInteraction]
    skipped: int


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise
        return int(value)


def load_interactions(path: str | Path, schema: Schema) -> LoadResult:
    """Read a tab-separated interaction file with a header row.

    Header names may carry a ``:type`` suffix (``item_id:token``), which is ignored.
    Multi-valued attribute cells are space separated. Malformed rows are skipped
    and counted.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = [h.split(":", 1)[0].strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        needed = (schema.user, schema.item, schema.timestamp) + tuple(schema.attributes)
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}; header has {header}")
        col = {name: header.index(name) for name in needed}
        records, skipped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            try:
                ts = _parse_timestamp(row[col[schema.timestamp]])
                if ts < 0:
                    raise ValueError("negative timestamp")
                user, item = row[col[schema.user]].strip(), row[col[schema.item]].strip()
                if not user or not item:
                    raise ValueError("empty user or item id")
            except (ValueError, IndexError) as exc:
                skipped += 1
                log.debug("%s:%d skipped (%s)", path, lineno, exc)
                continue
            attrs = {a: tuple(dict.fromkeys(row[col[a]].split())) for a in schema.attributes}
            records.append(RawInteraction(user, item, ts, attrs))
    if skipped:
        log.warning("%s: skipped %d malformed row(s)", path, skipped)
    return LoadResult(records, skipped)


def k_core_filter(records: Sequence[RawInteraction], k: int = 5) -> list[RawInteraction]:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    alive = list(records)
    while True:
        users = Counter(r.user for r in alive)
        items = Counter(r.item for r in alive)
        kept = [r for r in alive if users[r.user] >= k and items[r.item] >= k]
        if len(kept) == len(alive):
            break
        alive = kept
    if not alive:
        raise DataError(
            f"{k}-core filtering removed everything "
            f"({len(records)} interactions, {len({r.user for r in records})} users, "
            f"{len({r.item for r in records})} items before filtering)")
    return alive


def assign_time_tokens(timestamps, span_days: int, epoch_anchor: int) -> tuple[np.ndarray, int]:
    """Map timestamps onto a global timeline of ``span_days``-long spans.

    Token ``1 + (t - anchor) // span`` is returned for each timestamp (0 is the
    padding token), together with the largest token assigned.
    """
    if span_days <= 0:
        raise ValueError("span_days must be positive")
    ts = np.asarray(timestamps, dtype=np.int64)
    if ts.size and ts.min() < epoch_anchor:
        raise DataError(f"timestamp {int(ts.min())} precedes the anchor {epoch_anchor}")
    tokens = 1 + (ts - epoch_anchor) // (span_days * SECONDS_PER_DAY)
    return tokens, int(tokens.max()) if tokens.size else 0


@dataclass
class UserSequence:
    user: str
    items: np.ndarray
    timestamps: np.ndarray
    time_tokens: np.ndarray


@dataclass
class InteractionDataset:
    item_vocab: dict[str, int]
    attribute_types: tuple[str, ...]
    attribute_vocabs: list[dict[str, int]]
    item_attributes: list[np.ndarray]      # per type: (|I|+1) x m_j value indices, 0 = none
    sequences: list[UserSequence]
    n_time_tokens: int
    span_days: int
    epoch_anchor: int
    content_hash: str = ""

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_interactions(self) -> int:
        return sum(len(s.items) for s in self.sequences)

    def attribute_sizes(self) -> list[int]:
        return [len(v) for v in self.attribute_vocabs]

    def item_names(self) -> list[str]:
        names = [""] * (self.n_items + 1)
        for name, idx in self.item_vocab.items():
            names[idx] = name
        return names

    def attribute_names(self, j: int) -> list[str]:
        names = [""] * (len(self.attribute_vocabs[j]) + 1)
        for name, idx in self.attribute_vocabs[j].items():
            names[idx] = name
        return names

    def fingerprint(self) -> str:
        """Hash of the indexed content: vocabularies, attribute tables and sequences."""
        h = hashlib.sha256()
        h.update(json.dumps([sorted(self.item_vocab.items()), list(self.attribute_types),
                             [sorted(v.items()) for v in self.attribute_vocabs],
                             self.span_days, self.epoch_anchor]).encode())
        for table in self.item_attributes:
            h.update(np.ascontiguousarray(table, dtype="<i8").tobytes())
        for s in self.sequences:
            h.update(s.user.encode() + b"\0")
            for arr in (s.items, s.timestamps, s.time_tokens):
                h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        return h.hexdigest()

    def statistics(self) -> dict:
        n_u, n_i, n_x = self.n_users, self.n_items, self.n_interactions
        lengths = [len(s.items) for s in self.sequences]
        return {
            "users": n_u,
            "items": n_i,
            "interactions": n_x,
            "density": n_x / (n_u * n_i) if n_u and n_i else 0.0,
            "avg_length": float(np.mean(lengths)) if lengths else 0.0,
            "time_tokens": self.n_time_tokens,
            "span_days": self.span_days,
            "attribute_values": {a: len(v) for a, v in zip(self.attribute_types, self.attribute_vocabs)},
        }


def build_dataset(records: Sequence[RawInteraction], attribute_types: Sequence[str] = (),
                  k: int = 5, span_days: int = 90, min_timestamp: int | None = None) -> InteractionDataset:
    """Filter, index and tokenise raw interactions."""
    if min_timestamp is not None:
        records = [r for r in records if r.timestamp >= min_timestamp]
    if not records:
        raise DataError("no interactions to build a dataset from")
    records = k_core_filter(records, k) if k > 1 else list(records)

    item_vocab = {name: i + 1 for i, name in enumerate(sorted({r.item for r in records}))}
    attribute_types = tuple(attribute_types)
    values_of = [defaultdict(set) for _ in attribute_types]
    for r in records:
        for j, a in enumerate(attribute_types):
            values_of[j][r.item].update(r.attributes.get(a, ()))
    attribute_vocabs, item_attributes = [], []
    for j in range(len(attribute_types)):
        vocab = {v: i + 1 for i, v in enumerate(sorted(set().union(*values_of[j].values())))}
        width = max([len(v) for v in values_of[j].values()] + [1])
        table = np.zeros((len(item_vocab) + 1, width), dtype=np.int64)
        for item, idx in item_vocab.items():
            vals = sorted(vocab[v] for v in values_of[j][item])
            table[idx, : len(vals)] = vals
        attribute_vocabs.append(vocab)
        item_attributes.append(table)

    anchor = min(r.timestamp for r in records)
    by_user = defaultdict(list)
    for r in records:
        by_user[r.user].append(r)
    all_tokens, n_tokens = assign_time_tokens([r.timestamp for r in records], span_days, anchor)
    sequences = []
    for user in sorted(by_user):
        rs = sorted(by_user[user], key=lambda r: r.timestamp)
        ts = np.array([r.timestamp for r in rs], dtype=np.int64)
        tokens, _ = assign_time_tokens(ts, span_days, anchor)
        sequences.append(UserSequence(user, np.array([item_vocab[r.item] for r in rs], dtype=np.int64),
                                      ts, tokens))
    return InteractionDataset(item_vocab, attribute_types, attribute_vocabs, item_attributes,
                              sequences, n_tokens, span_days, anchor)


# -- splitting ---------------------------------------------------------------

@dataclass
class Example:
    """One next-item prediction: a history and the item that follows it."""

    user: int
    items: np.ndarray
    time_tokens: np.ndarray
    target: int
    target_timestamp: int


@dataclass
class Split:
    train: list[Example]
    valid: list[Example]
    test: list[Example]
    dropped_users: int = 0

    def get(self, name: str) -> list[Example]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def leave_one_out_split(dataset: InteractionDataset) -> Split:
    """Last interaction for test, second-to-last for validation, the rest for training.

    Training examples are every next-item pair inside the training prefix.
    """
    train, valid, test = [], [], []
    dropped = 0
    for u, seq in enumerate(dataset.sequences):
        items, tok, ts = seq.items, seq.time_tokens, seq.timestamps
        if len(items) < 3:
            dropped += 1
            continue
        test.append(Example(u, items[:-1], tok[:-1], int(items[-1]), int(ts[-1])))
        valid.append(Example(u, items[:-2], tok[:-2], int(items[-2]), int(ts[-2])))
        for i in range(1, len(items) - 2):
            train.append(Example(u, items[:i], tok[:i], int(items[i]), int(ts[i])))
    if dropped:
        log.warning("leave-one-out: dropped %d user(s) with fewer than 3 interactions", dropped)
    return Split(train, valid, test, dropped)


# -- batching ----------------------------------------------------------------

@dataclass
class SequenceBatch:
    items: np.ndarray                    # B x n, left padded with 0
    time_tokens: np.ndarray              # B x n
    attributes: list[np.ndarray]         # per type B x n x m_j
    attribute_masks: list[np.ndarray]    # per type B x n x m_j booleans
    padding_mask: np.ndarray             # B x n, True on real interactions
    target_item: np.ndarray              # B
    target_attributes: list[np.ndarray]  # per type B x |A_j| multi-hot
    users: np.ndarray                    # B
    example_ids: np.ndarray              # B, positions in the source example list

    @property
    def size(self) -> int:
        return len(self.target_item)


def make_batch(examples: Sequence[Example], ids: Sequence[int], dataset: InteractionDataset,
               n: int) -> SequenceBatch:
    b = len(ids)
    items = np.zeros((b, n), dtype=np.int64)
    tokens = np.zeros((b, n), dtype=np.int64)
    targets = np.zeros(b, dtype=np.int64)
    users = np.zeros(b, dtype=np.int64)
    for row, i in enumerate(ids):
        ex = examples[i]
        hist, tok = ex.items[-n:], ex.time_tokens[-n:]
        if len(hist):
            items[row, n - len(hist):] = hist
            tokens[row, n - len(tok):] = tok
        targets[row] = ex.target
        users[row] = ex.user
    attrs, masks, target_attrs = [], [], []
    for j, table in enumerate(dataset.item_attributes):
        vals = table[items]
        attrs.append(vals)
        masks.append(vals > 0)
        hot = np.zeros((b, len(dataset.attribute_vocabs[j])))
        tv = table[targets]
        rows = np.repeat(np.arange(b), tv.shape[1])
        flat = tv.reshape(-1)
        keep = flat > 0
        hot[rows[keep], flat[keep] - 1] = 1.0
        target_attrs.append(hot)
    return SequenceBatch(items, tokens, attrs, masks, items > 0, targets, target_attrs, users,
                         np.asarray(ids, dtype=np.int64))


def build_batches(examples: Sequence[Example], dataset: InteractionDataset, n: int,
                  batch_size: int, seed: int | None = None, shuffle: bool = True) -> Iterator[SequenceBatch]:
    """Yield padded batches; the order is a seeded permutation when ``shuffle``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield make_batch(examples, order[start:start + batch_size], dataset, n)


# -- cached preparation --------------------------------------------------------

def dataset_key(path: str | Path, schema: Schema, k: int, span_days: int, n: int,
                min_timestamp: int | None) -> str:
    h = hashlib.sha256(Path(path).read_bytes())
    params = {"schema": [schema.user, schema.item, schema.timestamp, list(schema.attributes)],
              "k": k, "span_days": span_days, "n": n, "min_timestamp": min_timestamp}
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()


def prepare_dataset(path: str | Path, schema: Schema, k: int = 5, span_days: int = 90, n: int = 64,
                    min_timestamp: int | None = None,
                    cache_dir: str | Path | None = None) -> tuple[InteractionDataset, bool]:
    """Load, filter and tokenise ``path``; reuse a cached result when inputs are unchanged.

    Returns the dataset and whether it came from the cache.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file {path} does not exist")
    key = dataset_key(path, schema, k, span_days, n, min_timestamp)
    cache_file = Path(cache_dir) / f"dataset-{key[:16]}.pkl" if cache_dir else None
    if cache_file is not None and cache_file.exists():
        with cache_file.open("rb") as fh:
            ds = pickle.load(fh)
        if ds.content_hash == key:
            return ds, True
    loaded = load_interactions(path, schema)
    ds = build_dataset(loaded.records, schema.attributes, k, span_days, min_timestamp)
    ds.content_hash = key
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_file.with_suffix(".tmp")
        with tmp.open("wb") as fh:
            pickle.dump(ds, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(cache_file)
    return ds, False


def write_interactions(path: str | Path, records: Sequence[RawInteraction],
                       attribute_types: Sequence[str]) -> None:
    """Write records in the TSV layout read by :func:`load_interactions`."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(["user_id", "item_id", "timestamp", *attribute_types]) + "\n")
        for r in records:
            cells = [r.user, r.item, str(r.timestamp)]
            cells += [" ".join(r.attributes.get(a, ())) for a in attribute_types]
            fh.write("\t".join(cells) + "\n")
