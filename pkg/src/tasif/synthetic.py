"""Synthetic interaction logs with known structure, used by tests and demos."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .pipeline import SECONDS_PER_DAY, RawInteraction

BASE_TS = 1_546_300_800  # 2019-01-01T00:00:00Z


def sample_path() -> Path:
    """Path of the bundled 200-row sample TSV."""
    return Path(str(resources.files("tasif") / "resources" / "sample_interactions.tsv"))


def bundled_sample_records() -> list[RawInteraction]:
    """The rows of the bundled sample.

    19 regular users each rate the 10 items ``i01..i10`` once, one day apart per
    item and offset by one day per user. A rare item ``i99`` is rated by three
    regular users, and two sparse users (``s1`` with 4 rows, ``s2`` with 3 rows)
    rate regular items. 5-core filtering leaves 19 users, 10 items and 190 rows.
    Items ``i01..i05`` are category ``toys``, ``i06..i09`` are ``games`` and
    ``i10`` carries both.
    """
    def cats(item: int) -> tuple[str, ...]:
        if item == 10:
            return ("games", "toys")
        return ("toys",) if item <= 5 else ("games",)

    rows = []
    for u in range(1, 20):
        for j in range(1, 11):
            ts = BASE_TS + ((j - 1) * 30 + (u - 1)) * SECONDS_PER_DAY
            rows.append(RawInteraction(f"u{u:02d}", f"i{j:02d}", ts, {"category": cats(j)}))
    for u in range(1, 4):
        rows.append(RawInteraction(f"u{u:02d}", "i99", BASE_TS + (300 + u) * SECONDS_PER_DAY,
                                   {"category": ("rare",)}))
    for j in range(1, 5):
        rows.append(RawInteraction("s1", f"i{j:02d}", BASE_TS + (10 + j) * SECONDS_PER_DAY,
                                   {"category": cats(j)}))
    for j in range(1, 4):
        rows.append(RawInteraction("s2", f"i{j:02d}", BASE_TS + (20 + j) * SECONDS_PER_DAY,
                                   {"category": cats(j)}))
    return rows


def memorization_records(n_users: int = 50, n_items: int = 20, length: int = 12,
                         seed: int = 0) -> list[RawInteraction]:
    """Users walk the item ring ``i -> i + 1 (mod n_items)`` from a random start.

    The next item is a deterministic function of the current one, so the test
    target is always predictable. Each item has one category, ``(i - 1) // 5``.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        start = int(rng.integers(n_items))
        t0 = BASE_TS + int(rng.integers(0, 30)) * SECONDS_PER_DAY
        for step in range(length):
            item = (start + step) % n_items + 1
            rows.append(RawInteraction(f"u{u:03d}", f"i{item:03d}", t0 + step * SECONDS_PER_DAY,
                                       {"category": (f"c{(item - 1) // 5}",)}))
    return rows


def time_signal_records(n_users: int = 200, n_items: int = 40, length: int = 20,
                        span_days: int = 30, candidates: int = 8, max_gap_days: int = 60,
                        seed: int = 0) -> list[RawInteraction]:
    """Next-item choice switches with the parity of the current global time span.

    From item ``i`` in an even span the next item is drawn uniformly from the
    ``candidates`` items following ``i`` on the ring; in an odd span from the
    ``candidates`` items starting half-way round the ring. Gaps between
    interactions are uniform in ``[1, max_gap_days]`` days, so span parity is
    close to independent from one interaction to the next and can only be read
    reliably from the time token of the latest interaction.
    """
    rng = np.random.default_rng(seed)
    half = n_items // 2
    span = span_days * SECONDS_PER_DAY
    rows = []
    for u in range(n_users):
        # user 0 starts at the base time so the dataset anchor lines up with span parity
        t = BASE_TS + (int(rng.integers(0, 6 * span_days)) if u else 0) * SECONDS_PER_DAY
        item = int(rng.integers(n_items))
        for _ in range(length):
            rows.append(RawInteraction(f"u{u:04d}", f"i{item + 1:03d}", t,
                                       {"category": (f"c{item * 4 // n_items}",)}))
            parity = ((t - BASE_TS) // span) % 2
            offset = 1 if parity == 0 else half
            item = (item + offset + int(rng.integers(candidates))) % n_items
            t += int(rng.integers(1, max_gap_days + 1)) * SECONDS_PER_DAY
    return rows
