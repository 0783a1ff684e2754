import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tasif.errors import DataError
from tasif.pipeline import (SECONDS_PER_DAY, RawInteraction, Schema, assign_time_tokens,
                            build_batches, build_dataset, k_core_filter, leave_one_out_split,
                            load_interactions, prepare_dataset, write_interactions)
from tasif.synthetic import bundled_sample_records, sample_path

DAY = SECONDS_PER_DAY


def rec(u, i, t=0, **attrs):
    return RawInteraction(str(u), str(i), t, {k: tuple(v) for k, v in attrs.items()})


# -- loading ----------------------------------------------------------------

def test_load_well_formed_and_empty_attribute(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("user_id:token\titem_id:token\ttimestamp:float\tcategory:token_seq\n"
                 "u1\ti1\t10\ta b\n"
                 "u1\ti2\t20.0\t\n"
                 "u2\ti1\t30\tb b\n")
    recs, skipped = load_interactions(p, Schema(attributes=("category",)))
    assert skipped == 0 and len(recs) == 3
    assert recs[0].attributes["category"] == ("a", "b")
    assert recs[1].attributes["category"] == ()
    assert recs[1].timestamp == 20
    assert recs[2].attributes["category"] == ("b",)  # duplicates removed


def test_load_skips_bad_timestamp(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("user_id\titem_id\ttimestamp\nu1\ti1\tyesterday\nu1\ti2\t5\nu1\ti3\t2.5\n")
    recs, skipped = load_interactions(p, Schema())
    assert [r.item for r in recs] == ["i2"] and skipped == 2


def test_load_errors(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("user_id\titem_id\ttimestamp\n")
    with pytest.raises(DataError, match="brand"):
        load_interactions(p, Schema(attributes=("brand",)))
    with pytest.raises(DataError):
        load_interactions(tmp_path / "missing.tsv", Schema())


# -- k-core -------------------------------------------------------------------

def brute_force_core(records, k):
    """Remove one offending node at a time until none remain."""
    alive = list(records)
    changed = True
    while changed:
        changed = False
        for key in ("user", "item"):
            counts = {}
            for r in alive:
                counts[getattr(r, key)] = counts.get(getattr(r, key), 0) + 1
            bad = sorted(n for n, c in counts.items() if c < k)
            if bad:
                alive = [r for r in alive if getattr(r, key) != bad[0]]
                changed = True
                break
    return alive


def test_k_core_keeps_dense_data():
    recs = [rec(u, i) for u in range(6) for i in range(5)]
    assert k_core_filter(recs, 5) == recs


def test_k_core_removes_light_user_and_cascades():
    recs = [rec(u, i) for u in range(5) for i in range(5)]
    recs += [rec("light", i) for i in range(4)]
    assert {r.user for r in k_core_filter(recs, 5)} == set(map(str, range(5)))
    # item "x" has exactly 5 raters, one of whom is removed -> x drops to 4 and goes too
    recs2 = ([r for r in recs if r.user != "light"] + [rec("light", i) for i in range(3)]
             + [rec(u, "x") for u in range(4)] + [rec("light", "x")])
    out = k_core_filter(recs2, 5)
    assert "x" not in {r.item for r in out}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=120),
       st.integers(1, 5))
def test_k_core_matches_brute_force_fixpoint(pairs, k):
    recs = [rec(f"u{u}", f"i{i}") for u, i in pairs]
    expected = brute_force_core(recs, k)
    if not expected:
        with pytest.raises(DataError):
            k_core_filter(recs, k)
        return
    got = k_core_filter(recs, k)
    assert sorted(map(repr, got)) == sorted(map(repr, expected))
    shuffled = list(reversed(recs))
    assert sorted(map(repr, k_core_filter(shuffled, k))) == sorted(map(repr, got))
    users = {r.user for r in got}
    assert min(sum(r.user == u for r in got) for u in users) >= k


# -- time tokens ----------------------------------------------------------------

def test_time_tokens_single_span_and_boundaries():
    toks, n_tok = assign_time_tokens([5, 100, 2000], 30, 0)
    assert toks.tolist() == [1, 1, 1] and n_tok == 1
    toks, n_tok = assign_time_tokens([0, 89 * DAY, 91 * DAY], 90, 0)
    assert toks.tolist() == [1, 1, 2] and n_tok == 2
    with pytest.raises(DataError):
        assign_time_tokens([5], 7, 10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=50), st.sampled_from([7, 30, 90, 180, 365]))
def test_time_tokens_match_direct_division(ts, span):
    anchor = min(ts)
    toks, n_tok = assign_time_tokens(ts, span, anchor)
    expected = [1 + (t - anchor) // (span * 86400) for t in ts]
    assert toks.tolist() == expected and n_tok == max(expected)


# -- dataset / split ----------------------------------------------------------

@pytest.fixture
def sample_ds():
    return build_dataset(bundled_sample_records(), ("category",), k=5, span_days=90)


def test_sample_dataset_counts(sample_ds):
    stats = sample_ds.statistics()
    assert (stats["users"], stats["items"], stats["interactions"]) == (19, 10, 190)
    assert stats["density"] == 1.0
    assert stats["time_tokens"] == 4  # last interaction is 288 days after the anchor
    assert stats["attribute_values"] == {"category": 2}
    # i10 carries both categories
    assert sample_ds.item_attributes[0][sample_ds.item_vocab["i10"]].tolist() == [1, 2]


def test_sequences_sorted_and_tokens_monotone(sample_ds):
    for seq in sample_ds.sequences:
        assert np.all(np.diff(seq.timestamps) >= 0)
        assert np.all(np.diff(seq.time_tokens) >= 0)
        assert seq.time_tokens.min() >= 1 and seq.time_tokens.max() <= sample_ds.n_time_tokens


def test_leave_one_out_small_sequence():
    recs = [rec("u", name, t) for t, name in enumerate("abcd")]
    ds = build_dataset(recs, k=1)
    split = leave_one_out_split(ds)
    a, b, c, d = (ds.item_vocab[x] for x in "abcd")
    assert split.test[0].items.tolist() == [a, b, c] and split.test[0].target == d
    assert split.valid[0].items.tolist() == [a, b] and split.valid[0].target == c
    assert [(e.items.tolist(), e.target) for e in split.train] == [([a], b)]


def test_leave_one_out_minimal_and_dropped():
    recs = [rec("u", x, t) for t, x in enumerate("abc")] + [rec("v", "a", 0), rec("v", "b", 1)]
    split = leave_one_out_split(build_dataset(recs, k=1))
    assert len(split.test) == 1 and len(split.valid) == 1 and split.train == []
    assert split.dropped_users == 1


def test_leave_one_out_counts_and_disjointness():
    rng = np.random.default_rng(0)
    recs = [rec(f"u{u}", f"i{rng.integers(30)}", t) for u in range(100)
            for t in range(int(rng.integers(3, 12)))]
    ds = build_dataset(recs, k=1)
    split = leave_one_out_split(ds)
    assert len(split.test) == 100 and len(split.valid) == 100
    tests = {e.user: (e.target, e.target_timestamp) for e in split.test}
    for e in split.train:
        assert (e.target, e.target_timestamp) != tests[e.user]
        seq = ds.sequences[e.user]
        assert len(e.items) < len(seq.items) - 2


# -- batching -----------------------------------------------------------------

def test_batches_truncate_and_pad():
    recs = [rec("long", f"i{j}", j, category=[f"c{j % 2}"]) for j in range(11)]
    recs += [rec("short", "i0", 0, category=["c0"]), rec("short", "i1", 1, category=["c1"]),
             rec("short", "i2", 2, category=["c0"])]
    ds = build_dataset(recs, ("category",), k=1)
    split = leave_one_out_split(ds)
    batch = next(build_batches(split.test, ds, 8, 4, shuffle=False))
    long_row = [e.user for e in split.test].index(0)
    assert batch.items[long_row].tolist() == ds.sequences[0].items[-9:-1].tolist()
    short = 1 - long_row
    assert (batch.items[short, :6] == 0).all() and not batch.padding_mask[short, :6].any()
    assert (batch.items > 0).tolist() == batch.padding_mask.tolist()
    assert ((batch.time_tokens > 0) == batch.padding_mask).all()
    assert (batch.target_item > 0).all()
    # target attribute multi-hot matches the target's single category
    for row in range(2):
        vals = ds.item_attributes[0][batch.target_item[row]]
        assert batch.target_attributes[0][row].tolist() == [float(v in vals) for v in (1, 2)]
    assert batch.attributes[0].shape == (2, 8, 1)
    assert (batch.attribute_masks[0][..., 0] == batch.padding_mask).all()


def test_batches_replay_identically(sample_ds):
    split = leave_one_out_split(sample_ds)
    a = list(build_batches(split.train, sample_ds, 8, 16, seed=3))
    b = list(build_batches(split.train, sample_ds, 8, 16, seed=3))
    c = list(build_batches(split.train, sample_ds, 8, 16, seed=4))
    assert all((x.items == y.items).all() and (x.target_item == y.target_item).all()
               for x, y in zip(a, b))
    assert any((x.example_ids != y.example_ids).any() for x, y in zip(a, c))
    assert sum(x.size for x in a) == len(split.train)


def test_prepare_uses_cache(tmp_path):
    path = tmp_path / "data.tsv"
    write_interactions(path, bundled_sample_records(), ["category"])
    schema = Schema(attributes=("category",))
    ds1, hit1 = prepare_dataset(path, schema, cache_dir=tmp_path / "cache")
    ds2, hit2 = prepare_dataset(path, schema, cache_dir=tmp_path / "cache")
    assert not hit1 and hit2 and ds1.content_hash == ds2.content_hash
    _, hit3 = prepare_dataset(path, schema, span_days=30, cache_dir=tmp_path / "cache")
    assert not hit3


def test_bundled_sample_file_matches_generator():
    recs, skipped = load_interactions(sample_path(), Schema(attributes=("category",)))
    assert skipped == 0 and len(recs) == 200
    assert recs == bundled_sample_records()


def test_min_timestamp_filter():
    recs = [rec("u", f"i{j}", j * DAY) for j in range(6)]
    ds = build_dataset(recs, k=1, min_timestamp=2 * DAY)
    assert ds.n_interactions == 4 and ds.epoch_anchor == 2 * DAY
