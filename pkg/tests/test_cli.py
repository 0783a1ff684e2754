import csv
from collections import defaultdict

import pytest

from tasif.cli import main

SMALL = ["--sample", "--model.d", "8", "--model.n", "8", "--model.L", "1", "--model.span_days", "30",
         "--train.epochs", "2", "--train.batch_size", "64", "--train.lr", "5e-3"]


def read_tsv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *SMALL, "--output_dir", str(out)]) == 0
    return out


def test_prepare_reports_statistics_and_cache_hit(tmp_path, capsys):
    args = ["prepare", *SMALL, "--output_dir", str(tmp_path)]
    assert main(args) == 0
    stats = {r["statistic"]: r["value"] for r in read_tsv(tmp_path / "dataset_stats.tsv")}
    assert stats["users"] == "19" and stats["items"] == "10" and stats["cache_hit"] == "false"
    assert main(args) == 0
    stats = {r["statistic"]: r["value"] for r in read_tsv(tmp_path / "dataset_stats.tsv")}
    assert stats["cache_hit"] == "true"
    assert "cache hit" in capsys.readouterr().out


def test_train_outputs(trained):
    for name in ("config.yaml", "train_log.jsonl", "last.ckpt", "best.ckpt", "test_metrics.tsv"):
        assert (trained / name).exists()
    metrics = {r["metric"] for r in read_tsv(trained / "test_metrics.tsv")}
    assert metrics == {"recall@10", "recall@20", "ndcg@10", "ndcg@20"}


def test_eval_with_seeds_and_rank_dump(trained, tmp_path, capsys):
    dump = tmp_path / "ranks.tsv"
    code = main(["eval", *SMALL, "--output_dir", str(trained), "--checkpoint", str(trained / "best.ckpt"),
                 "--seeds", "0,1", "--beta", "0", "--rank-dump", str(dump)])
    assert code == 0
    rows = read_tsv(trained / "eval_test.tsv")
    assert all(r["std"] == "0.000000" for r in rows)  # evaluation has no randomness
    assert len(read_tsv(dump)) == 19
    assert "beta=0.0" in capsys.readouterr().out


def test_dump_attention_rows(trained, tmp_path):
    out = tmp_path / "attn.tsv"
    assert main(["dump-attention", *SMALL, "--output_dir", str(trained), "--checkpoint",
                 str(trained / "best.ckpt"), "--user", "u01", "--output", str(out)]) == 0
    rows = read_tsv(out)
    totals = defaultdict(float)
    for r in rows:
        totals[(r["pathway"], r["head"])] += float(r["weight"])
        if r["item"] == "<pad>":
            assert float(r["weight"]) < 1e-9
    assert set(p for p, _ in totals) == {"i-i", "a-a:category"}
    assert all(abs(t - 1.0) < 1e-8 for t in totals.values())


def test_bench_scaling_small(tmp_path, capsys):
    assert main(["bench-scaling", "--attribute-counts", "1,2", "--n", "8", "--d", "8", "--batch", "2",
                 "--trials", "2", "--output-dir", str(tmp_path)]) == 0
    rows = read_tsv(tmp_path / "scaling.tsv")
    counts = {(r["model_variant"], r["attribute_count"]): int(r["attention_matrix_count"]) for r in rows}
    assert counts == {("tasif", "1"): 2, ("tasif", "2"): 3, ("mssr_reference", "1"): 9,
                      ("mssr_reference", "2"): 16}
    assert "slope tasif" in capsys.readouterr().out


def test_ablate_and_sweep(tmp_path):
    base = [*SMALL, "--train.epochs", "1", "--output_dir", str(tmp_path), "--seeds", "0"]
    assert main(["filter-study", *base]) == 0
    rows = read_tsv(tmp_path / "filter_study_summary.tsv")
    assert [r["variant"] for r in rows] == ["none", "LPF", "HSF", "LF", "AFF"]
    assert main(["sweep", *base, "--grid", "eval.beta=0.0,0.5"]) == 0
    assert len(read_tsv(tmp_path / "sweep_trials.tsv")) == 2


@pytest.mark.parametrize("argv,code,category", [
    (["train", "--output_dir", "{tmp}"], 2, "config"),
    (["train", "--data.path", "{tmp}/missing.tsv", "--output_dir", "{tmp}"], 3, "data"),
    (["train", "--sample", "--model.heads", "3", "--output_dir", "{tmp}"], 2, "config"),
    (["train", "--sample", "--set", "model.nope=1", "--output_dir", "{tmp}"], 2, "config"),
    (["eval", "--sample", "--checkpoint", "{tmp}/none.ckpt", "--output_dir", "{tmp}"], 4, "checkpoint"),
])
def test_error_lines(tmp_path, capsys, argv, code, category):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()[-1]
    fields = err.split("\t")
    assert fields[0] == "error" and fields[1] == f"category={category}" and fields[2].startswith("message=")


def test_unknown_user(trained, capsys):
    code = main(["dump-attention", *SMALL, "--output_dir", str(trained), "--checkpoint",
                 str(trained / "best.ckpt"), "--user", "nobody"])
    assert code == 3 and "category=data" in capsys.readouterr().err
