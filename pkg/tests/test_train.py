import json

import numpy as np
import pytest

import tasif.train as train_mod
from tasif.config import RunConfig
from tasif.errors import NonFiniteLossError, TasifError
from tasif.model import ModelConfig
from tasif.pipeline import build_dataset, leave_one_out_split
from tasif.synthetic import memorization_records


@pytest.fixture(scope="module")
def data():
    ds = build_dataset(memorization_records(n_users=12, n_items=10, length=8), ("category",), k=1)
    return ds, leave_one_out_split(ds)


def small_run(**train):
    run = RunConfig(model=ModelConfig(d=8, n=8, L=1, heads=2, dropout_rate=0.1))
    opts = {"train.lr": 5e-3, "train.batch_size": 16, "train.epochs": 3, "train.patience": 5}
    opts.update({f"train.{k}": v for k, v in train.items()})
    return run.replace(**opts)


def test_training_reduces_loss_and_writes_artifacts(data, tmp_path):
    ds, split = data
    res = train_mod.train(small_run(epochs=6), ds, split, run_dir=tmp_path)
    assert res.losses[-1] < res.losses[0]
    for name in ("config.yaml", "train_log.jsonl", "last.ckpt", "best.ckpt"):
        assert (tmp_path / name).exists()
    events = [json.loads(line)["event"] for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert events.count("epoch") == 6 and "step" in events
    assert 0 <= res.best_epoch < 6


def test_identical_seeds_identical_runs(data):
    ds, split = data
    a = train_mod.train(small_run(), ds, split)
    b = train_mod.train(small_run(), ds, split)
    assert a.losses == b.losses
    for k, p in a.model.params.items():
        assert np.array_equal(p.data, b.model.params[k].data)
    c = train_mod.train(small_run(seed=1), ds, split)
    assert c.losses != a.losses


def test_resume_matches_uninterrupted(data, tmp_path):
    ds, split = data
    run = small_run(epochs=4)
    full = train_mod.train(run, ds, split, run_dir=tmp_path / "full")
    train_mod.train(run, ds, split, run_dir=tmp_path / "part", epoch_hook=lambda m, r: r.epoch == 1)
    resumed = train_mod.train(run, ds, split, run_dir=tmp_path / "part", resume=True)
    assert resumed.losses == full.losses
    assert resumed.best_epoch == full.best_epoch
    for k, p in full.model.params.items():
        assert np.array_equal(p.data, resumed.model.params[k].data)


def test_early_stopping(data):
    ds, split = data
    res = train_mod.train(small_run(lr=0.0, epochs=10, patience=2), ds, split)
    assert res.stopped_early and res.best_epoch == 0 and len(res.history) == 3


def test_best_model_restores_best_epoch(data):
    ds, split = data
    res = train_mod.train(small_run(epochs=4), ds, split)
    best = res.best_model()
    assert best is not res.model or res.best_params is None
    snap = res.best_params
    for k, p in best.params.items():
        assert np.array_equal(p.data, snap[k])


def test_nonfinite_loss_stops_with_dump(data, tmp_path, monkeypatch):
    ds, split = data
    original = train_mod.compute_losses

    def poisoned(*args, **kwargs):
        loss, br = original(*args, **kwargs)
        br.joint = float("nan")
        return loss, br

    monkeypatch.setattr(train_mod, "compute_losses", poisoned)
    with pytest.raises(NonFiniteLossError):
        train_mod.train(small_run(), ds, split, run_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_batch.json").read_text())
    assert dump["epoch"] == 0 and dump["batch"] == 0 and dump["example_ids"]


def test_every_step_satisfies_the_joint_identity(data):
    ds, split = data
    gaps = []
    train_mod.train(small_run(epochs=1), ds, split,
                    step_hook=lambda br: gaps.append(abs(br.joint - br.recomputed_joint())))
    assert gaps and max(gaps) <= 1e-9


def test_no_training_examples_is_an_error(data):
    ds, split = data
    split = type(split)([], split.valid, split.test)
    with pytest.raises(TasifError):
        train_mod.train(small_run(), ds, split)
