"""
Train and inspect a model on the bundled sample
===============================================

The sample log has 19 users rating 10 items, each item tagged with a
category. We train a tiny model, rank every item for each user's held-out
last interaction, and look at where the final block attends.
"""

import numpy as np

from tasif.config import RunConfig
from tasif.evaluation import evaluate
from tasif.model import ModelConfig
from tasif.pipeline import Schema, leave_one_out_split, make_batch, prepare_dataset
from tasif.synthetic import sample_path
from tasif.train import train

# Load the TSV, keep the 5-core and cut the timeline into 30-day spans.
ds, _ = prepare_dataset(sample_path(), Schema(attributes=("category",)), k=5, span_days=30, n=16)
print(ds.statistics())

# Leave-one-out: last item for test, second-to-last for validation.
split = leave_one_out_split(ds)
print(len(split.train), "training examples,", len(split.test), "test users")

# A desk-sized model. Every config field can also be set from YAML or the CLI.
run = RunConfig(model=ModelConfig(d=16, n=16, L=2, heads=2, dropout_rate=0.1, span_days=30))
run = run.replace(**{"train.lr": 5e-3, "train.batch_size": 32, "train.epochs": 30, "train.patience": 5})
result = train(run, ds, split)
print("best epoch", result.best_epoch, "losses", np.round(result.losses, 3))

# Full-catalogue ranking with the ID/attribute blend (beta).
model = result.best_model()
for beta in (0.0, 0.3):
    print("beta", beta, evaluate(model, ds, split.test, beta=beta).record())

# Attention of the last position in the final block, for the first user.
ex = split.test[0]
out = model.forward(make_batch([ex], [0], ds, model.config.n), keep_attention=True)
names = ds.item_names()
probs = out.attention_maps[-1]["id"][0].mean(axis=0)[-1]  # averaged over heads
for pos in np.flatnonzero(probs > 1e-9):
    item = ex.items[pos - (model.config.n - len(ex.items))]
    print(f"{names[item]:>5}  {probs[pos]:.3f}")
