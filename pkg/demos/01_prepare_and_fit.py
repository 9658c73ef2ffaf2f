"""
Binarize ratings and fit a low-rank model
=========================================

Ratings at or above a user's own mean become positives. We hold out 20% of
them, fit user/item factors with BPR and look at the held-out ranking.
"""
import numpy as np

from cflab.dataset import binarize_implicit, split_train_test
from cflab.evaluation import evaluate, rank_items
from cflab.training import TrainConfig, fit_lra

from _data import ratings_and_maps

ratings, maps = ratings_and_maps()
print(f"{maps.m} users, {maps.n} items")

ds = split_train_test(binarize_implicit(ratings, maps), fraction=0.8, seed=0)
print(f"{len(ds)} positives: {len(ds.train_idx)} train / {len(ds.test_idx)} test")

# per-user threshold: how many ratings each user keeps
kept = np.bincount(ds.users, minlength=ds.m)
print("positives per user: median", np.median(kept), "max", kept.max())

#########################################################################
# Train for a few epochs, printing the held-out metrics as we go.

config = TrainConfig(loss="bpr", p=32, epochs=10, learning_rate=0.003, seed=0)
model, trace = fit_lra(ds, config)
for rec in trace:
    print(f"epoch {rec.epoch:2d}  loss {rec.train_loss:.4f}  MRR {rec.mrr:.4f}  AUC {rec.auc:.4f}")

# the model we get back is the best-MRR epoch
print(evaluate(model, ds))

#########################################################################
# Top 10 for one user. Train positives are never recommended.

user = int(ds.users[ds.test_idx[0]])
top = rank_items(model, ds, user)[:10]
held_out = set(ds.test_positives[user].indices)
print("user", maps.user_ids[user], "top items:", [int(maps.item_ids[i]) for i in top])
print("held-out hits in top 10:", sum(int(i) in held_out for i in top))
