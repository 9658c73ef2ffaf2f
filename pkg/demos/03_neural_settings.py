"""
Neural scorers on top of LRA embeddings
=======================================

An MLP replaces the dot product. Its input is either the concatenation or
the elementwise product of the two latent vectors, and the embeddings can be
learned from scratch, started from a fitted LRA, or started from it and
frozen. This runs a small slice of that grid against the LRA baseline.
"""
from cflab import harness
from cflab.dataset import binarize_implicit, split_train_test
from cflab.neuralnet import Architecture, layer_widths

from _data import ratings_and_maps

ratings, maps = ratings_and_maps()
ds = split_train_test(binarize_implicit(ratings, maps), 0.8, seed=0)

print("concat p=32, 3 hidden:", layer_widths(32, "concat", 3))
print("hadamard p=32, 3 hidden:", layer_widths(32, "hadamard", 3))

#########################################################################
# LRA baseline: a tiny search over the learning rate.

lra_grid = harness.LraGrid(p_values=(32,), learning_rates=(0.003, 0.01), epochs=10)
factors, mf_best = harness.lra_search(ds, lra_grid)
print("MF_best", mf_best.run_id, f"MRR {mf_best.report.mrr:.4f} AUC {mf_best.report.auc:.4f}")

#########################################################################
# Six settings, two architectures each.

grid = harness.NcfnGrid(
    architectures=(Architecture(0, None), Architecture(1, "relu")),
    learning_rates=(0.003,),
    seeds=(0,),
    epochs=10,
)
results = harness.run_grid(ds, factors, grid.specs(factors.p))
for row in harness.best_per_setting(results, mf_best):
    print(f"{row.label:30s} MRR {row.mrr:.4f}  MAP@10 {row.map_at_10:.4f}  AUC {row.auc:.4f}  gain {row.mrr_gain:+.1%}")
