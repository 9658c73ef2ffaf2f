"""
Do latent vectors track interaction covariances?
================================================

For each user we take the covariance of their 0/1 interaction row with every
item-factor column, and correlate those p numbers with the user's own
vector. High correlations mean the factor geometry mirrors co-occurrence.
"""
import numpy as np

from cflab import diagnostics as dg
from cflab.dataset import binarize_explicit, binarize_implicit

from _data import ratings_and_maps

ratings, maps = ratings_and_maps()

tables = []
for scenario, binarize in (("implicit", binarize_implicit), ("explicit", binarize_explicit)):
    ds = binarize(ratings, maps)
    factors = dg.fit_factors(ds, seed=0, p=32, epochs=15)
    for view, (corrs, stats) in dg.run_diagnostics(factors, ds, alpha=0.05).items():
        tables.append(stats)
        undefined = sum(not c.defined for c in corrs)
        print(f"{scenario:8s} {view:4s} kept {stats.n:5d} of {len(corrs):5d}"
              f"  mean {stats.mean:.3f}  median {stats.median:.3f}  (undefined {undefined})")

#########################################################################
# Same numbers as a table, one column per scenario/view.

print(f"{'':8s}" + "".join(f"{s.scenario[:3] + '_' + s.view:>10s}" for s in tables))
for stat in dg.STAT_ROWS:
    print(f"{stat:8s}" + "".join(f"{getattr(s, stat):10.4f}" for s in tables))

#########################################################################
# Text histogram of the implicit user correlations.

edges, counts = dg.histogram(tables[0].values, bins=20)
for lo, c in zip(edges[:-1], counts):
    if c:
        print(f"{lo:+.1f} {'#' * int(np.ceil(50 * c / counts.max()))}")
