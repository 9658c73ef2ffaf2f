"""
Ranking metrics on a toy example
================================

One user, six items. Item 0 was a training positive, items 2 and 4 are
held out.
"""
import numpy as np

from cflab.evaluation import average_precision_at_k, pairwise_auc, rank_candidates, reciprocal_rank

scores = np.array([0.9, 0.1, 0.7, 0.7, 0.3, 0.5])
ranked = rank_candidates(scores, excluded=np.array([0]))
print("ranking:", ranked)   # 2 beats 3 on the tie

relevant = np.array([2, 4])
print("reciprocal rank:", reciprocal_rank(ranked, relevant))   # (1/1 + 1/4) / 2
print("AP@10:", average_precision_at_k(ranked, relevant))      # (1/1 + 2/4) / 2

negatives = np.setdiff1d(ranked, relevant)
print("AUC:", pairwise_auc(scores[relevant], scores[negatives]))

# ties count half
print("all-equal AUC:", pairwise_auc(np.zeros(2), np.zeros(3)))
