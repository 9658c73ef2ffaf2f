"""Ranking metrics over the held-out split.

Each user's candidates are all items except that user's train positives.
Candidates are ranked by descending score, and ties go to the lower item
index. Users without test positives are skipped.

``mrr`` averages the reciprocal rank of *every* test positive of a user
(other test positives stay in the candidate list); ``mrr_first_hit`` only
uses the best-ranked test positive. The two agree whenever a user has a
single test positive.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .dataset import InteractionDataset

TOP_K = 10
_USER_BLOCK = 256


@dataclass(frozen=True)
class EvalReport:
    mrr: float
    map_at_10: float
    auc: float
    users_evaluated: int
    mrr_first_hit: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


class NoTestPositivesError(ValueError):
    pass


def _row(csr, u: int) -> np.ndarray:
    return csr.indices[csr.indptr[u]:csr.indptr[u + 1]]


def rank_candidates(scores: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """Item indices ordered by descending score, ``excluded`` items removed."""
    keep = np.ones(len(scores), dtype=bool)
    keep[excluded] = False
    cand = np.flatnonzero(keep)
    # stable sort keeps ascending item order inside ties
    return cand[np.argsort(-scores[cand], kind="stable")]


def rank_items(model, dataset: InteractionDataset, user: int) -> np.ndarray:
    scores = np.asarray(model.score_users(np.array([user])))[0]
    return rank_candidates(scores, _row(dataset.train_positives, user))


def reciprocal_rank(ranked: np.ndarray, relevant: np.ndarray) -> float:
    """Mean of 1/rank over all relevant items (0 for those not ranked)."""
    if len(relevant) == 0:
        return 0.0
    hits = np.flatnonzero(np.isin(ranked, relevant))
    return float(np.sum(1.0 / (hits + 1)) / len(relevant))


def first_reciprocal_rank(ranked: np.ndarray, relevant: np.ndarray) -> float:
    hits = np.flatnonzero(np.isin(ranked, relevant))
    return 1.0 / (hits[0] + 1) if len(hits) else 0.0


def average_precision_at_k(ranked: np.ndarray, relevant: np.ndarray, k: int = TOP_K) -> float:
    if len(relevant) == 0:
        return 0.0
    rel = np.isin(ranked[:k], relevant)
    if not rel.any():
        return 0.0
    precision = np.cumsum(rel) / np.arange(1, len(rel) + 1)
    return float(np.sum(precision[rel]) / min(len(relevant), k))


def pairwise_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """P(pos > neg) with ties counted one half, via the rank-sum identity."""
    n_pos, n_neg = len(pos_scores), len(neg_scores)
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    u_stat = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _evaluated_users(dataset: InteractionDataset) -> np.ndarray:
    counts = np.diff(dataset.test_positives.indptr)
    users = np.flatnonzero(counts > 0)
    if len(users) == 0:
        raise NoTestPositivesError("no user has a test positive")
    return users


def per_user_metrics(model, dataset: InteractionDataset) -> dict[str, np.ndarray]:
    """Per-user reciprocal rank, AP@10 and AUC for every user with test positives."""
    users = _evaluated_users(dataset)
    train_pos, test_pos = dataset.train_positives, dataset.test_positives
    rr = np.empty(len(users))
    rr_first = np.empty(len(users))
    ap = np.empty(len(users))
    auc_ = np.empty(len(users))
    for start in range(0, len(users), _USER_BLOCK):
        block = users[start:start + _USER_BLOCK]
        scores = np.asarray(model.score_users(block))
        for row, u in enumerate(block):
            k = start + row
            s = scores[row]
            relevant = _row(test_pos, u)
            ranked = rank_candidates(s, _row(train_pos, u))
            rr[k] = reciprocal_rank(ranked, relevant)
            rr_first[k] = first_reciprocal_rank(ranked, relevant)
            ap[k] = average_precision_at_k(ranked, relevant)
            negatives = ranked[~np.isin(ranked, relevant)]
            auc_[k] = pairwise_auc(s[relevant], s[negatives]) if len(negatives) else np.nan
    return {"users": users, "rr": rr, "rr_first": rr_first, "ap": ap, "auc": auc_}


def evaluate(model, dataset: InteractionDataset) -> EvalReport:
    per_user = per_user_metrics(model, dataset)
    auc_vals = per_user["auc"][~np.isnan(per_user["auc"])]
    return EvalReport(
        mrr=float(per_user["rr"].mean()),
        map_at_10=float(per_user["ap"].mean()),
        auc=float(auc_vals.mean()) if len(auc_vals) else float("nan"),
        users_evaluated=len(per_user["users"]),
        mrr_first_hit=float(per_user["rr_first"].mean()),
    )


def mrr(model, dataset: InteractionDataset) -> float:
    return evaluate(model, dataset).mrr


def map_at_10(model, dataset: InteractionDataset) -> float:
    return evaluate(model, dataset).map_at_10


def auc(model, dataset: InteractionDataset) -> float:
    return evaluate(model, dataset).auc


class FixedScores:
    """Wraps a precomputed m x n score matrix as a model."""

    def __init__(self, scores: np.ndarray):
        self.scores = np.asarray(scores, dtype=np.float64)

    def score_users(self, users) -> np.ndarray:
        return self.scores[np.asarray(users)]
