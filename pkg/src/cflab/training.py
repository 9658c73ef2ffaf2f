"""Losses, negative sampling, Adam, and the minibatch training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .dataset import InteractionDataset
from .evaluation import evaluate
from .factorization import init_factors
from .models import EMBEDDING_MODES, EmbeddingMode, LowRankModel

logger = logging.getLogger(__name__)

Loss = Literal["bce", "bpr"]


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def _softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-_softplus(-np.asarray(x, dtype=np.float64)))


def bce_loss_and_grad(score, label):
    """Binary cross-entropy on ``sigmoid(score)`` against ``max(0, label)``.

    ``label`` must be -1 or +1. Works elementwise on arrays; stable for large |score|.
    """
    score = np.asarray(score, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if not np.all((label == 1.0) | (label == -1.0)):
        raise ValueError("labels must be -1 or +1")
    target = np.maximum(label, 0.0)
    loss = _softplus(score) - target * score
    grad = sigmoid(score) - target
    return loss, grad


def bpr_loss_and_grads(score_pos, score_neg):
    """``-log sigmoid(pos - neg)`` and its derivatives w.r.t. both scores."""
    diff = np.asarray(score_pos, dtype=np.float64) - np.asarray(score_neg, dtype=np.float64)
    loss = _softplus(-diff)
    g = sigmoid(-diff)
    return loss, -g, g


def sample_negative(dataset: InteractionDataset, user: int, rng: np.random.Generator) -> int:
    """Uniform draw among items that are not train positives of ``user``."""
    return int(sample_negatives(dataset, np.array([user]), rng)[0])


def sample_negatives(dataset: InteractionDataset, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample one non-positive item per entry of ``users``."""
    mask = dataset.train_positive_mask
    counts = np.diff(dataset.train_positives.indptr)
    if np.any(counts[users] >= dataset.n):
        raise ValueError("a user is positive on every item; nothing to sample")
    items = rng.integers(0, dataset.n, size=len(users))
    todo = np.arange(len(users))
    while len(todo):
        hit = mask[users[todo], items[todo]]
        todo = todo[hit]
        items[todo] = rng.integers(0, dataset.n, size=len(todo))
    return items


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update applied in place to every tensor in ``params``."""
    for k, p in params.items():
        if k not in grads:
            raise KeyError(f"missing gradient for {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(grads[k])} != parameter shape {np.shape(p)} for {k!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        np.subtract(p, state.lr * m_hat / (np.sqrt(v_hat) + state.eps), out=p)
    return params, state


# -- training loop -------------------------------------------------------------

@dataclass
class TrainConfig:
    loss: Loss = "bpr"
    batch_size: int = 128
    epochs: int = 15
    learning_rate: float = 0.003
    seed: int = 0
    embedding_mode: EmbeddingMode = "learned"
    p: int = 32
    use_bias: bool = True
    select_best: bool | None = None  # None: keep the best-MRR epoch when a test split exists

    def __post_init__(self):
        if self.loss not in ("bce", "bpr"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ValueError(f"unknown embedding mode {self.embedding_mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    mrr: float = float("nan")
    map_at_10: float = float("nan")
    auc: float = float("nan")
    mrr_first_hit: float = float("nan")


def _check_compatible(model, dataset: InteractionDataset, config: TrainConfig) -> None:
    if config.loss == "bpr" and dataset.scenario != "implicit":
        raise ValueError("BPR training needs an implicit-feedback dataset")
    if config.loss == "bce" and dataset.scenario != "explicit":
        raise ValueError("BCE training needs an explicit-feedback dataset")
    if (model.m, model.n) != (dataset.m, dataset.n):
        raise ValueError("model and dataset index spaces differ")


def _snapshot(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def train_model(
    model,
    dataset: InteractionDataset,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
):
    """Fit ``model`` in place with minibatch Adam; returns ``(model, trace)``.

    Each epoch reshuffles the training interactions. BPR pairs every train
    positive with one freshly sampled negative. When the dataset carries a
    test split, metrics are recorded after every epoch and (by default) the
    parameters of the best-MRR epoch are restored at the end.
    """
    _check_compatible(model, dataset, config)
    shuffle_seq, neg_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    neg_rng = np.random.default_rng(neg_seq)
    state = AdamState(lr=config.learning_rate)
    params = model.parameters()
    evaluating = dataset.is_split and len(dataset.test_idx) > 0
    select_best = evaluating if config.select_best is None else (config.select_best and evaluating)

    train = dataset.train_idx
    if config.loss == "bpr":
        train = train[dataset.labels[train] > 0]
    users_all, items_all, labels_all = dataset.users[train], dataset.items[train], dataset.labels[train]

    trace: list[EpochRecord] = []
    best_mrr, best_params = -np.inf, None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            users, items = users_all[idx], items_all[idx]
            if config.loss == "bpr":
                negs = sample_negatives(dataset, users, neg_rng)
                b = len(idx)
                scores, cache = model.forward(np.concatenate([users, users]), np.concatenate([items, negs]))
                loss, d_pos, d_neg = bpr_loss_and_grads(scores[:b], scores[b:])
                upstream = np.concatenate([d_pos, d_neg])
            else:
                scores, cache = model.forward(users, items)
                loss, upstream = bce_loss_and_grad(scores, labels_all[idx])
            batch_loss = float(loss.sum())
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch, batch_no, batch_loss)
            total += batch_loss
            adam_step(params, model.backward(cache, upstream), state)

        record = EpochRecord(epoch, total / max(1, len(order)))
        if evaluating:
            report = evaluate(model, dataset)
            record = EpochRecord(epoch, record.train_loss, report.mrr, report.map_at_10, report.auc, report.mrr_first_hit)
            if select_best and report.mrr > best_mrr:
                best_mrr, best_params = report.mrr, _snapshot(params)
        logger.debug("epoch %d loss %.5f mrr %.5f auc %.5f", epoch, record.train_loss, record.mrr, record.auc)
        trace.append(record)
        if on_epoch is not None:
            on_epoch(record)

    if select_best and best_params is not None:
        for k, v in params.items():
            v[...] = best_params[k]
    return model, trace


def best_epoch(trace: list[EpochRecord]) -> int:
    """1-based epoch with the highest MRR (first one on ties)."""
    mrrs = np.array([r.mrr for r in trace])
    return int(np.nanargmax(mrrs)) + 1


def fit_lra(dataset: InteractionDataset, config: TrainConfig):
    """Train a freshly initialized low-rank model; loss follows ``config.loss``."""
    factors = init_factors(dataset.m, dataset.n, config.p, np.random.default_rng(np.random.SeedSequence([config.seed, 1])))
    factors.seed = config.seed
    model = LowRankModel(factors, use_bias=config.use_bias)
    return train_model(model, dataset, config)


def default_loss(dataset: InteractionDataset) -> Loss:
    return "bpr" if dataset.scenario == "implicit" else "bce"
