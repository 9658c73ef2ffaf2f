"""Covariance/latent-vector correlation diagnostics for fitted factors.

For a user, each latent component k gives one number: the covariance between
the user's interaction vector (over every item) and column k of the item
factors. The diagnostic is the Pearson correlation between those p
covariances and the user's own latent vector. The item view mirrors this with
interaction columns and user-factor columns.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy import stats

from .dataset import InteractionDataset
from .factorization import LatentFactors

View = Literal["user", "item"]
DEFAULT_ALPHA = 0.05

STAT_ROWS = ("n", "mean", "sigma", "min", "q25", "median", "q75", "max")


class UndefinedCorrelationError(ValueError):
    """Pearson correlation requested for a constant vector."""


def covariance(x, y) -> float:
    """Sample covariance with ``1/(N-1)`` normalization."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("covariance needs two 1-d vectors of equal length")
    if len(x) < 2:
        raise ValueError("covariance needs at least two observations")
    return float(np.dot(x - x.mean(), y - y.mean()) / (len(x) - 1))


def _t_pvalue(rho: float, n: int) -> float:
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def pearson(x, y) -> tuple[float, float]:
    """Pearson's rho and its two-sided t-test p-value (N-2 degrees of freedom)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d vectors of equal length")
    if len(x) < 3:
        raise ValueError("pearson needs at least three observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    rho = float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    return rho, _t_pvalue(rho, len(x))


@dataclass(frozen=True)
class EntityCorrelation:
    entity: int
    rho: float
    p_value: float
    retained: bool
    defined: bool = True


def diagnostic_matrix(dataset: InteractionDataset) -> np.ndarray:
    """Interactions over all pairs: implicit 1/0, explicit +1/-1 observed and 0 unobserved.

    Diagnostics use every interaction regardless of any train/test split.
    """
    return dataset.interaction_matrix()


def _correlate(entity: int, own: np.ndarray, cov: np.ndarray, alpha: float) -> EntityCorrelation:
    try:
        rho, pval = pearson(own, cov)
    except UndefinedCorrelationError:
        return EntityCorrelation(entity, float("nan"), float("nan"), False, defined=False)
    return EntityCorrelation(entity, rho, pval, pval < alpha)


def _cov_rows(R: np.ndarray, other: np.ndarray) -> np.ndarray:
    # row r, column k: sample covariance of R[r] with other[:, k]
    Rc = R - R.mean(axis=1, keepdims=True)
    Oc = other - other.mean(axis=0)
    return Rc @ Oc / (R.shape[1] - 1)


def user_correlation(factors: LatentFactors, dataset: InteractionDataset, user: int, alpha: float = DEFAULT_ALPHA) -> EntityCorrelation:
    r = diagnostic_matrix(dataset)[user]
    cov = np.array([covariance(r, factors.item_factors[:, k]) for k in range(factors.p)])
    return _correlate(user, factors.user_factors[user], cov, alpha)


def item_correlation(factors: LatentFactors, dataset: InteractionDataset, item: int, alpha: float = DEFAULT_ALPHA) -> EntityCorrelation:
    r = diagnostic_matrix(dataset)[:, item]
    cov = np.array([covariance(r, factors.user_factors[:, k]) for k in range(factors.p)])
    return _correlate(item, factors.item_factors[item], cov, alpha)


def correlations(factors: LatentFactors, dataset: InteractionDataset, view: View, alpha: float = DEFAULT_ALPHA) -> list[EntityCorrelation]:
    """Vectorized :func:`user_correlation` / :func:`item_correlation` over every entity."""
    if factors.p < 3:
        raise ValueError("need at least 3 latent components to correlate")
    R = diagnostic_matrix(dataset)
    if view == "user":
        cov, own = _cov_rows(R, factors.item_factors), factors.user_factors
    elif view == "item":
        cov, own = _cov_rows(R.T, factors.user_factors), factors.item_factors
    else:
        raise ValueError(f"unknown view {view!r}")
    return [_correlate(e, own[e], cov[e], alpha) for e in range(len(own))]


@dataclass
class CorrelationStats:
    view: str
    scenario: str
    n: int
    mean: float = float("nan")
    sigma: float = float("nan")
    min: float = float("nan")
    q25: float = float("nan")
    median: float = float("nan")
    q75: float = float("nan")
    max: float = float("nan")
    values: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def empty(self) -> bool:
        return self.n == 0

    def row(self) -> dict:
        out = asdict(self)
        out.pop("values")
        return out


def summarize(correlations: list[EntityCorrelation], view: str = "", scenario: str = "") -> CorrelationStats:
    """Describe the retained correlations: count, mean, spread and quartiles.

    Quantiles interpolate linearly between order statistics; ``sigma`` is the
    sample standard deviation (zero for a single value).
    """
    rho = np.array([c.rho for c in correlations if c.retained], dtype=np.float64)
    if len(rho) == 0:
        return CorrelationStats(view, scenario, 0)
    q = np.quantile(rho, [0.0, 0.25, 0.5, 0.75, 1.0])
    return CorrelationStats(
        view,
        scenario,
        len(rho),
        mean=float(rho.mean()),
        sigma=float(rho.std(ddof=1)) if len(rho) > 1 else 0.0,
        min=float(q[0]),
        q25=float(q[1]),
        median=float(q[2]),
        q75=float(q[3]),
        max=float(q[4]),
        values=rho,
    )


def histogram(values: np.ndarray, bins: int = 20, value_range: tuple[float, float] = (-1.0, 1.0)):
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return edges, counts


# -- file outputs ----------------------------------------------------------

def write_entities_csv(path, rows: list[tuple[str, str, list[EntityCorrelation]]]) -> None:
    """One line per entity; ``rows`` holds ``(view, scenario, correlations)`` groups."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["view", "scenario", "entity_id", "rho", "p_value", "retained"])
        for view, scenario, corrs in rows:
            for c in corrs:
                w.writerow([view, scenario, c.entity, repr(c.rho), repr(c.p_value), int(c.retained)])


def read_entities_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {
                "view": r["view"],
                "scenario": r["scenario"],
                "entity_id": int(r["entity_id"]),
                "rho": float(r["rho"]),
                "p_value": float(r["p_value"]),
                "retained": bool(int(r["retained"])),
            }
            for r in csv.DictReader(fh)
        ]


def write_stats_csv(path, table: list[CorrelationStats]) -> None:
    """Statistic rows, one column per (scenario, view)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic"] + [f"{s.scenario}_{s.view}" for s in table])
        for stat in STAT_ROWS:
            w.writerow([stat] + [getattr(s, stat) if stat == "n" else repr(getattr(s, stat)) for s in table])


def read_stats_csv(path) -> dict[str, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    columns = rows[0][1:]
    out: dict[str, dict[str, float]] = {c: {} for c in columns}
    for row in rows[1:]:
        for col, val in zip(columns, row[1:]):
            out[col][row[0]] = int(val) if row[0] == "n" else float(val)
    return out


def write_histogram_csv(path, edges: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def render_histograms_svg(path: str | os.PathLike, series: dict[str, np.ndarray], title: str = "", bins: int = 20) -> None:
    """Overlaid correlation histograms; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, values in series.items():
        ax.hist(values, bins=bins, range=(-1, 1), alpha=0.6, label=f"{label} (n={len(values)})")
    ax.set_xlabel("correlation")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def fit_factors(
    dataset: InteractionDataset,
    seed: int = 0,
    p: int = 32,
    epochs: int = 15,
    batch_size: int = 128,
    learning_rate: float = 0.003,
) -> LatentFactors:
    """Fit LRA factors on every interaction: BPR for implicit data, BCE for explicit."""
    from .training import TrainConfig, default_loss, fit_lra

    full = dataset.unsplit()
    config = TrainConfig(
        loss=default_loss(full), batch_size=batch_size, epochs=epochs,
        learning_rate=learning_rate, seed=seed, p=p,
    )
    model, _ = fit_lra(full, config)
    return model.factors


def run_diagnostics(factors: LatentFactors, dataset: InteractionDataset, alpha: float = DEFAULT_ALPHA):
    """Both views for one scenario: ``{view: (correlations, stats)}``."""
    out = {}
    for view in ("user", "item"):
        corrs = correlations(factors, dataset, view, alpha)
        out[view] = (corrs, summarize(corrs, view, dataset.scenario))
    return out
