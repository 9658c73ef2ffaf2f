"""MovieLens ratings ingestion, user-mean binarization and train/test splits."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Literal, NamedTuple

import numpy as np
import scipy.sparse as sp

Scenario = Literal["implicit", "explicit"]
SCENARIOS = ("implicit", "explicit")

HEADER = ("userId", "movieId", "rating", "timestamp")
FORMAT_VERSION = 1


class RatingsFormatError(ValueError):
    """A ratings file line could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class RawRating(NamedTuple):
    user_id: int
    item_id: int
    rating: float
    timestamp: int


@dataclass(frozen=True, eq=False)
class RatingTable:
    """Column-oriented ratings; indexing yields :class:`RawRating` records."""

    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.user_ids)

    def __getitem__(self, idx: int) -> RawRating:
        return RawRating(
            int(self.user_ids[idx]),
            int(self.item_ids[idx]),
            float(self.ratings[idx]),
            int(self.timestamps[idx]),
        )

    def __iter__(self) -> Iterator[RawRating]:
        for idx in range(len(self)):
            yield self[idx]

    @classmethod
    def from_records(cls, records) -> "RatingTable":
        records = list(records)
        if not records:
            return cls(*(np.empty(0, dtype=t) for t in (np.int64, np.int64, np.float64, np.int64)))
        u, i, r, t = zip(*records)
        return cls(
            np.asarray(u, dtype=np.int64),
            np.asarray(i, dtype=np.int64),
            np.asarray(r, dtype=np.float64),
            np.asarray(t, dtype=np.int64),
        )


def _on_half_grid(rating: float) -> bool:
    return 0.5 <= rating <= 5.0 and float(rating * 2).is_integer()


def load_ratings(path: str | os.PathLike) -> RatingTable:
    """Parse a MovieLens ``ratings.csv`` file, preserving file order.

    Raises :class:`RatingsFormatError` (with the 1-based line number) on a
    bad header, wrong field count, non-numeric fields, off-grid ratings or a
    repeated (user, item) pair. A missing file raises ``FileNotFoundError``.
    """
    users, items, ratings, stamps = [], [], [], []
    seen: set[tuple[int, int]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise RatingsFormatError(1, f"expected header {','.join(HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise RatingsFormatError(lineno, f"expected 4 fields, got {len(row)}")
            try:
                u, i, r, t = int(row[0]), int(row[1]), float(row[2]), int(row[3])
            except ValueError as exc:
                raise RatingsFormatError(lineno, f"non-numeric field ({exc})") from None
            if not _on_half_grid(r):
                raise RatingsFormatError(lineno, f"rating {row[2]} not on the 0.5..5.0 half-step grid")
            if (u, i) in seen:
                raise RatingsFormatError(lineno, f"duplicate pair user={u} item={i}")
            seen.add((u, i))
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(t)
    return RatingTable(
        np.asarray(users, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        np.asarray(ratings, dtype=np.float64),
        np.asarray(stamps, dtype=np.int64),
    )


def _first_appearance(ids: np.ndarray) -> np.ndarray:
    uniq, first = np.unique(ids, return_index=True)
    return uniq[np.argsort(first, kind="stable")]


@dataclass(frozen=True, eq=False)
class IndexMaps:
    """Bijections from external ids to contiguous indices, in first-appearance order."""

    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def m(self) -> int:
        return len(self.user_ids)

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> dict[int, int]:
        return {int(u): k for k, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[int, int]:
        return {int(i): k for k, i in enumerate(self.item_ids)}

    def encode(self, ratings: RatingTable) -> tuple[np.ndarray, np.ndarray]:
        users = _lookup(self.user_ids, ratings.user_ids)
        items = _lookup(self.item_ids, ratings.item_ids)
        return users, items


def _lookup(ordered_ids: np.ndarray, query: np.ndarray) -> np.ndarray:
    order = np.argsort(ordered_ids, kind="stable")
    pos = np.searchsorted(ordered_ids, query, sorter=order)
    pos = np.minimum(pos, len(ordered_ids) - 1)
    idx = order[pos]
    if not np.array_equal(ordered_ids[idx], query):
        raise KeyError("ids missing from index map")
    return idx.astype(np.int64)


def build_index_maps(ratings: RatingTable) -> IndexMaps:
    if len(ratings) == 0:
        raise ValueError("cannot build index maps from an empty ratings table")
    return IndexMaps(_first_appearance(ratings.user_ids), _first_appearance(ratings.item_ids))


@dataclass(eq=False)
class InteractionDataset:
    """Labeled (user, item) interactions over fixed index spaces.

    ``train_mask`` is ``None`` until :func:`split_train_test` is applied;
    an unsplit dataset treats every interaction as training data.
    """

    scenario: Scenario
    maps: IndexMaps
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray | None = None
    seed: int | None = None
    fraction: float | None = None
    n_ratings: int = field(default=0)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")

    @property
    def m(self) -> int:
        return self.maps.m

    @property
    def n(self) -> int:
        return self.maps.n

    def __len__(self) -> int:
        return len(self.users)

    @property
    def is_split(self) -> bool:
        return self.train_mask is not None

    @property
    def train_idx(self) -> np.ndarray:
        if self.train_mask is None:
            return np.arange(len(self))
        return np.flatnonzero(self.train_mask)

    @property
    def test_idx(self) -> np.ndarray:
        if self.train_mask is None:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(~self.train_mask)

    def _positive_matrix(self, idx: np.ndarray) -> sp.csr_matrix:
        idx = idx[self.labels[idx] > 0]
        data = np.ones(len(idx), dtype=bool)
        mat = sp.csr_matrix((data, (self.users[idx], self.items[idx])), shape=(self.m, self.n))
        mat.sort_indices()
        return mat

    @cached_property
    def train_positives(self) -> sp.csr_matrix:
        """Boolean m x n CSR matrix of train-partition positives."""
        return self._positive_matrix(self.train_idx)

    @cached_property
    def train_positive_mask(self) -> np.ndarray:
        """Dense boolean m x n view of :attr:`train_positives`."""
        return self.train_positives.toarray()

    @cached_property
    def test_positives(self) -> sp.csr_matrix:
        return self._positive_matrix(self.test_idx)

    @cached_property
    def user_positive_sets(self) -> list[frozenset[int]]:
        tp = self.train_positives
        return [frozenset(tp.indices[tp.indptr[u]:tp.indptr[u + 1]].tolist()) for u in range(self.m)]

    def interaction_matrix(self) -> np.ndarray:
        """Dense m x n matrix over all interactions: labels where observed, 0 elsewhere."""
        R = np.zeros((self.m, self.n))
        R[self.users, self.items] = self.labels
        return R

    def unsplit(self) -> "InteractionDataset":
        return dataclasses.replace(self, train_mask=None, seed=None, fraction=None)

    # -- serialization -------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "format_version": FORMAT_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "fraction": self.fraction,
            "n_ratings": self.n_ratings,
            "user_ids": self.maps.user_ids.tolist(),
            "item_ids": self.maps.item_ids.tolist(),
            "interactions": np.column_stack(
                [self.users, self.items, self.labels.astype(np.int64)]
            ).tolist(),
            "split": None if self.train_mask is None else self.train_mask.astype(int).tolist(),
        }
        return json.dumps(payload, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InteractionDataset":
        payload = json.loads(text)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {payload.get('format_version')!r}")
        maps = IndexMaps(
            np.asarray(payload["user_ids"], dtype=np.int64),
            np.asarray(payload["item_ids"], dtype=np.int64),
        )
        inter = np.asarray(payload["interactions"], dtype=np.int64).reshape(-1, 3)
        split = payload["split"]
        return cls(
            scenario=payload["scenario"],
            maps=maps,
            users=inter[:, 0].copy(),
            items=inter[:, 1].copy(),
            labels=inter[:, 2].astype(np.float64),
            train_mask=None if split is None else np.asarray(split, dtype=bool),
            seed=payload["seed"],
            fraction=payload["fraction"],
            n_ratings=payload["n_ratings"],
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "InteractionDataset":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def user_means(ratings: RatingTable, maps: IndexMaps) -> np.ndarray:
    users, _ = maps.encode(ratings)
    sums = np.bincount(users, weights=ratings.ratings, minlength=maps.m)
    counts = np.bincount(users, minlength=maps.m)
    if np.any(counts == 0):
        raise ValueError("every user needs at least one rating")
    return sums / counts


def _above_mean(ratings: RatingTable, maps: IndexMaps):
    users, items = maps.encode(ratings)
    # ties count as positive
    keep = ratings.ratings >= user_means(ratings, maps)[users]
    return users, items, keep


def binarize_implicit(ratings: RatingTable, maps: IndexMaps) -> InteractionDataset:
    """Keep ratings at or above the user's mean, all labelled 1."""
    users, items, keep = _above_mean(ratings, maps)
    return InteractionDataset(
        "implicit", maps, users[keep], items[keep], np.ones(int(keep.sum())), n_ratings=len(ratings)
    )


def binarize_explicit(ratings: RatingTable, maps: IndexMaps) -> InteractionDataset:
    """Label every rating +1 if at or above the user's mean, else -1."""
    users, items, keep = _above_mean(ratings, maps)
    return InteractionDataset(
        "explicit", maps, users, items, np.where(keep, 1.0, -1.0), n_ratings=len(ratings)
    )


def binarize(ratings: RatingTable, maps: IndexMaps, scenario: Scenario) -> InteractionDataset:
    if scenario == "implicit":
        return binarize_implicit(ratings, maps)
    if scenario == "explicit":
        return binarize_explicit(ratings, maps)
    raise ValueError(f"unknown scenario {scenario!r}")


def split_train_test(dataset: InteractionDataset, fraction: float = 0.8, seed: int = 0) -> InteractionDataset:
    """Uniform random split over interactions; ``round(fraction * N)`` go to train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    total = len(dataset)
    perm = rng.permutation(total)
    mask = np.zeros(total, dtype=bool)
    mask[perm[: int(round(fraction * total))]] = True
    return dataclasses.replace(dataset, train_mask=mask, seed=seed, fraction=fraction)


def prepare(path, scenario: Scenario = "implicit", fraction: float = 0.8, seed: int = 0) -> InteractionDataset:
    """Load, index, binarize and split in one call."""
    ratings = load_ratings(path)
    maps = build_index_maps(ratings)
    return split_train_test(binarize(ratings, maps, scenario), fraction, seed)


def synthetic_ratings(m: int = 60, n: int = 120, p: int = 4, density: float = 0.15, seed: int = 0) -> RatingTable:
    """Low-rank toy ratings on the half-step grid, for demos and tests.

    Ratings come from a planted rank-``p`` preference model plus noise, so
    the binarized data carries real collaborative signal.
    """
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, p))
    V = rng.normal(size=(n, p))
    pop = rng.normal(scale=0.8, size=n)
    affinity = U @ V.T / np.sqrt(p) + pop
    # popular items get rated more often
    weights = np.exp(pop)
    rows = []
    for u in range(m):
        k = max(2, rng.binomial(n, density))
        items = rng.choice(n, size=k, replace=False, p=weights / weights.sum())
        raw = 3.0 + affinity[u, items] + rng.normal(scale=0.5, size=k)
        stars = np.clip(np.round(raw * 2) / 2, 0.5, 5.0)
        for i, r in zip(items, stars):
            rows.append((u + 1, int(i) + 1, float(r), 1_000_000_000 + len(rows)))
    return RatingTable.from_records(rows)
