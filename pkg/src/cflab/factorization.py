"""Latent factors and biased dot-product scoring.

The same :class:`LatentFactors` container backs the low-rank model and the
embedding tables of the neural models.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


@dataclass(eq=False)
class LatentFactors:
    user_factors: np.ndarray  # (m, p)
    item_factors: np.ndarray  # (n, p)
    user_bias: np.ndarray  # (m,)
    item_bias: np.ndarray  # (n,)
    seed: int | None = None

    def __post_init__(self):
        self.user_factors = np.asarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.asarray(self.item_factors, dtype=np.float64)
        self.user_bias = np.asarray(self.user_bias, dtype=np.float64)
        self.item_bias = np.asarray(self.item_bias, dtype=np.float64)
        m, p = self.user_factors.shape
        n, q = self.item_factors.shape
        if p != q:
            raise ValueError(f"latent dimensions differ: {p} vs {q}")
        if self.user_bias.shape != (m,) or self.item_bias.shape != (n,):
            raise ValueError("bias vectors must match factor row counts")

    @property
    def m(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n(self) -> int:
        return self.item_factors.shape[0]

    @property
    def p(self) -> int:
        return self.user_factors.shape[1]

    def copy(self) -> "LatentFactors":
        return LatentFactors(
            self.user_factors.copy(),
            self.item_factors.copy(),
            self.user_bias.copy(),
            self.item_bias.copy(),
            self.seed,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "user_factors": self.user_factors,
            "item_factors": self.item_factors,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
        }

    def fingerprint(self) -> str:
        """SHA-256 over the raw bytes of the four tensors."""
        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        out = {"format_version": FORMAT_VERSION, "kind": "latent_factors", "p": self.p, "seed": self.seed}
        out.update({k: v.tolist() for k, v in self.arrays().items()})
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "LatentFactors":
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported factor format {payload.get('format_version')!r}")
        p = payload["p"]
        return cls(
            np.asarray(payload["user_factors"], dtype=np.float64).reshape(-1, p),
            np.asarray(payload["item_factors"], dtype=np.float64).reshape(-1, p),
            np.asarray(payload["user_bias"], dtype=np.float64),
            np.asarray(payload["item_bias"], dtype=np.float64),
            payload.get("seed"),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LatentFactors":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("kind") == "model":
            payload = payload["factors"]
        return cls.from_dict(payload)


def init_factors(m: int, n: int, p: int, seed: int | np.random.Generator = 0, scale: float | None = None) -> LatentFactors:
    """Draw factors i.i.d. from N(0, scale^2); biases start at zero.

    ``scale`` defaults to ``1/sqrt(p)``.
    """
    if min(m, n, p) < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, n={n}, p={p}")
    if scale is None:
        scale = 1.0 / np.sqrt(p)
    if scale < 0:
        raise ValueError("scale must be non-negative")
    rng = np.random.default_rng(seed)
    return LatentFactors(
        rng.normal(0.0, 1.0, size=(m, p)) * scale,
        rng.normal(0.0, 1.0, size=(n, p)) * scale,
        np.zeros(m),
        np.zeros(n),
        seed if isinstance(seed, (int, np.integer)) else None,
    )


def _check_index(idx, bound: int, what: str) -> None:
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise IndexError(f"{what} index out of range [0, {bound})")


def score(factors: LatentFactors, user, item):
    """Biased dot product ``e_u . e_v + b_u + b_v``; vectorizes over index arrays."""
    _check_index(user, factors.m, "user")
    _check_index(item, factors.n, "item")
    u = factors.user_factors[user]
    v = factors.item_factors[item]
    return np.sum(u * v, axis=-1) + factors.user_bias[user] + factors.item_bias[item]


def score_all_items(factors: LatentFactors, user):
    """Scores of every item for one user (vector) or several users (matrix)."""
    _check_index(user, factors.m, "user")
    s = factors.user_factors[user] @ factors.item_factors.T
    return s + np.asarray(factors.user_bias[user])[..., None] + factors.item_bias
