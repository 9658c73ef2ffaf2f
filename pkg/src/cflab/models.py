"""Trainable scoring models sharing one forward/backward interface.

Both models expose ``score_users`` (full ranking), ``forward``/``backward``
over (user, item) index batches, and ``parameters`` (the trainable tensors,
keyed by name). Gradients are returned as dense arrays keyed like the
parameters, so the optimizer never needs to know which model it updates.
"""
from __future__ import annotations

import json
import os
from typing import Literal

import numpy as np

from . import neuralnet as nn
from .factorization import FORMAT_VERSION, LatentFactors, score_all_items

EmbeddingMode = Literal["learned", "pretrained", "pretrained_fixed"]
EMBEDDING_MODES = ("learned", "pretrained", "pretrained_fixed")

# rows per forward block when scoring every item for many users
_SCORE_BLOCK = 1 << 16


class LowRankModel:
    kind = "lra"

    def __init__(self, factors: LatentFactors, use_bias: bool = True):
        self.factors = factors
        self.use_bias = use_bias

    @property
    def m(self) -> int:
        return self.factors.m

    @property
    def n(self) -> int:
        return self.factors.n

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"user_factors": self.factors.user_factors, "item_factors": self.factors.item_factors}
        if self.use_bias:
            params["user_bias"] = self.factors.user_bias
            params["item_bias"] = self.factors.item_bias
        return params

    def score_users(self, users) -> np.ndarray:
        return score_all_items(self.factors, np.asarray(users))

    def forward(self, users, items):
        f = self.factors
        s = np.einsum("ij,ij->i", f.user_factors[users], f.item_factors[items])
        s += f.user_bias[users] + f.item_bias[items]
        return s, (users, items)

    def backward(self, cache, upstream: np.ndarray) -> dict[str, np.ndarray]:
        users, items = cache
        f = self.factors
        g = upstream[:, None]
        grads = {
            "user_factors": np.zeros_like(f.user_factors),
            "item_factors": np.zeros_like(f.item_factors),
        }
        np.add.at(grads["user_factors"], users, g * f.item_factors[items])
        np.add.at(grads["item_factors"], items, g * f.user_factors[users])
        if self.use_bias:
            grads["user_bias"] = np.bincount(users, weights=upstream, minlength=self.m)
            grads["item_bias"] = np.bincount(items, weights=upstream, minlength=self.n)
        return grads

    def copy(self) -> "LowRankModel":
        return LowRankModel(self.factors.copy(), self.use_bias)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "model",
            "model": self.kind,
            "use_bias": self.use_bias,
            "factors": self.factors.to_dict(),
        }


class NeuralModel:
    """Embedding lookups feeding an MLP; biases are not part of the score."""

    kind = "ncfn"

    def __init__(self, factors: LatentFactors, network: nn.MlpNetwork, train_embeddings: bool = True):
        if network.in_width != nn.input_width(network.modeling, factors.p):
            raise ValueError("network input width does not match the latent dimension")
        self.factors = factors
        self.network = network
        self.train_embeddings = train_embeddings

    @property
    def m(self) -> int:
        return self.factors.m

    @property
    def n(self) -> int:
        return self.factors.n

    @property
    def modeling(self) -> str:
        return self.network.modeling

    def parameters(self) -> dict[str, np.ndarray]:
        params = dict(self.network.parameters())
        if self.train_embeddings:
            params["user_factors"] = self.factors.user_factors
            params["item_factors"] = self.factors.item_factors
        return params

    def forward(self, users, items):
        e_u = self.factors.user_factors[users]
        e_v = self.factors.item_factors[items]
        x = nn.build_input(self.modeling, e_u, e_v)
        s, tape = nn.forward(self.network, x)
        return s, (users, items, e_u, e_v, tape)

    def backward(self, cache, upstream: np.ndarray) -> dict[str, np.ndarray]:
        users, items, e_u, e_v, tape = cache
        g = nn.backward(self.network, tape, upstream)
        grads = g.as_dict()
        if self.train_embeddings:
            gu, gv = nn.backprop_to_embeddings(self.modeling, g.input, e_u, e_v)
            grads["user_factors"] = np.zeros_like(self.factors.user_factors)
            grads["item_factors"] = np.zeros_like(self.factors.item_factors)
            np.add.at(grads["user_factors"], users, gu)
            np.add.at(grads["item_factors"], items, gv)
        return grads

    def score_users(self, users) -> np.ndarray:
        users = np.atleast_1d(np.asarray(users))
        n = self.n
        out = np.empty((len(users), n))
        per_block = max(1, _SCORE_BLOCK // n)
        all_items = np.arange(n)
        for start in range(0, len(users), per_block):
            block = users[start:start + per_block]
            u = np.repeat(block, n)
            v = np.tile(all_items, len(block))
            s, _ = self.forward(u, v)
            out[start:start + len(block)] = s.reshape(len(block), n)
        return out

    def copy(self) -> "NeuralModel":
        return NeuralModel(self.factors.copy(), self.network.copy(), self.train_embeddings)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "model",
            "model": self.kind,
            "train_embeddings": self.train_embeddings,
            "factors": self.factors.to_dict(),
            "network": self.network.to_dict(),
        }


def model_from_dict(payload: dict):
    if payload.get("kind") != "model" or payload.get("format_version") != FORMAT_VERSION:
        raise ValueError("not a model checkpoint of a supported version")
    factors = LatentFactors.from_dict(payload["factors"])
    if payload["model"] == "lra":
        return LowRankModel(factors, payload["use_bias"])
    if payload["model"] == "ncfn":
        return NeuralModel(factors, nn.MlpNetwork.from_dict(payload["network"]), payload["train_embeddings"])
    raise ValueError(f"unknown model kind {payload['model']!r}")


def save_model(model, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, separators=(",", ":"))


def load_model(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def build_neural_model(
    m: int,
    n: int,
    p: int,
    modeling: nn.InputModeling,
    hidden_layers: int,
    activation: nn.Activation | None,
    embedding_mode: EmbeddingMode = "learned",
    pretrained: LatentFactors | None = None,
    seed: int = 0,
) -> NeuralModel:
    """Assemble an NCFN for one of the three embedding strategies."""
    from .factorization import init_factors

    if embedding_mode not in EMBEDDING_MODES:
        raise ValueError(f"unknown embedding mode {embedding_mode!r}")
    factor_seq, net_seq = np.random.SeedSequence(seed).spawn(2)
    if embedding_mode == "learned":
        factors = init_factors(m, n, p, np.random.default_rng(factor_seq))
    else:
        if pretrained is None:
            raise ValueError(f"embedding mode {embedding_mode!r} needs pretrained factors")
        if (pretrained.m, pretrained.n, pretrained.p) != (m, n, p):
            raise ValueError("pretrained factors do not match the requested shape")
        factors = pretrained.copy()
    network = nn.init_network(p, modeling, hidden_layers, activation, np.random.default_rng(net_seq))
    return NeuralModel(factors, network, train_embeddings=embedding_mode != "pretrained_fixed")
