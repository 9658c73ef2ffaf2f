"""Multilayer perceptron over combined user/item latent vectors.

Forward and backward passes are written out by hand in numpy and operate on
a single input vector or a batch of row vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

InputModeling = Literal["concat", "hadamard"]
Activation = Literal["relu", "elu", "tanh", "sigmoid"]

INPUT_MODELINGS = ("concat", "hadamard")
ACTIVATIONS = ("relu", "elu", "tanh", "sigmoid")
MAX_HIDDEN = 3
FORMAT_VERSION = 1


def input_width(modeling: InputModeling, p: int) -> int:
    if modeling == "concat":
        return 2 * p
    if modeling == "hadamard":
        return p
    raise ValueError(f"unknown input modeling {modeling!r}")


def layer_widths(p: int, modeling: InputModeling, hidden_layers: int) -> list[int]:
    """Halving tower: input width, then each hidden layer half the previous, then 1."""
    if not 0 <= hidden_layers <= MAX_HIDDEN:
        raise ValueError(f"hidden_layers must be in 0..{MAX_HIDDEN}")
    widths = [input_width(modeling, p)]
    for _ in range(hidden_layers):
        widths.append(max(1, widths[-1] // 2))
    widths.append(1)
    return widths


class Architecture(NamedTuple):
    hidden_layers: int
    activation: Activation | None


def enumerate_architectures() -> list[Architecture]:
    """The 13 (depth, activation) combinations: one linear model plus 3 depths x 4 activations."""
    archs = [Architecture(0, None)]
    for depth in range(1, MAX_HIDDEN + 1):
        for act in ACTIVATIONS:
            archs.append(Architecture(depth, act))
    return archs


# -- activations ---------------------------------------------------------

def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``z`` (output ``a``)."""
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0, 1.0, a + 1.0)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


# -- network ---------------------------------------------------------------

@dataclass(eq=False)
class MlpNetwork:
    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]  # each (out,)
    activation: Activation | None
    modeling: InputModeling

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {k}: bias shape {b.shape} does not match weight {W.shape}")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: width chain broken")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("final layer must have a single output")
        if self.hidden_layers and self.activation not in ACTIVATIONS:
            raise ValueError(f"hidden layers need an activation, got {self.activation!r}")

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{k}"] = W
            params[f"b{k}"] = b
        return params

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation, self.modeling)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "activation": self.activation,
            "modeling": self.modeling,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MlpNetwork":
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {payload.get('format_version')!r}")
        weights = [np.asarray(W, dtype=np.float64) for W in payload["weights"]]
        for k, W in enumerate(weights):
            # a layer with a single input column survives the JSON round-trip as (out, 1)
            weights[k] = W.reshape(W.shape[0], -1)
        return cls(
            weights,
            [np.asarray(b, dtype=np.float64) for b in payload["biases"]],
            payload["activation"],
            payload["modeling"],
        )


def init_network(
    p: int,
    modeling: InputModeling,
    hidden_layers: int = 0,
    activation: Activation | None = None,
    seed: int | np.random.Generator = 0,
) -> MlpNetwork:
    """He-normal weights for ReLU/ELU, N(0, 1/fan_in) otherwise; zero biases."""
    if hidden_layers and activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    gain = 2.0 if activation in ("relu", "elu") and hidden_layers else 1.0
    widths = layer_widths(p, modeling, hidden_layers)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(weights, biases, activation if hidden_layers else None, modeling)


def build_input(modeling: InputModeling, e_u: np.ndarray, e_v: np.ndarray) -> np.ndarray:
    """Combine user and item vectors (or row batches of them)."""
    e_u = np.asarray(e_u, dtype=np.float64)
    e_v = np.asarray(e_v, dtype=np.float64)
    if e_u.shape != e_v.shape:
        raise ValueError(f"latent vector shapes differ: {e_u.shape} vs {e_v.shape}")
    if modeling == "concat":
        return np.concatenate([e_u, e_v], axis=-1)
    if modeling == "hadamard":
        return e_u * e_v
    raise ValueError(f"unknown input modeling {modeling!r}")


@dataclass
class Tape:
    """Cached forward quantities: layer inputs and hidden pre-activations."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    single: bool = False
    n_layers: int = 0


@dataclass
class MlpGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{k}"] = W
            out[f"b{k}"] = b
        return out


def forward(network: MlpNetwork, x: np.ndarray):
    """Evaluate the network; returns ``(score, tape)``.

    ``x`` may be one input vector (score is a float) or a ``(B, d)`` batch
    (score is a length-B vector). The last layer is affine with no activation.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != network.in_width:
        raise ValueError(f"input width {h.shape[-1]} does not match network width {network.in_width}")
    tape = Tape(single=single, n_layers=len(network.weights))
    last = len(network.weights) - 1
    for k, (W, b) in enumerate(zip(network.weights, network.biases)):
        tape.inputs.append(h)
        z = h @ W.T + b
        if k < last:
            tape.preacts.append(z)
            h = activate(network.activation, z)
        else:
            h = z
    out = h[:, 0]
    return (float(out[0]) if single else out), tape


def backward(network: MlpNetwork, tape: Tape, upstream) -> MlpGradients:
    """Gradients of ``upstream * score`` w.r.t. all parameters and the input.

    For a batch, ``upstream`` is a length-B vector and parameter gradients are
    summed over rows; the input gradient keeps one row per example.
    """
    if tape.n_layers != len(network.weights):
        raise ValueError("tape was produced by a different network")
    batch = tape.inputs[0].shape[0]
    g = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (batch,)).reshape(batch, 1)
    n_layers = len(network.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            z = tape.preacts[k]
            a = tape.inputs[k + 1]
            g = g * activate_grad(network.activation, z, a)
        gW[k] = g.T @ tape.inputs[k]
        gb[k] = g.sum(axis=0)
        g = g @ network.weights[k]
    return MlpGradients(gW, gb, g[0] if tape.single else g)


def backprop_to_embeddings(modeling: InputModeling, input_grad: np.ndarray, e_u: np.ndarray, e_v: np.ndarray):
    """Chain rule through :func:`build_input`; returns ``(grad_e_u, grad_e_v)``."""
    input_grad = np.asarray(input_grad, dtype=np.float64)
    e_u = np.asarray(e_u, dtype=np.float64)
    e_v = np.asarray(e_v, dtype=np.float64)
    p = e_u.shape[-1]
    if input_grad.shape[-1] != input_width(modeling, p):
        raise ValueError(f"input gradient width {input_grad.shape[-1]} does not match {modeling} at p={p}")
    if modeling == "concat":
        return input_grad[..., :p], input_grad[..., p:]
    return input_grad * e_v, input_grad * e_u
