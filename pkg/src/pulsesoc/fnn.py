"""Feedforward network with ReLU hidden layers, a linear scalar output and Adam.

Weights of layer ``l`` form a ``(n_l, n_{l-1})`` matrix, so a batch ``X`` of
shape ``(N, F)`` propagates as ``H_l = relu(H_{l-1} @ W_l.T + b_l)``.
Everything is float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MODEL_FORMAT = "pulsesoc-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class NonFiniteError(ValueError):
    """A parameter became NaN or infinite."""


@dataclass
class Network:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        _check_shapes(self.layer_sizes, self.weights, self.biases)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(self.layer_sizes, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])


def _check_shapes(sizes, weights, biases):
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    if sizes[-1] != 1:
        raise ValueError("output layer must have width 1")
    if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
        raise ValueError("one weight matrix and bias vector per layer expected")
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
            raise ValueError(f"layer {l} has shapes {w.shape}/{b.shape}, "
                             f"expected ({sizes[l + 1]}, {sizes[l]})/({sizes[l + 1]},)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFiniteError(f"layer {l} has non-finite parameters")


def init(layer_sizes: Sequence[int], seed: int) -> Network:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or any(n < 1 for n in sizes) or sizes[-1] != 1:
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Network(sizes, weights, biases)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def forward(net: Network, x, return_cache: bool = False):
    """SoC estimate(s) for one feature vector or a batch of rows.

    With ``return_cache`` also returns the list of layer activations,
    starting with the input batch.
    """
    h = np.asarray(x, dtype=float)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.ndim != 2 or h.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got shape {np.shape(x)}")
    acts = [h]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = z if l == last else relu(z)
        acts.append(h)
    out = h[:, 0]
    if single:
        out = float(out[0])
    return (out, acts) if return_cache else out


@dataclass
class Metrics:
    mae: float
    mse: float
    rmse: float

    @property
    def mae_pct(self) -> float:
        return 100.0 * self.mae

    @property
    def rmse_pct(self) -> float:
        return 100.0 * self.rmse


def loss(estimates, targets) -> Metrics:
    """Error statistics of ``e = estimate - target``."""
    e = np.asarray(estimates, dtype=float) - np.asarray(targets, dtype=float)
    if e.size == 0:
        raise ValueError("loss of an empty batch")
    mse = float(np.mean(e * e))
    return Metrics(float(np.mean(np.abs(e))), mse, math.sqrt(mse))


def backward(net: Network, x, targets) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the batch-mean squared error w.r.t. weights and biases."""
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(t) == 0 or len(t) != len(x):
        raise ValueError("batch inputs and targets must be non-empty and equal length")
    y, acts = forward(net, x, return_cache=True)
    n = len(t)
    delta = (2.0 / n) * (y - t)[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l:
            # relu'(0) = 0: acts[l] > 0 exactly where the pre-activation was positive
            delta = (delta @ net.weights[l]) * (acts[l] > 0)
    return gw, gb


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    r: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    kappa: float = 1e-8


def adam_init(net: Network, learning_rate: float = 1e-3, **kw) -> OptimizerState:
    zeros = [np.zeros_like(p) for p in net.weights + net.biases]
    return OptimizerState(zeros, [z.copy() for z in zeros], 0, learning_rate, **kw)


def adam_step(opt: OptimizerState, net: Network, grads) -> tuple[OptimizerState, Network]:
    """One bias-corrected Adam update; returns new optimizer state and network."""
    gw, gb = grads
    g = list(gw) + list(gb)
    params = net.weights + net.biases
    if len(g) != len(params) or any(a.shape != p.shape for a, p in zip(g, params)):
        raise ValueError("gradient shapes do not match the network")
    t = opt.step + 1
    if t > 10**15:
        raise OverflowError("Adam step counter overflow")
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    m_new, r_new, p_new = [], [], []
    for p, gi, m, r in zip(params, g, opt.m, opt.r):
        m = b1 * m + (1.0 - b1) * gi
        r = b2 * r + (1.0 - b2) * gi * gi
        p_new.append(p - opt.learning_rate * (m / c1) / (np.sqrt(r / c2) + opt.kappa))
        m_new.append(m)
        r_new.append(r)
    k = len(net.weights)
    new_opt = OptimizerState(m_new, r_new, t, opt.learning_rate, b1, b2, opt.kappa)
    return new_opt, Network(net.layer_sizes, p_new[:k], p_new[k:])


@dataclass
class SocModel:
    """A trained network plus everything inference needs.

    ``input_mean``/``input_std`` standardise features before the network;
    ``feature_config`` records how the features were built.
    """

    net: Network
    input_mean: np.ndarray
    input_std: np.ndarray
    feature_config: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def predict(self, features) -> np.ndarray | float:
        x = (np.asarray(features, dtype=float) - self.input_mean) / self.input_std
        return forward(self.net, x)

    __call__ = predict


def serialize(model: SocModel) -> str:
    net = model.net
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "feature_config": model.feature_config,
        "normalization": {"mean": model.input_mean.tolist(), "std": model.input_std.tolist()},
        "info": model.info,
    }
    return json.dumps(doc)


def deserialize(text: str) -> SocModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a pulsesoc model document")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        net = Network(tuple(doc["layer_sizes"]), weights, biases)
        mean = np.array(doc["normalization"]["mean"], dtype=float)
        std = np.array(doc["normalization"]["std"], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model document: {exc}") from exc
    if mean.shape != (net.n_inputs,) or std.shape != (net.n_inputs,):
        raise ModelFormatError("normalization length does not match the input layer")
    return SocModel(net, mean, std, doc.get("feature_config", {}), doc.get("info", {}))
