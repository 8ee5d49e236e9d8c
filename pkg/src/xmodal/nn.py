"""Small numpy MLP branches with manual backprop, plus SGD/Adam updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, InvalidConfig

ACTIVATIONS = ("linear", "relu", "tanh")


@dataclass(frozen=True, eq=False)
class Layer:
    W: np.ndarray  # d_in x d_out
    b: np.ndarray
    activation: str = "linear"


@dataclass(frozen=True, eq=False)
class BranchNetwork:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise InvalidConfig("a branch needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise InvalidConfig("layer dimensions do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise InvalidConfig(f"unknown activation {layer.activation!r}")
            if layer.b.shape != (layer.W.shape[1],):
                raise InvalidConfig("bias shape does not match weight matrix")
        if self.layers[-1].activation != "linear":
            raise InvalidConfig("final layer must be linear")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def with_params(self, params) -> "BranchNetwork":
        return BranchNetwork(tuple(
            Layer(np.array(params[2 * i]), np.array(params[2 * i + 1]), layer.activation)
            for i, layer in enumerate(self.layers)
        ))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def init_branch(input_dim: int, hidden_sizes, output_dim: int, activation: str,
                rng: np.random.Generator) -> BranchNetwork:
    """Uniform fan-in/fan-out init in +-sqrt(6/(d_in+d_out)); zero biases."""
    if activation not in ACTIVATIONS:
        raise InvalidConfig(f"unknown activation {activation!r}")
    sizes = [input_dim, *hidden_sizes, output_dim]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (d_in + d_out))
        W = rng.uniform(-limit, limit, size=(d_in, d_out))
        act = "linear" if i == len(sizes) - 2 else activation
        layers.append(Layer(W, np.zeros(d_out), act))
    return BranchNetwork(tuple(layers))


def identity_branch(dim: int, hidden_sizes, activation: str = "relu", noise: float = 0.0,
                    rng: np.random.Generator | None = None) -> BranchNetwork:
    """A network computing the identity on ``dim``-vectors.

    ReLU stacks use the split ``x = relu(x) - relu(-x)``: the first hidden
    layer holds ``[x, -x]``, later hidden layers pass it through and the
    output layer recombines.  Each hidden layer therefore needs at least
    ``2 * dim`` units; surplus units start at zero.  ``noise`` adds
    ``U(-noise, noise)`` to every weight so surplus units can learn.
    """
    if activation not in ("relu", "linear"):
        raise InvalidConfig("identity init supports relu or linear hidden layers")
    width = 2 * dim if activation == "relu" else dim
    if any(h < width for h in hidden_sizes):
        raise InvalidConfig(f"identity init needs hidden layers of >= {width} units")
    split = np.hstack([np.eye(dim), -np.eye(dim)]) if activation == "relu" else np.eye(dim)
    sizes = [dim, *hidden_sizes, dim]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes, sizes[1:])):
        W = np.zeros((d_in, d_out))
        last = i == len(sizes) - 2
        if not hidden_sizes:
            W[:] = np.eye(dim)
        elif i == 0:
            W[:, :width] = split
        elif last:
            W[:width, :] = split.T
        else:
            W[:width, :width] = np.eye(width)
        if noise > 0:
            W += rng.uniform(-noise, noise, size=W.shape)
        layers.append(Layer(W, np.zeros(d_out), "linear" if last else activation))
    return BranchNetwork(tuple(layers))


def _act(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def forward(net: BranchNetwork, X, cache: bool = False):
    """Affine+activation composition. With ``cache`` also returns layer inputs/outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.input_dim:
        raise DimMismatch(f"network expects dim {net.input_dim}, got {X.shape[1]}")
    acts = [X]
    h = X
    for layer in net.layers:
        h = _act(h @ layer.W + layer.b, layer.activation)
        acts.append(h)
    return (h, acts) if cache else h


def backward(net: BranchNetwork, acts, grad_out) -> list[np.ndarray]:
    """Gradients ``[dW0, db0, dW1, ...]`` given ``dLoss/dOutput``."""
    grads = [None] * (2 * len(net.layers))
    g = grad_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        out = acts[i + 1]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "tanh":
            g = g * (1.0 - out ** 2)
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ layer.W.T
    return grads


def input_gradient(net: BranchNetwork, acts, grad_out) -> np.ndarray:
    """``dLoss/dInput``; used for Jacobian checks."""
    g = grad_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        out = acts[i + 1]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "tanh":
            g = g * (1.0 - out ** 2)
        g = g @ layer.W.T
    return g


class Optimizer:
    """Plain SGD or Adam (beta1=0.9, beta2=0.999, eps=1e-8) over a param list."""

    def __init__(self, params, kind: str = "adam", lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise InvalidConfig(f"unknown optimizer {kind!r}")
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self.kind, self.lr = kind, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        self.t += 1
        if self.kind == "sgd":
            for p, g in zip(self.params, grads):
                p -= self.lr * g
            return
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
