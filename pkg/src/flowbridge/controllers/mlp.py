"""Small fully-connected networks with explicit forward/backward passes.

Hidden layers use tanh, the output layer is linear.  Weight matrices are
(fan_out, fan_in); a forward pass on a batch X of shape (N, fan_in)
computes tanh(X W1^T + b1) layer by layer.  The backward pass returns
gradients in the same structure as the parameters, given dL/dY.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_mlp(sizes: list[int], rng: np.random.Generator, out_scale: float = 1.0) -> MLP:
    """Gaussian init scaled by 1/sqrt(fan_in); the final layer additionally
    by out_scale (small for policy means, so early actions start near 0)."""
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = 1.0 / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            scale *= out_scale
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases)


def mlp_forward(mlp: MLP, x: np.ndarray):
    """Returns (output (N, out), cache for the backward pass)."""
    activations = [x]
    h = x
    for i in range(mlp.n_layers):
        z = h @ mlp.weights[i].T + mlp.biases[i]
        h = np.tanh(z) if i < mlp.n_layers - 1 else z
        activations.append(h)
    return h, activations


def mlp_backward(mlp: MLP, cache: list[np.ndarray], dy: np.ndarray) -> MLP:
    """Gradient of a scalar loss w.r.t. every parameter, given dL/dY."""
    d_weights = [None] * mlp.n_layers
    d_biases = [None] * mlp.n_layers
    grad = dy
    for i in reversed(range(mlp.n_layers)):
        if i < mlp.n_layers - 1:
            grad = grad * (1.0 - cache[i + 1] ** 2)  # through tanh
        d_weights[i] = grad.T @ cache[i]
        d_biases[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ mlp.weights[i]
    return MLP(d_weights, d_biases)


class Adam:
    """Standard Adam over a flat list of arrays, updates strictly in order."""

    def __init__(self, shapes, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
