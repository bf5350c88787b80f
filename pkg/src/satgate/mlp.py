"""Minimal dense network with tanh hidden layers and analytic backprop."""

from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected net; linear output layer, tanh elsewhere.

    The output layer starts at zero so a fresh policy is uniform and a fresh
    value head predicts zero, which keeps early updates well conditioned.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None,
                 init: bool = True):
        self.sizes = list(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.weights = []
        self.biases = []
        if not init:
            return
        if rng is None:
            rng = np.random.default_rng(0)
        last = len(self.sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            if i == last:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray):
        """Returns (output, cache); accepts a single row or a batch."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < len(self.weights) - 1:
                z = np.tanh(z)
            cache.append(z)
            h = z
        return h, cache

    def backward(self, cache, d_out: np.ndarray):
        """Gradients of a scalar loss given d loss / d output."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = np.atleast_2d(d_out)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = cache[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - cache[i] ** 2)
        return grads_w, grads_b

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, init=False)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, theta: np.ndarray) -> None:
        offset = 0
        for arr in self.weights + self.biases:
            arr[...] = theta[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size
        if offset != theta.size:
            raise ValueError("parameter vector size mismatch")

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.weights + self.biases)


class Adam:
    """Standard Adam on a (weights, biases) gradient pair structure."""

    def __init__(self, net: Mlp, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in net.weights + net.biases]
        self.v = [np.zeros_like(a) for a in net.weights + net.biases]

    def step(self, net: Mlp, grads_w, grads_b, lr: float) -> None:
        self.t += 1
        params = net.weights + net.biases
        grads = list(grads_w) + list(grads_b)
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def copy(self) -> "Adam":
        other = Adam.__new__(Adam)
        other.beta1, other.beta2, other.eps = self.beta1, self.beta2, self.eps
        other.t = self.t
        other.m = [a.copy() for a in self.m]
        other.v = [a.copy() for a in self.v]
        return other
