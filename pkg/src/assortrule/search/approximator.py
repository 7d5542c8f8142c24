"""Hand-rolled feedforward approximator with analytic gradients.

A small tanh MLP over state features, used as the Q-function (and optional
policy head) in the RL backend. Tanh keeps the map smooth so central
finite differences verify the backward pass tightly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MLP:
    """Fully connected net: sizes = (in, hidden..., out), tanh hidden layers,
    linear output. Weights start uniform in +/- 1/sqrt(fan_in)."""

    def __init__(self, sizes, seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. every parameter."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.atleast_2d(grad_out)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                # activation at index i is tanh output of layer i-1..i
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads_w, grads_b

    # parameter vector helpers ------------------------------------------------

    def get_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            n = w.size
            self.weights[i] = vec[pos:pos + n].reshape(w.shape).copy()
            pos += n
            n = b.size
            self.biases[i] = vec[pos:pos + n].copy()
            pos += n
        if pos != vec.size:
            raise ValueError("parameter vector length mismatch")

    def copy(self) -> "MLP":
        clone = MLP(self.sizes, seed=0)
        clone.set_vector(self.get_vector())
        return clone

    def soft_update_from(self, source: "MLP", tau: float) -> None:
        """theta_target <- tau * theta_source + (1 - tau) * theta_target."""
        for i in range(len(self.weights)):
            self.weights[i] = tau * source.weights[i] + (1 - tau) * self.weights[i]
            self.biases[i] = tau * source.biases[i] + (1 - tau) * self.biases[i]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, net: MLP, grads_w, grads_b) -> None:
        flat = []
        for gw, gb in zip(grads_w, grads_b):
            flat.append(gw.ravel())
            flat.append(gb.ravel())
        g = np.concatenate(flat)
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        vec = net.get_vector() - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        net.set_vector(vec)


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked_parameters: int


def gradient_check(net: MLP, inputs: np.ndarray, seed: int = 0,
                   h: float = 1e-5, param_sample: int | None = None
                   ) -> GradCheckResult:
    """Analytic vs central-finite-difference gradients on a squared-error loss.

    Loss = 0.5 * ||f(x) - y||^2 with fixed random targets y. Checks every
    parameter unless ``param_sample`` limits to a deterministic subset.
    """
    rng = np.random.default_rng(seed)
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    out, acts = net.forward_cached(x)
    y = rng.normal(size=out.shape)
    grads_w, grads_b = net.backward(acts, out - y)
    analytic = np.concatenate([np.concatenate([gw.ravel(), gb.ravel()])
                               for gw, gb in zip(grads_w, grads_b)])
    vec = net.get_vector()
    idx = np.arange(vec.size)
    if param_sample is not None and param_sample < vec.size:
        idx = rng.choice(vec.size, size=param_sample, replace=False)
        idx.sort()

    def loss_at(v):
        net.set_vector(v)
        o = net.forward(x)
        return 0.5 * float(np.sum((o - y) ** 2))

    max_rel = 0.0
    try:
        for i in idx:
            vp = vec.copy()
            vp[i] += h
            lp = loss_at(vp)
            vp[i] = vec[i] - h
            lm = loss_at(vp)
            numeric = (lp - lm) / (2 * h)
            denom = max(abs(numeric) + abs(analytic[i]), 1e-8)
            max_rel = max(max_rel, abs(numeric - analytic[i]) / denom)
    finally:
        net.set_vector(vec)
    return GradCheckResult(max_rel, len(idx))
