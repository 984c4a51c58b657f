"""Small dense networks with hand-written backprop, float64 throughout.

Kept deliberately simple: SiLU hidden layers (smooth, so finite-difference
checks are well-posed), linear output, Glorot-uniform init, Adam. The
analytic gradients are cross-checked against central finite differences in
the test suite.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class MLP:
    """Fully-connected SiLU network; parameters alternate (W, b) per layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray):
        """Returns (output, cache of layer inputs and pre-activations)."""
        inputs = [x]
        preacts = []
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            if layer < self.n_layers - 1:
                preacts.append(z)
                h = z * _sigmoid(z)  # SiLU
            else:
                h = z
            inputs.append(h)
        return h, (inputs, preacts)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss w.r.t. params, given d(loss)/d(output)."""
        inputs, preacts = cache
        grads: list[np.ndarray] = [None] * len(self.params)
        delta = grad_out
        for layer in reversed(range(self.n_layers)):
            h_in = inputs[layer]
            if layer < self.n_layers - 1:
                z = preacts[layer]
                s = _sigmoid(z)
                delta = delta * (s * (1.0 + z * (1.0 - s)))  # SiLU'
            grads[2 * layer] = h_in.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ self.params[2 * layer].T
        return grads

    # -- flat views for persistence and finite-difference checks ------------
    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[offset:offset + p.size].reshape(p.shape).copy()
            offset += p.size
        if offset != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def load_params(self, params: list[np.ndarray]) -> None:
        if len(params) != len(self.params):
            raise ValueError("parameter list length mismatch")
        self.params = [np.asarray(p, dtype=np.float64).copy() for p in params]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Sinusoidal embedding of integer diffusion timesteps, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.shape[0], 1))], axis=1)
    return emb
