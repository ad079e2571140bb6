"""Small fully connected network with hand-written backprop and Adam."""

from __future__ import annotations

import numpy as np


class Mlp:
    """ReLU hidden layers; output activation ``"tanh"`` or ``"linear"``.

    Weights are stored as ``W[l]`` of shape (fan_in, fan_out) so a batch
    ``x @ W + b`` maps rows to rows.
    """

    def __init__(self, sizes, output: str = "tanh", rng=None, final_scale: float = 3e-3):
        if output not in ("tanh", "linear"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.output = output
        rng = np.random.default_rng() if rng is None else rng
        self.W, self.b = [], []
        for l, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = l == len(self.sizes) - 2
            bound = final_scale if last else 1.0 / np.sqrt(fan_in)
            self.W.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.b.append(rng.uniform(-bound, bound, fan_out))

    @property
    def params(self) -> list:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def forward(self, x, cache: bool = False):
        h = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [h]
        n = len(self.W)
        for l in range(n):
            z = h @ self.W[l] + self.b[l]
            if l < n - 1:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.output == "tanh" else z
            acts.append(h)
        out = h[0] if np.ndim(x) == 1 else h
        return (out, acts) if cache else out

    __call__ = forward

    def backward(self, acts, grad_out):
        """Return (parameter gradients in ``params`` order, input gradient)."""
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        n = len(self.W)
        grads = [None] * (2 * n)
        for l in reversed(range(n)):
            out = acts[l + 1]
            if l == n - 1:
                if self.output == "tanh":
                    g = g * (1.0 - out ** 2)
            else:
                g = g * (out > 0)
            grads[2 * l] = acts[l].T @ g
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.W[l].T
        return grads, g

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.output = self.output
        other.W = [w.copy() for w in self.W]
        other.b = [b.copy() for b in self.b]
        return other

    def soft_update_from(self, source: "Mlp", tau: float) -> None:
        for mine, theirs in zip(self.params, source.params):
            mine *= 1.0 - tau
            mine += tau * theirs

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "output": self.output,
            "W": [w.ravel().tolist() for w in self.W],
            "b": [b.tolist() for b in self.b],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        net = object.__new__(cls)
        net.sizes = [int(s) for s in data["sizes"]]
        net.output = data["output"]
        shapes = list(zip(net.sizes[:-1], net.sizes[1:]))
        net.W = [np.array(w, dtype=float).reshape(s) for w, s in zip(data["W"], shapes)]
        net.b = [np.array(b, dtype=float) for b in data["b"]]
        return net


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        """Descend along ``grads`` (pass negated gradients to ascend)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
