"""Small dense networks in float64 with hand-written backprop and Adam.

Shared by the Laplacian embedding, the option Q-nets and the high-level
relocation Q-net.  Everything operates on batches: ``x`` is ``(n, in)``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class DenseNet:
    """ReLU hidden layers, identity output.

    Parameters
    ----------
    layer_sizes : sequence of int
        ``[n_in, h1, ..., n_out]``.
    rng : numpy Generator or int, optional
        Seeds the uniform fan-in/fan-out initialisation.
    """

    def __init__(self, layer_sizes, rng=None):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = layer_sizes
        rng = np.random.default_rng(rng)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x, return_cache=False):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.n_in:
            raise ValueError(f"expected {self.n_in} input features, got {x.shape[1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        out = h[0] if squeeze else h
        if return_cache:
            return out, acts
        return out

    __call__ = forward

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Parameter gradients given cached activations and dLoss/dOutput."""
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def input_gradient(self, acts, grad_out) -> np.ndarray:
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        return g

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def load_params_from(self, other: "DenseNet"):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "layer_sizes": self.layer_sizes,
            # float.hex keeps every bit
            "params": [[float(v).hex() for v in p.ravel()] for p in self.params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        net = cls(d["layer_sizes"], rng=0)
        for p, flat in zip(net.params(), d["params"]):
            p[...] = np.array([float.fromhex(v) for v in flat]).reshape(p.shape)
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DenseNet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, DenseNet) or self.layer_sizes != other.layer_sizes:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def hard_copy(src: DenseNet) -> DenseNet:
    return src.copy()


def mse_loss(pred, target, mask=None):
    """Masked mean squared error and its gradient w.r.t. ``pred``.

    The mean runs over the batch only, summing over unmasked outputs, so a
    one-hot mask gives the usual per-sample squared TD error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    if mask is not None:
        diff = diff * mask
    n = pred.shape[0] if pred.ndim > 1 else 1
    loss = float((diff ** 2).sum() / n)
    return loss, 2.0 * diff / n


def backward(net: DenseNet, x, target, mask=None):
    """Masked-MSE loss and exact gradients for every parameter of ``net``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty batch")
    pred, acts = net.forward(x, return_cache=True)
    if pred.ndim == 1:
        pred = pred[None, :]
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(pred.shape)
    loss, g = mse_loss(pred, target, mask)
    return loss, net.backward(acts, g)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: DenseNet, grads):
        params = net.params()
        if len(grads) != len(params):
            raise ValueError("gradient list does not match parameters")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return net


def step(net: DenseNet, grads, opt: Adam) -> DenseNet:
    return opt.step(net, grads)
