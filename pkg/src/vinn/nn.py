"""Small numpy MLPs with hand-written backprop, plus Adam and plain SGD."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MLPParams:
    """ReLU hidden layers, linear output. ``weights[i]`` has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "MLPParams":
        """Same structure, new values (in ``arrays()`` order)."""
        arrays = list(arrays)
        return MLPParams(arrays[0::2], arrays[1::2])

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MLPParams":
        return MLPParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> "MLPParams":
        return MLPParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, MLPParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def init_mlp(dims, rng: np.random.Generator) -> MLPParams:
    """He-uniform weights, zero biases."""
    if len(dims) < 2:
        raise ValueError(f"an MLP needs at least input and output widths, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def forward(p: MLPParams, x: np.ndarray, cache: bool = False):
    """Batch forward pass on ``x`` of shape (B, in). Returns output, or (output, cache)."""
    h = x
    acts = [h]
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w.T + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return (h, acts) if cache else h


def backward(p: MLPParams, acts: list[np.ndarray], grad_out: np.ndarray):
    """Backprop ``grad_out`` (dL/d output). Returns (param grads, dL/d input)."""
    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    g = grad_out
    for i in reversed(range(len(p.weights))):
        if i != len(p.weights) - 1:
            g = g * (acts[i + 1] > 0)
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        g = g @ p.weights[i]
    return MLPParams(gw, gb), g


@dataclass
class PatchParams:
    """Bias-free ReLU MLPs, one per coordinate group, each followed by L2
    normalization. A group whose input is all zero maps to exactly zero, so
    covering a patch removes its feature instead of distorting the others."""

    groups: tuple[tuple[int, ...], ...]
    weights: list[list[np.ndarray]]  # weights[g][layer], shape (out, in)

    @property
    def dims(self) -> list[int]:
        """Per-patch widths after the input: hidden..., feature width."""
        return [w.shape[0] for w in self.weights[0]]

    @property
    def obs_dim(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def embed_dim(self) -> int:
        return len(self.groups) * self.dims[-1]

    def arrays(self) -> list[np.ndarray]:
        return [w for ws in self.weights for w in ws]

    def with_arrays(self, arrays) -> "PatchParams":
        arrays = list(arrays)
        L = len(self.weights[0])
        return PatchParams(self.groups, [arrays[i * L:(i + 1) * L] for i in range(len(self.groups))])

    def copy(self) -> "PatchParams":
        return self.with_arrays(a.copy() for a in self.arrays())

    def astype(self, dtype) -> "PatchParams":
        return self.with_arrays(a.astype(dtype) for a in self.arrays())

    def zeros_like(self) -> "PatchParams":
        return self.with_arrays(np.zeros_like(a) for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, PatchParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return self.groups == other.groups and len(a) == len(b) and all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def init_patch(groups, dims, rng: np.random.Generator) -> PatchParams:
    """``dims`` are the per-patch widths after the input (hidden..., feature)."""
    groups = tuple(tuple(int(i) for i in g) for g in groups)
    weights = []
    for g in groups:
        widths = [len(g), *dims]
        weights.append([rng.uniform(-np.sqrt(6.0 / a), np.sqrt(6.0 / a), size=(b, a))
                        for a, b in zip(widths[:-1], widths[1:])])
    return PatchParams(groups, weights)


_NORM_EPS = 1e-12


def patch_forward(p: PatchParams, x: np.ndarray, cache: bool = False):
    outs, caches = [], []
    for g, ws in zip(p.groups, p.weights):
        h = x[:, list(g)]
        acts = [h]
        for i, w in enumerate(ws):
            h = h @ w.T
            if i < len(ws) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        n = np.linalg.norm(h, axis=1, keepdims=True)
        live = n > _NORM_EPS
        z = np.where(live, h / np.where(live, n, 1.0), 0.0)
        outs.append(z)
        caches.append((acts, z, n, live))
    out = np.concatenate(outs, axis=1)
    return (out, caches) if cache else out


def patch_backward(p: PatchParams, caches, grad_out: np.ndarray):
    """Parameter gradients only; the input gradient is never needed."""
    m = p.dims[-1]
    grads = []
    for j, (ws, (acts, z, n, live)) in enumerate(zip(p.weights, caches)):
        gz = grad_out[:, j * m:(j + 1) * m]
        g = np.where(live, (gz - z * np.sum(gz * z, axis=1, keepdims=True)) / np.where(live, n, 1.0), 0.0)
        gw = [None] * len(ws)
        for i in reversed(range(len(ws))):
            if i != len(ws) - 1:
                g = g * (acts[i + 1] > 0)
            gw[i] = g.T @ acts[i]
            g = g @ ws[i]
        grads.append(gw)
    return PatchParams(p.groups, grads)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params: MLPParams, grads: MLPParams) -> MLPParams:
        return params.with_arrays(a - self.lr * g for a, g in zip(params.arrays(), grads.arrays()))


class Adam:
    """Adam with per-parameter moments; one instance per parameter group."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def update(self, params: MLPParams, grads: MLPParams) -> MLPParams:
        if self.m is None:
            self.m = [np.zeros_like(a) for a in params.arrays()]
            self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        new = []
        for j, (a, g) in enumerate(zip(params.arrays(), grads.arrays())):
            self.m[j] = self.beta1 * self.m[j] + (1 - self.beta1) * g
            self.v[j] = self.beta2 * self.v[j] + (1 - self.beta2) * g * g
            new.append(a - self.lr * (self.m[j] / c1) / (np.sqrt(self.v[j] / c2) + self.eps))
        return params.with_arrays(new)


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
