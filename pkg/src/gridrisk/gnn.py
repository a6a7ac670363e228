"""Encoder / GraphSAGE / decoder network with hand-written backpropagation.

Layer stack (node-wise unless noted), ReLU after every layer but the last::

    enc1  D_I   -> 2 D_I
    enc2  2 D_I -> H                 H = 2 D_I (graph heads) or 4 D_I (node head)
    sage1 [h, mean_nbr(h)] 2H -> H
    sage2 [h, mean_nbr(h)] 2H -> H
    dec1  H     -> 2 T
    dec2  2 T   -> T                 (linear)
    pool  per-target mean over a node mask (graph heads only)

Arrays are batched as (B, n_nodes, features). All samples in a batch share the
same graph, so neighbour means are a single (n, n) row-normalised operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LAYERS = ("enc1", "enc2", "sage1", "sage2", "dec1", "dec2")
_SAGE = ("sage1", "sage2")


def neighbor_mean_operator(neighbors, n: int | None = None) -> np.ndarray:
    """Row-normalised adjacency; isolated nodes get an all-zero row (mean of nothing = 0)."""
    n = len(neighbors) if n is None else n
    P = np.zeros((n, n))
    for u, nb in enumerate(neighbors):
        if len(nb):
            P[u, list(nb)] = 1.0 / len(nb)
    return P


def layer_dims(d_in: int, steps: int, node_level: bool) -> dict[str, tuple[int, int]]:
    hidden = (4 if node_level else 2) * d_in
    return {
        "enc1": (d_in, 2 * d_in),
        "enc2": (2 * d_in, hidden),
        "sage1": (2 * hidden, hidden),
        "sage2": (2 * hidden, hidden),
        "dec1": (hidden, 2 * steps),
        "dec2": (2 * steps, steps),
    }


def init_params(dims: dict[str, tuple[int, int]], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases."""
    params = {}
    for name in LAYERS:
        fan_in, fan_out = dims[name]
        bound = math.sqrt(6.0 / fan_in)
        params[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    return params


def relu(x):
    return np.maximum(x, 0.0)


def sage_layer(h: np.ndarray, P: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """ReLU(W^T [h_u, mean_{v in N(u)} h_v] + b) for every node; h is (..., n, d)."""
    m = np.concatenate([h, np.einsum("ij,...jd->...id", P, h)], axis=-1)
    z = m @ W
    if b is not None:
        z = z + b
    return relu(z)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: dict = field(default_factory=dict)   # layer -> pre-activation
    inp: dict = field(default_factory=dict)   # layer -> layer input (concat for sage)
    node_out: np.ndarray | None = None
    out: np.ndarray | None = None


def forward(params: dict, x: np.ndarray, P: np.ndarray, pool: np.ndarray | None,
            cache: bool = False):
    """Run the network on x (B, n, D_I).

    Returns (B, K, T) when ``pool`` (K, n) is given, else node outputs (B, n, T).
    With ``cache=True`` also returns the :class:`ForwardCache` for :func:`backward`.
    """
    c = ForwardCache(x) if cache else None
    h = x
    for name in LAYERS:
        if name in _SAGE:
            inp = np.concatenate([h, np.einsum("ij,bjd->bid", P, h)], axis=-1)
        else:
            inp = h
        z = inp @ params[f"{name}.W"] + params[f"{name}.b"]
        if c is not None:
            c.inp[name] = inp
            c.pre[name] = z
        h = z if name == "dec2" else relu(z)
    out = h if pool is None else np.einsum("kj,bjt->bkt", pool, h)
    if c is not None:
        c.node_out, c.out = h, out
        return out, c
    return out


def loss_and_grad(pred, target, lower=None, upper=None, penalty_weight: float = 0.0):
    """MSE plus squared hinge penalty outside [lower, upper]; returns (loss, dloss/dpred)."""
    diff = pred - target
    n = diff.size
    loss = float(np.sum(diff * diff) / n)
    g = 2.0 * diff / n
    if penalty_weight:
        over = relu(pred - upper) if upper is not None else 0.0
        under = relu(lower - pred) if lower is not None else 0.0
        loss += penalty_weight * float(np.sum(over * over + under * under) / n)
        g = g + penalty_weight * 2.0 * (over - under) / n
    return loss, g


def loss(pred, target, lower=None, upper=None, penalty_weight: float = 0.0) -> float:
    return loss_and_grad(pred, target, lower, upper, penalty_weight)[0]


def backward(params: dict, cache: ForwardCache, grad_out: np.ndarray, P: np.ndarray,
             pool: np.ndarray | None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter given dloss/d(output)."""
    grads = {}
    if pool is not None:
        g = np.einsum("kj,bkt->bjt", pool, grad_out)
    else:
        g = grad_out
    for name in reversed(LAYERS):
        z = cache.pre[name]
        dz = g if name == "dec2" else g * (z > 0)
        inp = cache.inp[name]
        W = params[f"{name}.W"]
        grads[f"{name}.W"] = np.einsum("bni,bno->io", inp, dz)
        grads[f"{name}.b"] = dz.sum(axis=(0, 1))
        dinp = dz @ W.T
        if name in _SAGE:
            d = dinp.shape[-1] // 2
            g = dinp[..., :d] + np.einsum("ji,bjd->bid", P, dinp[..., d:])
        else:
            g = dinp
    return grads


class Adam:
    """Adam; ``weight_decay`` is decoupled (AdamW style) and skips biases."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.weight_decay and k.endswith(".W"):
                params[k] -= self.lr * self.weight_decay * params[k]
