"""A small numpy multilayer perceptron with hand-written reverse mode and Adam.

Inputs are batches ``(B, in_dim)``.  The last layer can end in a softmax
applied independently to consecutive groups of ``softmax_group`` outputs,
which is how the categorical heads (one group of atom probabilities per
action) and policy heads are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheMismatch, ShapeMismatch

__all__ = [
    "MLP",
    "forward",
    "backward",
    "grad_check",
    "AdamState",
    "adam_step",
    "to_text",
    "from_text",
]

_ACTIVATIONS = ("identity", "tanh", "relu")


class MLP:
    def __init__(self, sizes, activations=None, softmax_group: int | None = None, rng=None):
        sizes = [int(n) for n in sizes]
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if activations is None:
            activations = ["tanh"] * (len(sizes) - 2) + ["identity"]
        elif isinstance(activations, str):
            activations = [activations] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1 or any(a not in _ACTIVATIONS for a in activations):
            raise ValueError(f"need {len(sizes) - 1} activations from {_ACTIVATIONS}")
        if softmax_group is not None and sizes[-1] % softmax_group:
            raise ValueError("output size must be a multiple of the softmax group size")
        self.sizes = sizes
        self.activations = list(activations)
        self.softmax_group = softmax_group
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.softmax_group = self.softmax_group
        other.params = [p.copy() for p in self.params]
        return other

    def copy_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


def _activate(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind, z, a, g):
    if kind == "tanh":
        return g * (1.0 - a * a)
    if kind == "relu":
        return g * (z > 0)
    return g


def forward(net: MLP, x):
    """Returns ``(output, cache)``; ``cache`` feeds `backward`."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.sizes[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} features, network expects {net.sizes[0]}")
    acts, pres = [x], []
    h = x
    for layer, kind in enumerate(net.activations):
        z = h @ net.params[2 * layer] + net.params[2 * layer + 1]
        h = _activate(kind, z)
        pres.append(z)
        acts.append(h)
    out = h
    if net.softmax_group is not None:
        g = out.reshape(out.shape[0], -1, net.softmax_group)
        g = np.exp(g - g.max(axis=2, keepdims=True))
        out = (g / g.sum(axis=2, keepdims=True)).reshape(out.shape)
    return out, {"net": id(net), "acts": acts, "pres": pres, "out": out}


def backward(net: MLP, cache, grad_out):
    """Parameter gradients given dLoss/dOutput (same shape as the output)."""
    if cache.get("net") != id(net) or len(cache["pres"]) != len(net.activations):
        raise CacheMismatch("cache was not produced by this network")
    g = np.asarray(grad_out, dtype=float)
    out = cache["out"]
    if g.shape != out.shape:
        raise ShapeMismatch(f"output gradient has shape {g.shape}, output is {out.shape}")
    if net.softmax_group is not None:
        k = net.softmax_group
        p = out.reshape(out.shape[0], -1, k)
        gg = g.reshape(p.shape)
        g = (p * (gg - np.sum(p * gg, axis=2, keepdims=True))).reshape(out.shape)
    grads = [None] * len(net.params)
    for layer in range(len(net.activations) - 1, -1, -1):
        g = _activation_grad(net.activations[layer], cache["pres"][layer], cache["acts"][layer + 1], g)
        grads[2 * layer] = cache["acts"][layer].T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        if layer:
            g = g @ net.params[2 * layer].T
    return grads


def grad_check(net: MLP, loss, x, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss(output)`` must return ``(value, dvalue/doutput)``.
    """
    out, cache = forward(net, x)
    analytic = np.concatenate([g.ravel() for g in backward(net, cache, loss(out)[1])])
    flat = net.get_flat()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        net.set_flat(flat)
        up = loss(forward(net, x)[0])[0]
        flat[i] = old - h
        net.set_flat(flat)
        down = loss(forward(net, x)[0])[0]
        flat[i] = old
        numeric[i] = (up - down) / (2 * h)
    net.set_flat(flat)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max())


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def to_text(net: MLP) -> str:
    head = "mlp sizes " + " ".join(map(str, net.sizes))
    head += " act " + " ".join(net.activations)
    head += f" softmax {net.softmax_group or 0}"
    return head + "\n" + " ".join(format(float(x), ".17g") for x in net.get_flat()) + "\n"


def from_text(text: str) -> MLP:
    head, body = text.strip().split("\n", 1)
    tokens = head.split()
    i_act, i_soft = tokens.index("act"), tokens.index("softmax")
    sizes = [int(t) for t in tokens[2:i_act]]
    acts = tokens[i_act + 1:i_soft]
    group = int(tokens[i_soft + 1]) or None
    net = MLP(sizes, acts, group)
    net.set_flat([float(v) for v in body.split()])
    return net
