"""Minimal dense network: forward, exact backprop, Adam.

Everything runs in float64; gradient checks against finite differences
need the extra precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("layer weight/bias shapes inconsistent")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ShapeError("adjacent layer widths do not chain")

    @property
    def input_width(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_width(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out


def make_net(widths: list[int], seed: int = 0,
             hidden_activation: str = "relu") -> DenseNet:
    """He-initialized MLP; the last layer is linear."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (nin, nout) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / nin), size=(nout, nin))
        b = np.zeros(nout)
        act = hidden_activation if i < len(widths) - 2 else "identity"
        layers.append(Layer(w, b, act))
    return DenseNet(layers)


def forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_width:
        raise ShapeError(
            f"batch width {batch.shape} != net input {net.input_width}")
    h = batch
    for layer in net.layers:
        h = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def forward_cached(net: DenseNet, batch: np.ndarray
                   ) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass keeping (input, pre-activation) per layer for backprop."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_width:
        raise ShapeError(
            f"batch width {batch.shape} != net input {net.input_width}")
    h = batch
    cache = []
    for layer in net.layers:
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def backward(net: DenseNet, cache: list[tuple[np.ndarray, np.ndarray]],
             loss_gradient: np.ndarray) -> list[np.ndarray]:
    """Exact reverse-mode gradients; returns [dW0, db0, dW1, db1, ...]."""
    grad = np.asarray(loss_gradient, dtype=np.float64)
    if grad.shape[1] != net.output_width:
        raise ShapeError("loss gradient width does not match net output")
    grads: list[np.ndarray] = []
    for layer, (inp, z) in zip(reversed(net.layers), reversed(cache)):
        if layer.activation == "relu":
            grad = grad * (z > 0)
        dw = grad.T @ inp
        db = grad.sum(axis=0)
        grads.extend([db, dw])
        grad = grad @ layer.weight
    grads.reverse()
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> None:
    """In-place bias-corrected Adam update on `params` and `state`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError("parameter/gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def save_net(net: DenseNet) -> dict:
    """Checkpoint fragment: shapes, activations, row-major parameters."""
    return {
        "widths": [net.input_width] + [l.weight.shape[0] for l in net.layers],
        "activations": [l.activation for l in net.layers],
        "params": [p.copy() for p in net.parameters()],
    }


def load_net(data: dict) -> DenseNet:
    widths = data["widths"]
    params = data["params"]
    layers = []
    for i, act in enumerate(data["activations"]):
        w = np.asarray(params[2 * i], dtype=np.float64)
        b = np.asarray(params[2 * i + 1], dtype=np.float64)
        if w.shape != (widths[i + 1], widths[i]):
            raise ShapeError("checkpoint shape mismatch")
        layers.append(Layer(w, b, act))
    return DenseNet(layers)
