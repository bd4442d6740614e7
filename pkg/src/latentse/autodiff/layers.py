"""Trainable layers: fully-connected and gated-recurrent.

Weights are initialized with uniform fan-based scaling and zero biases
from a caller-supplied Generator, so a fixed seed reproduces parameters
bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import engine, kernels
from .engine import Tensor

ACTIVATIONS = {
    "linear": None,
    "relu": engine.relu,
    "sigmoid": engine.sigmoid,
    "tanh": engine.tanh,
}


def _uniform_init(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


class DenseLayer:
    """Affine map with an optional pointwise activation.

    Weights are stored (out_dim, in_dim); the forward pass is
    act(x @ W.T + b) over the last axis of x.
    """

    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear",
                 *, rng: np.random.Generator, dtype=np.float32):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weights = Tensor(
            _uniform_init(rng, (out_dim, in_dim), in_dim, out_dim, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        out = engine.matmul(x, engine.transpose(self.weights)) + self.bias
        act = ACTIVATIONS[self.activation]
        return act(out) if act is not None else out

    def parameters(self):
        return [self.weights, self.bias]

    def named_parameters(self):
        return [("weights", self.weights), ("bias", self.bias)]


class GruLayer:
    """Single gated-recurrent layer over time-major sequences.

    Each gate holds one (hidden, in_dim + hidden) weight block applied to
    the concatenation of the frame input and the previous hidden state;
    the reset gate scales the previous state inside the candidate block.
    """

    def __init__(self, in_dim: int, hidden: int, *, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_dim = in_dim
        self.hidden = hidden
        shape = (hidden, in_dim + hidden)
        fan_in, fan_out = in_dim + hidden, hidden
        self.w_update = Tensor(_uniform_init(rng, shape, fan_in, fan_out, dtype), requires_grad=True)
        self.w_reset = Tensor(_uniform_init(rng, shape, fan_in, fan_out, dtype), requires_grad=True)
        self.w_cand = Tensor(_uniform_init(rng, shape, fan_in, fan_out, dtype), requires_grad=True)
        self.b_update = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.b_reset = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.b_cand = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        if x.data.ndim != 3 or x.shape[-1] != self.in_dim:
            raise ValueError(
                f"expected input (T, B, {self.in_dim}), got {x.shape}"
            )
        if h0 is None:
            h0 = Tensor(np.zeros((x.shape[1], self.hidden), dtype=x.dtype))
        elif h0.shape != (x.shape[1], self.hidden):
            raise ValueError(f"expected h0 (B, {self.hidden}), got {h0.shape}")
        return gru_sequence(x, h0, self)

    def parameters(self):
        return [self.w_update, self.w_reset, self.w_cand,
                self.b_update, self.b_reset, self.b_cand]

    def named_parameters(self):
        return [
            ("w_update", self.w_update), ("w_reset", self.w_reset),
            ("w_cand", self.w_cand), ("b_update", self.b_update),
            ("b_reset", self.b_reset), ("b_cand", self.b_cand),
        ]


def gru_sequence(x: Tensor, h0: Tensor, layer: GruLayer) -> Tensor:
    """GRU over a whole sequence as one taped node.

    The backward rule runs backpropagation through time inside the
    selected kernel backend, so gradients reach every step's parameters
    exactly as if each step had been recorded separately.
    """
    hs, cache = kernels.gru_forward(
        x.data, h0.data,
        layer.w_update.data, layer.w_reset.data, layer.w_cand.data,
        layer.b_update.data, layer.b_reset.data, layer.b_cand.data,
    )
    parents = (x, h0, layer.w_update, layer.w_reset, layer.w_cand,
               layer.b_update, layer.b_reset, layer.b_cand)

    def bw(g):
        grads = kernels.gru_backward(g, cache)
        for parent, grad in zip(parents, grads):
            engine._accumulate(parent, grad)

    return engine._node(hs, parents, bw)
