"""Dense and LSTM layers over the gradient tape.

Weights are initialized uniformly in [-s, s] with s = 1/sqrt(fan_in).
The LSTM supports two gate conventions: ``standard`` (forget/input/output
sigmoid, candidate tanh) and ``paper`` (candidate sigmoid, output tanh),
selectable per call so the swapped form stays available for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, UsageError
from .tape import Node, Tape, add, concat, linear, mul, relu, sigmoid, tanh

GATE_VARIANTS = ("standard", "paper")


@dataclass
class DenseParams:
    """Fully connected layer: activation(W x + b)."""

    W: Node
    b: Node
    activation: str = "relu"  # relu | identity

    @classmethod
    def init(cls, out_dim: int, in_dim: int, rng: np.random.Generator,
             activation: str = "relu") -> "DenseParams":
        s = 1.0 / np.sqrt(in_dim)
        W = Node(rng.uniform(-s, s, size=(out_dim, in_dim)))
        # relu layers start with a small positive bias: an upstream layer
        # saturating to exact zero would otherwise park every preactivation
        # exactly on the kink (dead units, ill-defined gradient checks)
        b = Node(np.full(out_dim, 0.01) if activation == "relu" else np.zeros(out_dim))
        return cls(W=W, b=b, activation=activation)

    @property
    def out_dim(self) -> int:
        return self.W.value.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.value.shape[1]


@dataclass
class LstmParams:
    """One LSTM cell: four gate matrices of shape hidden x (hidden + input)."""

    W_f: Node
    W_i: Node
    W_g: Node
    W_o: Node
    b_f: Node | None = None
    b_i: Node | None = None
    b_g: Node | None = None
    b_o: Node | None = None

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: np.random.Generator,
             bias: bool = True, forget_bias: float = 1.0) -> "LstmParams":
        s = 1.0 / np.sqrt(hidden + input_dim)
        def w():
            return Node(rng.uniform(-s, s, size=(hidden, hidden + input_dim)))
        p = cls(W_f=w(), W_i=w(), W_g=w(), W_o=w())
        if bias:
            p.b_f = Node(np.full(hidden, forget_bias))
            p.b_i = Node(np.zeros(hidden))
            p.b_g = Node(np.zeros(hidden))
            p.b_o = Node(np.zeros(hidden))
        return p

    @property
    def hidden(self) -> int:
        return self.W_f.value.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.value.shape[1] - self.W_f.value.shape[0]


def dense_forward(x: Node, p: DenseParams, tape: Tape | None = None) -> Node:
    """activation(W x + b); records on the tape when one is given."""
    if x.value.shape != (p.in_dim,):
        raise DimensionError(f"dense_forward: input {x.value.shape}, expected ({p.in_dim},)")
    y = linear(p.W, x, p.b, tape)
    if p.activation == "relu":
        return relu(y, tape)
    if p.activation == "identity":
        return y
    raise UsageError(f"unknown activation {p.activation!r}")


def lstm_step(x: Node, h_prev: Node, c_prev: Node, p: LstmParams,
              tape: Tape | None = None, variant: str = "standard") -> tuple[Node, Node]:
    """One LSTM update from concatenated [h_prev; x].

    Returns (h, c) with c = f*c_prev + i*g and h = o*tanh(c).
    """
    if variant not in GATE_VARIANTS:
        raise UsageError(f"unknown gate variant {variant!r}")
    hid = p.hidden
    if h_prev.value.shape != (hid,) or c_prev.value.shape != (hid,):
        raise DimensionError(
            f"lstm_step: state shapes {h_prev.value.shape}/{c_prev.value.shape}, expected ({hid},)")
    if x.value.shape != (p.input_dim,):
        raise DimensionError(f"lstm_step: input {x.value.shape}, expected ({p.input_dim},)")

    z = concat([h_prev, x], tape)
    f = sigmoid(linear(p.W_f, z, p.b_f, tape), tape)
    i = sigmoid(linear(p.W_i, z, p.b_i, tape), tape)
    if variant == "standard":
        g = tanh(linear(p.W_g, z, p.b_g, tape), tape)
        o = sigmoid(linear(p.W_o, z, p.b_o, tape), tape)
    else:  # literal printed form: candidate sigmoid, output gate tanh
        g = sigmoid(linear(p.W_g, z, p.b_g, tape), tape)
        o = tanh(linear(p.W_o, z, p.b_o, tape), tape)
    c = add(mul(f, c_prev, tape), mul(i, g, tape), tape)
    h = mul(o, tanh(c, tape), tape)
    return h, c
