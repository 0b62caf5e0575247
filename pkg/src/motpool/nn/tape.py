"""Reverse-mode gradient tape over float64 numpy arrays.

Forward helpers build values out of a small set of primitives; when a
``Tape`` is supplied, each primitive records one backward closure.
``Tape.backward`` replays the closures in exact reverse forward order,
accumulating gradients additively at fan-out nodes (a value consumed
twice receives the sum of both downstream contributions).

This is deliberately not a general autodiff system: only the primitives
the track classifier needs exist, everything is float64, and shapes are
validated eagerly so a dimension mistake fails at the op that made it.
A tape has a single writer; tape-free forwards over frozen parameters
are pure and safe to run concurrently.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError, NumericError, StateError

__all__ = [
    "Node",
    "Tape",
    "constant",
    "zeros",
    "add",
    "sub",
    "mul",
    "scale",
    "linear",
    "matvec",
    "reshape",
    "concat",
    "relu",
    "sigmoid",
    "tanh",
    "elemwise_max",
    "softmax",
    "pick",
    "log",
    "square",
    "clip",
    "add_n",
    "dropout",
    "clear_grads",
]


class Node:
    """A float64 array value in the computation graph.

    ``grad`` is populated lazily during ``Tape.backward``; it stays None
    for nodes the loss never reached (their gradient is zero by
    convention).
    """

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def detach(self) -> "Node":
        """Copy the value into a fresh node with no graph history."""
        return Node(self.value.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Node(shape={self.value.shape})"


class Tape:
    """Ordered record of forward operations, replayable backward once."""

    def __init__(self):
        self._entries: list = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, backward_fn) -> None:
        self._entries.append(backward_fn)

    def backward(self, loss: Node) -> None:
        """Seed d(loss)/d(loss)=1 and replay all closures in reverse."""
        if self._consumed:
            raise StateError("tape already used; build a new tape per forward pass")
        if not self._entries:
            raise StateError("backward called before any forward op was recorded")
        if loss.value.shape != ():
            raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.isfinite(loss.value):
            raise NumericError("loss is not finite")
        loss.grad = np.ones((), dtype=np.float64)
        for fn in reversed(self._entries):
            fn()
        self._consumed = True


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad = node.grad + g


def clear_grads(nodes) -> None:
    for n in nodes:
        n.grad = None


def constant(value) -> Node:
    return Node(value)


def zeros(shape) -> Node:
    return Node(np.zeros(shape, dtype=np.float64))


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def add(a: Node, b: Node, tape: Tape | None = None) -> Node:
    _check_same_shape(a, b, "add")
    out = Node(a.value + b.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        tape.record(bwd)
    return out


def sub(a: Node, b: Node, tape: Tape | None = None) -> Node:
    _check_same_shape(a, b, "sub")
    out = Node(a.value - b.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, -out.grad)
        tape.record(bwd)
    return out


def mul(a: Node, b: Node, tape: Tape | None = None) -> Node:
    _check_same_shape(a, b, "mul")
    out = Node(a.value * b.value)
    if tape is not None:
        av, bv = a.value, b.value
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * bv)
            _accum(b, out.grad * av)
        tape.record(bwd)
    return out


def scale(a: Node, c: float, tape: Tape | None = None) -> Node:
    out = Node(a.value * c)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * c)
        tape.record(bwd)
    return out


def matvec(W: Node, x: Node, tape: Tape | None = None) -> Node:
    if W.value.ndim != 2 or x.value.ndim != 1 or W.value.shape[1] != x.value.shape[0]:
        raise DimensionError(f"matvec: {W.value.shape} @ {x.value.shape}")
    out = Node(W.value @ x.value)
    if tape is not None:
        xv, Wv = x.value, W.value
        def bwd():
            if out.grad is None:
                return
            _accum(W, np.outer(out.grad, xv))
            _accum(x, Wv.T @ out.grad)
        tape.record(bwd)
    return out


def linear(W: Node, x: Node, b: Node | None = None, tape: Tape | None = None) -> Node:
    """W @ x (+ b); the workhorse behind every dense layer and gate."""
    if W.value.ndim != 2 or x.value.ndim != 1 or W.value.shape[1] != x.value.shape[0]:
        raise DimensionError(f"linear: {W.value.shape} @ {x.value.shape}")
    if b is not None and b.value.shape != (W.value.shape[0],):
        raise DimensionError(f"linear: bias {b.value.shape} vs {W.value.shape[0]} rows")
    y = W.value @ x.value
    if b is not None:
        y = y + b.value
    out = Node(y)
    if tape is not None:
        xv, Wv = x.value, W.value
        def bwd():
            if out.grad is None:
                return
            _accum(W, np.outer(out.grad, xv))
            _accum(x, Wv.T @ out.grad)
            if b is not None:
                _accum(b, out.grad)
        tape.record(bwd)
    return out


def reshape(a: Node, shape, tape: Tape | None = None) -> Node:
    out = Node(a.value.reshape(shape))
    if tape is not None:
        orig = a.value.shape
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad.reshape(orig))
        tape.record(bwd)
    return out


def concat(parts: Sequence[Node], tape: Tape | None = None) -> Node:
    if not parts:
        raise DimensionError("concat of empty list")
    for p in parts:
        if p.value.ndim != 1:
            raise DimensionError("concat expects 1-D parts")
    out = Node(np.concatenate([p.value for p in parts]))
    if tape is not None:
        sizes = [p.value.shape[0] for p in parts]
        def bwd():
            if out.grad is None:
                return
            off = 0
            for p, n in zip(parts, sizes):
                _accum(p, out.grad[off:off + n])
                off += n
        tape.record(bwd)
    return out


def relu(a: Node, tape: Tape | None = None) -> Node:
    out = Node(np.maximum(a.value, 0.0))
    if tape is not None:
        mask = a.value > 0.0
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * mask)
        tape.record(bwd)
    return out


def sigmoid(a: Node, tape: Tape | None = None) -> Node:
    # Stable two-branch form; overflow-free for any finite input.
    v = a.value
    out_v = np.empty_like(v)
    pos = v >= 0
    out_v[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_v[~pos] = ev / (1.0 + ev)
    out = Node(out_v)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * out_v * (1.0 - out_v))
        tape.record(bwd)
    return out


def tanh(a: Node, tape: Tape | None = None) -> Node:
    out_v = np.tanh(a.value)
    out = Node(out_v)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * (1.0 - out_v * out_v))
        tape.record(bwd)
    return out


def elemwise_max(parts: Sequence[Node], tape: Tape | None = None) -> Node:
    """Coordinatewise max over same-shape vectors.

    The subgradient is routed to the first part attaining the max at
    each coordinate (ties have measure zero for continuous inputs).
    """
    if not parts:
        raise DimensionError("elemwise_max of empty list")
    shape = parts[0].value.shape
    for p in parts:
        if p.value.shape != shape:
            raise DimensionError("elemwise_max: ragged input shapes")
    stacked = np.stack([p.value for p in parts])
    out = Node(stacked.max(axis=0))
    if tape is not None:
        winner = stacked.argmax(axis=0)  # first max wins ties
        def bwd():
            if out.grad is None:
                return
            for k, p in enumerate(parts):
                mask = winner == k
                if mask.any():
                    _accum(p, out.grad * mask)
        tape.record(bwd)
    return out


def softmax(a: Node, tape: Tape | None = None) -> Node:
    if a.value.ndim != 1:
        raise DimensionError("softmax expects a 1-D vector")
    e = np.exp(a.value - a.value.max())
    y = e / e.sum()
    out = Node(y)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _accum(a, y * (g - np.dot(g, y)))
        tape.record(bwd)
    return out


def pick(a: Node, index: int, tape: Tape | None = None) -> Node:
    if a.value.ndim != 1 or not (0 <= index < a.value.shape[0]):
        raise DimensionError(f"pick: index {index} out of shape {a.value.shape}")
    out = Node(a.value[index])
    if tape is not None:
        n = a.value.shape[0]
        def bwd():
            if out.grad is None:
                return
            g = np.zeros(n)
            g[index] = out.grad
            _accum(a, g)
        tape.record(bwd)
    return out


def log(a: Node, tape: Tape | None = None) -> Node:
    if np.any(a.value <= 0.0):
        raise NumericError("log of non-positive value; clip first")
    out = Node(np.log(a.value))
    if tape is not None:
        av = a.value
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad / av)
        tape.record(bwd)
    return out


def square(a: Node, tape: Tape | None = None) -> Node:
    out = Node(a.value * a.value)
    if tape is not None:
        av = a.value
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * 2.0 * av)
        tape.record(bwd)
    return out


def clip(a: Node, lo: float, hi: float, tape: Tape | None = None) -> Node:
    out = Node(np.clip(a.value, lo, hi))
    if tape is not None:
        mask = (a.value > lo) & (a.value < hi)
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * mask)
        tape.record(bwd)
    return out


def add_n(parts: Sequence[Node], tape: Tape | None = None) -> Node:
    """Sum of same-shape nodes (used to average losses over a batch)."""
    if not parts:
        raise DimensionError("add_n of empty list")
    shape = parts[0].value.shape
    for p in parts:
        if p.value.shape != shape:
            raise DimensionError("add_n: mismatched shapes")
    out = Node(sum(p.value for p in parts))
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            for p in parts:
                _accum(p, out.grad)
        tape.record(bwd)
    return out


def dropout(a: Node, rate: float, rng: np.random.Generator, tape: Tape | None = None) -> Node:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return a
    mask = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    out = Node(a.value * mask)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad * mask)
        tape.record(bwd)
    return out
