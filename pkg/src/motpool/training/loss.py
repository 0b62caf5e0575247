"""Focal-weighted binary cross entropy over M x N proposal batches.

Per example: weight * (-log p) for positives and weight * (-log(1-p))
for negatives, with weight beta_pos*(1-p)^2 resp. beta_neg*p^2.  The
batch value is the plain mean; probabilities are clamped at 1e-12
because the log is undefined at {0, 1}.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from ..nn import Node, Tape, add_n, clip, constant, log, mul, scale, square, sub

P_CLAMP = 1e-12


def batch_loss(p: np.ndarray, y: np.ndarray, beta_pos: float = 4.0,
               beta_neg: float = 1.0, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """(mean loss, per-example losses) for flat probability/label arrays.

    ``gamma`` is the focal exponent; gamma=0 with unit betas reduces to
    plain mean binary cross entropy.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise NumericError(f"scores {p.shape} vs labels {y.shape}")
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite score in batch")
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    pos = beta_pos * (1.0 - pc) ** gamma * (-np.log(pc))
    neg = beta_neg * pc ** gamma * (-np.log(1.0 - pc))
    per_example = np.where(y == 1.0, pos, neg)
    return float(per_example.mean()), per_example


def example_loss_node(p: Node, positive: bool, beta_pos: float, beta_neg: float,
                      tape: Tape | None) -> Node:
    """One focal-weighted term as a graph node (weight is differentiated)."""
    one = constant(np.ones(()))
    pc = clip(p, P_CLAMP, 1.0 - P_CLAMP, tape)
    if positive:
        w = square(sub(one, pc, tape), tape)
        ce = scale(log(pc, tape), -1.0, tape)
        return scale(mul(w, ce, tape), beta_pos, tape)
    w = square(pc, tape)
    ce = scale(log(sub(one, pc, tape), tape), -1.0, tape)
    return scale(mul(w, ce, tape), beta_neg, tape)


def batch_loss_nodes(prob_nodes: list[Node], labels: np.ndarray,
                     beta_pos: float, beta_neg: float, tape: Tape | None
                     ) -> tuple[Node, np.ndarray, list[Node]]:
    """(mean-loss node, per-example values, per-example term nodes)."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(prob_nodes) != labels.shape[0]:
        raise NumericError("score/label count mismatch")
    terms = [example_loss_node(p, bool(yl == 1.0), beta_pos, beta_neg, tape)
             for p, yl in zip(prob_nodes, labels)]
    values = np.array([float(t.value) for t in terms])
    mean = scale(add_n(terms, tape), 1.0 / len(terms), tape)
    return mean, values, terms


def mine_hard(per_example: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest losses (all when the batch is smaller).

    Ties break toward the lower index.
    """
    if k < 1:
        raise NumericError(f"k must be >= 1, got {k}")
    per_example = np.asarray(per_example).reshape(-1)
    order = sorted(range(len(per_example)), key=lambda i: (-per_example[i], i))
    return sorted(order[:k])
