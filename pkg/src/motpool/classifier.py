"""Track-proposal classifier with a pooled negative-evidence memory.

Each track keeps an LSTM whose hidden vector, reshaped into ``rows``
template rows, is matched against a detection feature by matrix-vector
product (the bilinear match).  The responses of all *other* live tracks
are compressed by coordinatewise max into a fixed-size negative vector,
concatenated with the target's own match vector, and classified into
match / no-match.  An optional motion branch (box-coordinate LSTM) joins
the appearance representation in the ``joint`` head.

Scoring never mutates track state; memories and motion states advance
only when the caller commits an assignment (``update_memory``,
``advance_motion``).  With frozen parameters scoring is pure, so
independent pairs may be evaluated concurrently; state advancement is
per-track exclusive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, UsageError
from .nn import (
    DenseParams, LstmParams, Node, Tape, concat, dense_forward, dropout,
    elemwise_max, lstm_step, matvec, pick, relu, reshape, softmax, zeros,
)

log = logging.getLogger(__name__)

_warned_box_range = False


@dataclass
class AppearanceMemory:
    """Per-track appearance LSTM state; h reshapes to (rows, key_dim)."""
    h: Node
    c: Node

    def detach(self) -> "AppearanceMemory":
        return AppearanceMemory(self.h.detach(), self.c.detach())


@dataclass
class MotionState:
    """Per-track motion LSTM state."""
    h: Node
    c: Node

    def detach(self) -> "MotionState":
        return MotionState(self.h.detach(), self.c.detach())


@dataclass
class PairScore:
    """Match probability for one track-detection pair (softmax pair sums to 1)."""
    p: float

    @property
    def p_nonmatch(self) -> float:
        return 1.0 - self.p


class TrackScorer:
    """Owns the classifier parameters and all forward operations.

    Parameters live in named ``Node`` objects so the same instance serves
    both inference (no tape) and training (tape recording).
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        config.validate()
        self.config = config
        self.ablate_negative_pool = False  # runtime switch: force m-minus to zero
        rng = np.random.default_rng(config.init_seed)
        c = config
        self.embed = DenseParams.init(c.key_dim, c.embed_dim, rng, "relu")
        self.app_lstm = LstmParams.init(c.hidden, c.key_dim, rng,
                                        bias=c.lstm_bias, forget_bias=c.forget_bias)
        head_in = c.pooled_width if c.head == "appearance_only" else c.joint_hidden
        self.head = DenseParams.init(2, head_in, rng, "identity")
        if c.head == "joint":
            self.motion_in = DenseParams.init(c.motion_hidden, 4, rng, "relu")
            self.motion_lstm = LstmParams.init(c.motion_hidden, c.motion_hidden, rng,
                                               bias=c.lstm_bias, forget_bias=c.forget_bias)
            self.motion_out = DenseParams.init(c.motion_feat, c.motion_hidden, rng, "relu")
            self.app_fc1 = DenseParams.init(c.pooled_width, c.pooled_width, rng, "relu")
            self.app_fc2 = DenseParams.init(c.pooled_width, c.pooled_width, rng, "relu")
            self.mot_fc1 = DenseParams.init(c.motion_feat, c.motion_feat, rng, "relu")
            self.mot_fc2 = DenseParams.init(c.motion_feat, c.motion_feat, rng, "relu")
            self.joint_fc = DenseParams.init(
                c.joint_hidden, c.pooled_width + c.motion_feat, rng, "relu")
        if params is not None:
            self.load_param_values(params)

    # --- parameter plumbing -------------------------------------------------

    def named_params(self) -> list[tuple[str, Node]]:
        out: list[tuple[str, Node]] = []

        def dense(prefix: str, p: DenseParams):
            out.append((f"{prefix}.W", p.W))
            out.append((f"{prefix}.b", p.b))

        def lstm(prefix: str, p: LstmParams):
            for gate in ("f", "i", "g", "o"):
                out.append((f"{prefix}.W_{gate}", getattr(p, f"W_{gate}")))
            if p.b_f is not None:
                for gate in ("f", "i", "g", "o"):
                    out.append((f"{prefix}.b_{gate}", getattr(p, f"b_{gate}")))

        dense("embed", self.embed)
        lstm("app_lstm", self.app_lstm)
        dense("head", self.head)
        if self.config.head == "joint":
            dense("motion_in", self.motion_in)
            lstm("motion_lstm", self.motion_lstm)
            dense("motion_out", self.motion_out)
            dense("app_fc1", self.app_fc1)
            dense("app_fc2", self.app_fc2)
            dense("mot_fc1", self.mot_fc1)
            dense("mot_fc2", self.mot_fc2)
            dense("joint_fc", self.joint_fc)
        return out

    def param_values(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.named_params()}

    def load_param_values(self, values: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = set(own) - set(values)
        if missing:
            raise DimensionError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, node in own.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != node.value.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {arr.shape}, "
                    f"model shape {node.value.shape}")
            node.value = arr.copy()

    # --- forward operations -------------------------------------------------

    def embed_detection(self, e, tape: Tape | None = None) -> Node:
        """Project a raw embedding into the shared matching space."""
        node = e if isinstance(e, Node) else Node(e)
        if node.value.shape != (self.config.embed_dim,):
            raise DimensionError(
                f"embedding length {node.value.shape} != ({self.config.embed_dim},)")
        return dense_forward(node, self.embed, tape)

    def bilinear_match(self, mem: AppearanceMemory, x: Node,
                       tape: Tape | None = None) -> Node:
        """relu(reshape(h) @ x): one response per memory template row."""
        c = self.config
        if x.value.shape != (c.key_dim,):
            raise DimensionError(f"match input {x.value.shape} != ({c.key_dim},)")
        H = reshape(mem.h, (c.rows, c.key_dim), tape)
        return relu(matvec(H, x, tape), tape)

    def pool_other_tracks(self, others: list[Node], tape: Tape | None = None) -> Node:
        """Columnwise max over the other tracks' match vectors.

        An empty list yields the zero vector: match responses are
        nonnegative, so zero is the neutral "no competitor" element.
        """
        if not others:
            return zeros(self.config.rows)
        for m in others:
            if m.value.shape != (self.config.rows,):
                raise DimensionError("pool_other_tracks: ragged match vectors")
        return elemwise_max(others, tape)

    def motion_feature(self, ms: MotionState, box, tape: Tape | None = None
                       ) -> tuple[Node, MotionState]:
        """Motion branch on one normalized box; returns (feature, advanced state)."""
        global _warned_box_range
        if self.config.head != "joint":
            raise UsageError("motion_feature requires head='joint'")
        box_node = box if isinstance(box, Node) else Node(box)
        if box_node.value.shape != (4,):
            raise DimensionError(f"motion box shape {box_node.value.shape} != (4,)")
        v = box_node.value
        if not _warned_box_range and (np.any(v < -1.0) or np.any(v > 2.0)):
            log.warning("motion input outside [-1, 2]: %s (is the box normalized "
                        "by the image size?)", v)
            _warned_box_range = True
        u = dense_forward(box_node, self.motion_in, tape)
        h, c = lstm_step(u, ms.h, ms.c, self.motion_lstm, tape,
                         variant=self.config.lstm_gate_variant)
        feat = dense_forward(h, self.motion_out, tape)
        return feat, MotionState(h, c)

    def _head_from_matches(self, m_plus: Node, m_minus: Node | None,
                           motion_feat: Node | None, tape: Tape | None,
                           dropout_rate: float = 0.0,
                           rng: np.random.Generator | None = None) -> Node:
        c = self.config
        m_all = concat([m_plus, m_minus], tape) if m_minus is not None else m_plus
        if c.head == "appearance_only":
            logits = dense_forward(m_all, self.head, tape)
        else:
            if motion_feat is None:
                raise UsageError("joint head requires a motion feature")
            a = dense_forward(m_all, self.app_fc1, tape)
            a = dense_forward(a, self.app_fc2, tape)
            f = dense_forward(motion_feat, self.mot_fc1, tape)
            f = dense_forward(f, self.mot_fc2, tape)
            if dropout_rate > 0.0:
                if rng is None:
                    raise UsageError("dropout_rate > 0 requires an rng")
                a = dropout(a, dropout_rate, rng, tape)
            j = dense_forward(concat([a, f], tape), self.joint_fc, tape)
            logits = dense_forward(j, self.head, tape)
        return softmax(logits, tape)

    def score_pair_node(self, target: AppearanceMemory, others: list[AppearanceMemory],
                        x: Node, motion: tuple[MotionState, object] | None = None,
                        tape: Tape | None = None, dropout_rate: float = 0.0,
                        rng: np.random.Generator | None = None,
                        zero_negative_pool: bool = False) -> Node:
        """Match probability as a graph node (training path)."""
        c = self.config
        if (motion is not None) != (c.head == "joint"):
            raise UsageError("motion input must be present iff head='joint'")
        m_plus = self.bilinear_match(target, x, tape)
        if not c.pooling:
            m_minus = None
        elif zero_negative_pool or self.ablate_negative_pool:
            m_minus = zeros(c.rows)
        else:
            m_minus = self.pool_other_tracks(
                [self.bilinear_match(o, x, tape) for o in others], tape)
        motion_feat = None
        if motion is not None:
            ms, box = motion
            motion_feat, _ = self.motion_feature(ms, box, tape)
        probs = self._head_from_matches(m_plus, m_minus, motion_feat, tape,
                                        dropout_rate, rng)
        return pick(probs, 1, tape)

    def score_pair(self, target: AppearanceMemory, others: list[AppearanceMemory],
                   x: Node, motion: tuple[MotionState, object] | None = None,
                   zero_negative_pool: bool = False) -> PairScore:
        """Inference-path probability that the detection extends the target track."""
        node = self.score_pair_node(target, others, x, motion,
                                    zero_negative_pool=zero_negative_pool)
        return PairScore(p=float(node.value))

    def score_frame(self, memories: list[AppearanceMemory], xs: list[Node],
                    motion_states: list[MotionState] | None = None,
                    boxes: list | None = None,
                    mask: np.ndarray | None = None,
                    tape: Tape | None = None, dropout_rate: float = 0.0,
                    rng: np.random.Generator | None = None,
                    zero_negative_pool: bool = False) -> list[list[Node | None]]:
        """Score all track-detection pairs of one frame.

        Bilinear matches are computed once per (track, detection) and
        shared across pairs, which is arithmetically identical to calling
        ``score_pair`` per pair (max pooling reuses the same vectors).
        ``mask[i][j] == False`` skips a pair (returned as None).
        """
        c = self.config
        M, N = len(memories), len(xs)
        joint = c.head == "joint"
        if joint and (motion_states is None or boxes is None):
            raise UsageError("joint head requires motion states and boxes")
        matches = [[self.bilinear_match(memories[i], xs[j], tape)
                    for j in range(N)] for i in range(M)]
        scores: list[list[Node | None]] = [[None] * N for _ in range(M)]
        for i in range(M):
            for j in range(N):
                if mask is not None and not mask[i][j]:
                    continue
                if not c.pooling:
                    m_minus = None
                elif zero_negative_pool or self.ablate_negative_pool:
                    m_minus = zeros(c.rows)
                else:
                    others = [matches[l][j] for l in range(M) if l != i]
                    m_minus = self.pool_other_tracks(others, tape)
                motion_feat = None
                if joint:
                    motion_feat, _ = self.motion_feature(motion_states[i], boxes[j], tape)
                probs = self._head_from_matches(matches[i][j], m_minus, motion_feat,
                                                tape, dropout_rate, rng)
                scores[i][j] = pick(probs, 1, tape)
        return scores

    # --- state transitions (assignment time only) ----------------------------

    def update_memory(self, mem: AppearanceMemory, x: Node,
                      tape: Tape | None = None) -> AppearanceMemory:
        """Advance the appearance memory with an assigned detection feature."""
        h, c = lstm_step(x, mem.h, mem.c, self.app_lstm, tape,
                         variant=self.config.lstm_gate_variant)
        return AppearanceMemory(h, c)

    def advance_motion(self, ms: MotionState, box, tape: Tape | None = None) -> MotionState:
        _, ms_new = self.motion_feature(ms, box, tape)
        return ms_new

    def zero_memory(self) -> AppearanceMemory:
        return AppearanceMemory(zeros(self.config.hidden), zeros(self.config.hidden))

    def zero_motion(self) -> MotionState:
        return MotionState(zeros(self.config.motion_hidden),
                           zeros(self.config.motion_hidden))

    def init_track_state(self, x: Node, box=None, tape: Tape | None = None
                         ) -> tuple[AppearanceMemory, MotionState | None]:
        """Birth states: one LSTM step from zero with the first detection."""
        mem = self.update_memory(self.zero_memory(), x, tape)
        motion = None
        if self.config.head == "joint":
            if box is None:
                raise UsageError("joint head requires a box at track birth")
            motion = self.advance_motion(self.zero_motion(), box, tape)
        return mem, motion
