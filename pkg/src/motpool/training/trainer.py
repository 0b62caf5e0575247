"""Episode-based training loop.

Real sequences are replayed frame by frame with teacher forcing
(memories advance along ground-truth assignments).  Gradients are cut
every ``window`` frames while LSTM states carry across the cut; each
window segment is one optimizer iteration, followed by one randomly
clipped episode (1:1 interleave).  Hard-example mining and the
appearance-dropout schedule apply per configuration; the logged loss is
always the full-batch value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..classifier import AppearanceMemory, MotionState, TrackScorer
from ..config import TrainConfig
from ..boxes import normalize_box
from ..data import SequenceData
from ..errors import NumericError, UsageError
from ..nn import AdamOptimizer, Node, Tape, add_n, clear_grads, scale, sgd_step
from .episodes import FramePlan, augment_missing, build_actual_episodes, build_random_episode
from .loss import batch_loss_nodes, mine_hard


@dataclass
class IterationInfo:
    """One optimizer iteration, as logged to the training CSV."""

    iteration: int
    epoch: int
    phase: str                 # "actual" | "random"
    loss: float                # full-batch value (mining never changes this)
    lr: float
    dropout: float
    seq_name: str = ""
    frame_start: int | None = None
    frame_end: int | None = None
    n_examples: int = 0
    frame_losses: list = field(default_factory=list)   # (frame, loss value)
    grads: dict | None = None

    def log_row(self) -> str:
        return f"{self.iteration},{self.phase},{self.loss:.6f},{self.lr:.6g},{self.dropout:.2f}"


LOG_HEADER = "iter,phase,loss,lr,dropout"


class Trainer:
    """Fits a TrackScorer on identity-labeled sequences."""

    def __init__(self, scorer: TrackScorer, cfg: TrainConfig):
        cfg.validate()
        self.scorer = scorer
        self.cfg = cfg
        self.history_: list[IterationInfo] = []
        self._adam = AdamOptimizer(cfg.adam_lr) if cfg.optimizer == "adam" else None

    # --- schedules -----------------------------------------------------------

    def lr_for_epoch(self, epoch: int) -> float:
        base = self.cfg.adam_lr if self._adam else self.cfg.lr
        boundaries = [int(round(f * self.cfg.epochs)) for f in self.cfg.lr_phase_fractions]
        phase = sum(1 for b in boundaries if epoch >= b)
        return base * (self.cfg.lr_decay ** phase)

    def dropout_for_iteration(self, iteration: int, total: int) -> float:
        if self.scorer.config.head != "joint":
            return 0.0
        frac = iteration / max(total, 1)
        for bound, rate in zip(self.cfg.dropout_fractions, self.cfg.dropout_rates):
            if frac < bound:
                return rate
        return self.cfg.dropout_rates[-1]

    def estimate_total_iterations(self, sequences: list[SequenceData]) -> int:
        segments = sum(math.ceil(seq.num_frames / self.cfg.window) for seq in sequences)
        return self.cfg.epochs * segments * 2  # actual + random, 1:1

    # --- forward helpers -----------------------------------------------------

    def _score_plan(self, plan: FramePlan, mems: dict, motions: dict,
                    xs: list[Node], seq: SequenceData, tape: Tape,
                    dropout: float, rng) -> tuple[list[Node], np.ndarray]:
        """Probability nodes + flat labels for one frame's M x N proposals."""
        joint = self.scorer.config.head == "joint"
        mem_list = [mems[tid] for tid in plan.track_ids]
        motion_list = [motions[tid] for tid in plan.track_ids] if joint else None
        boxes = ([normalize_box(tb.box, seq.img_w, seq.img_h)
                  for _, tb in plan.det_entries] if joint else None)
        grid = self.scorer.score_frame(mem_list, xs, motion_list, boxes,
                                       tape=tape, dropout_rate=dropout, rng=rng)
        probs = [grid[i][j] for i in range(plan.m) for j in range(plan.n)]
        return probs, plan.labels.reshape(-1)

    def _teacher_force(self, plan: FramePlan, mems: dict, motions: dict,
                       xs: list[Node], seq: SequenceData, tape: Tape) -> None:
        """Advance matched memories, then birth the frame's new tracks."""
        joint = self.scorer.config.head == "joint"
        for tid, j in plan.assignments.items():
            mems[tid] = self.scorer.update_memory(mems[tid], xs[j], tape)
            if joint:
                box = normalize_box(plan.det_entries[j][1].box, seq.img_w, seq.img_h)
                motions[tid] = self.scorer.advance_motion(motions[tid], box, tape)
        for tid, tb in plan.births:
            j = next(k for k, (did, _) in enumerate(plan.det_entries) if did == tid)
            box = normalize_box(tb.box, seq.img_w, seq.img_h) if joint else None
            mem, motion = self.scorer.init_track_state(xs[j], box, tape)
            mems[tid] = mem
            if joint:
                motions[tid] = motion

    # --- optimization --------------------------------------------------------

    def _step(self, tape: Tape, grad_loss: Node, lr: float) -> None:
        tape.backward(grad_loss)
        params = self.scorer.named_params()
        if self._adam is not None:
            self._adam.step(params, lr=lr)
        else:
            sgd_step(params, lr)

    def _grad_target(self, terms: list[Node], values: np.ndarray, mining: bool,
                     tape: Tape) -> Node:
        """Mean over all terms, or over the top-k hard ones when mining."""
        if mining and len(terms) > self.cfg.k_hard:
            idx = mine_hard(values, self.cfg.k_hard)
            terms = [terms[i] for i in idx]
        return scale(add_n(terms, tape), 1.0 / len(terms), tape)

    def _finish_iteration(self, info: IterationInfo, tape: Tape, grad_loss: Node,
                          on_iteration, capture_grads: bool) -> None:
        if not np.isfinite(info.loss):
            raise NumericError(
                f"training diverged at iteration {info.iteration} "
                f"({info.phase}, seq {info.seq_name!r}): loss={info.loss}")
        self._step(tape, grad_loss, info.lr)
        params = self.scorer.named_params()
        if capture_grads:
            info.grads = {name: (p.grad.copy() if p.grad is not None
                                 else np.zeros_like(p.value))
                          for name, p in params}
        clear_grads(p for _, p in params)
        self.history_.append(info)
        if on_iteration is not None:
            on_iteration(info)

    # --- main loop -----------------------------------------------------------

    def fit(self, sequences: list[SequenceData], on_iteration=None,
            capture_grads: bool = False) -> "Trainer":
        if not sequences:
            raise UsageError("no training sequences")
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        total = self.estimate_total_iterations(sequences)
        iteration = 0

        for epoch in range(cfg.epochs):
            lr = self.lr_for_epoch(epoch)
            mining = epoch >= cfg.hard_mining_start_epoch
            for seq in sequences:
                tracks = seq.tracks
                if cfg.augment_missing:
                    tracks = {tid: augment_missing(per, rng, cfg.augment_rate_min,
                                                   cfg.augment_rate_max)
                              for tid, per in tracks.items()}
                iteration = self._run_sequence_pass(
                    seq, tracks, epoch, lr, mining, iteration, total,
                    sequences, rng, on_iteration, capture_grads)
        return self

    def _run_sequence_pass(self, seq: SequenceData, tracks, epoch: int, lr: float,
                           mining: bool, iteration: int, total: int,
                           all_sequences, rng, on_iteration, capture_grads) -> int:
        cfg = self.cfg
        mems: dict[int, AppearanceMemory] = {}
        motions: dict[int, MotionState] = {}
        tape = Tape()
        frame_loss_values: list[tuple[int, float]] = []
        grad_nodes: list[Node] = []
        example_count = 0
        seg_start: int | None = None

        def flush(seg_end: int) -> None:
            nonlocal tape, frame_loss_values, grad_nodes, example_count
            nonlocal seg_start, iteration
            if frame_loss_values:
                dropout = self.dropout_for_iteration(iteration, total)
                logged = float(np.mean([v for _, v in frame_loss_values]))
                grad_loss = scale(add_n(grad_nodes, tape),
                                  1.0 / len(grad_nodes), tape)
                info = IterationInfo(
                    iteration=iteration, epoch=epoch, phase="actual",
                    loss=logged, lr=lr, dropout=dropout, seq_name=seq.name,
                    frame_start=seg_start, frame_end=seg_end,
                    n_examples=example_count,
                    frame_losses=list(frame_loss_values))
                self._finish_iteration(info, tape, grad_loss, on_iteration,
                                       capture_grads)
                iteration += 1
                self._run_random_iteration(all_sequences, epoch, lr, mining,
                                           iteration, total, rng, on_iteration,
                                           capture_grads)
                iteration += 1
            # states carry across the cut, detached from the dead graph
            for tid in list(mems):
                mems[tid] = mems[tid].detach()
            for tid in list(motions):
                motions[tid] = motions[tid].detach()
            tape = Tape()
            frame_loss_values = []
            grad_nodes = []
            example_count = 0
            seg_start = None

        for plan in build_actual_episodes(tracks, seq.frames()):
            if seg_start is None:
                seg_start = plan.frame
            xs = [self.scorer.embed_detection(tb.embedding, tape)
                  for _, tb in plan.det_entries]
            if plan.m > 0 and plan.n > 0:
                dropout = self.dropout_for_iteration(iteration, total)
                probs, labels = self._score_plan(plan, mems, motions, xs, seq,
                                                 tape, dropout, rng)
                mean_node, values, terms = batch_loss_nodes(
                    probs, labels, cfg.beta_pos, cfg.beta_neg, tape)
                frame_loss_values.append((plan.frame, float(mean_node.value)))
                grad_nodes.append(self._grad_target(terms, values, mining, tape))
                example_count += len(terms)
            self._teacher_force(plan, mems, motions, xs, seq, tape)
            if (plan.frame - seq.frames().start + 1) % cfg.window == 0:
                flush(plan.frame)
        flush(seq.num_frames)
        return iteration

    def _run_random_iteration(self, sequences, epoch: int, lr: float, mining: bool,
                              iteration: int, total: int, rng, on_iteration,
                              capture_grads) -> None:
        cfg = self.cfg
        episode = build_random_episode(
            sequences, cfg.max_gap, cfg.n_max, rng,
            augment=cfg.augment_missing,
            rate_min=cfg.augment_rate_min, rate_max=cfg.augment_rate_max)
        seq = next(s for s in sequences if s.name == episode.seq_name)
        joint = self.scorer.config.head == "joint"
        tape = Tape()
        mems: dict[int, AppearanceMemory] = {}
        motions: dict[int, MotionState] = {}
        for tid, history in episode.histories.items():
            for k, tb in enumerate(history):
                x = self.scorer.embed_detection(tb.embedding, tape)
                box = normalize_box(tb.box, seq.img_w, seq.img_h) if joint else None
                if k == 0:
                    mems[tid], motion = self.scorer.init_track_state(x, box, tape)
                    if joint:
                        motions[tid] = motion
                else:
                    mems[tid] = self.scorer.update_memory(mems[tid], x, tape)
                    if joint:
                        motions[tid] = self.scorer.advance_motion(motions[tid], box, tape)
        plan = episode.plan
        xs = [self.scorer.embed_detection(tb.embedding, tape)
              for _, tb in plan.det_entries]
        dropout = self.dropout_for_iteration(iteration, total)
        probs, labels = self._score_plan(plan, mems, motions, xs, seq, tape,
                                         dropout, rng)
        mean_node, values, terms = batch_loss_nodes(
            probs, labels, cfg.beta_pos, cfg.beta_neg, tape)
        grad_loss = self._grad_target(terms, values, mining, tape)
        info = IterationInfo(
            iteration=iteration, epoch=epoch, phase="random",
            loss=float(mean_node.value), lr=lr, dropout=dropout,
            seq_name=seq.name, frame_start=None, frame_end=episode.end_frame,
            n_examples=len(terms),
            frame_losses=[(episode.end_frame, float(mean_node.value))])
        self._finish_iteration(info, tape, grad_loss, on_iteration, capture_grads)

    # --- logging -------------------------------------------------------------

    def log_text(self) -> str:
        lines = [LOG_HEADER] + [info.log_row() for info in self.history_]
        return "\n".join(lines) + "\n"
