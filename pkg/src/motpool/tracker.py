"""Online tracking: greedy association, track lifecycle, Kalman motion.

Each frame: predict every live track's box, score all unmasked
track-detection pairs with the classifier (negative evidence pooled over
the other live tracks), associate greedily from the highest likelihood,
update matched tracks, optionally extend unmatched ones at the predicted
location, birth new tracks from leftover detections, and terminate
tracks that miss too often.  Near-online mode post-processes finished
tracks with local smoothing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .boxes import center_to_xywh, iou_xywh, normalize_box, xywh_to_center
from .classifier import AppearanceMemory, MotionState, TrackScorer
from .config import TrackerConfig
from .data import Detection, DetectionStream
from .errors import NumericError, UsageError
from .motio import MotRecord

# process/measurement noise as fractions of box height, per step
POS_NOISE = 1.0 / 20.0
VEL_NOISE = 1.0 / 160.0
MEAS_NOISE = 1.0 / 20.0


@dataclass
class KalmanState:
    """Constant-velocity filter state on (cx, cy, w, h) + velocities."""

    mean: np.ndarray      # (8,)
    cov: np.ndarray       # (8, 8) symmetric PSD

    @property
    def box(self) -> np.ndarray:
        return center_to_xywh(self.mean[:4])


_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8)


def kalman_init(box) -> KalmanState:
    center = xywh_to_center(box)
    h = max(float(center[3]), 1.0)
    mean = np.concatenate([center, np.zeros(4)])
    std = np.concatenate([np.full(4, 2.0 * MEAS_NOISE * h),
                          np.full(4, 10.0 * VEL_NOISE * h)])
    return KalmanState(mean=mean, cov=np.diag(std ** 2))


def kalman_predict(ks: KalmanState) -> tuple[KalmanState, np.ndarray]:
    """(advanced state, predicted box) under the constant-velocity model."""
    h = max(float(ks.mean[3]), 1.0)
    q = np.concatenate([np.full(4, (POS_NOISE * h) ** 2),
                        np.full(4, (VEL_NOISE * h) ** 2)])
    mean = _F @ ks.mean
    cov = _F @ ks.cov @ _F.T + np.diag(q)
    out = KalmanState(mean=mean, cov=(cov + cov.T) / 2.0)
    return out, out.box


def kalman_update(ks: KalmanState, box) -> KalmanState:
    """Standard linear-Gaussian correction with box-scaled noise."""
    z = xywh_to_center(box)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite observation box")
    h = max(float(ks.mean[3]), 1.0)
    R = np.diag(np.full(4, (MEAS_NOISE * h) ** 2))
    S = _H @ ks.cov @ _H.T + R
    try:
        K = np.linalg.solve(S, _H @ ks.cov).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from None
    mean = ks.mean + K @ (z - _H @ ks.mean)
    cov = (np.eye(8) - K @ _H) @ ks.cov
    return KalmanState(mean=mean, cov=(cov + cov.T) / 2.0)


def motion_gate(predicted_box, detection_box, gate_iou: float) -> bool:
    """Pass iff the boxes overlap at least gate_iou (closed threshold)."""
    return iou_xywh(predicted_box, detection_box) >= gate_iou


def greedy_associate(scores: np.ndarray, threshold: float,
                     mask: np.ndarray | None = None) -> dict[int, int]:
    """Partial injective track->detection map, best scores first.

    Pairs sort by (score desc, track asc, detection asc); a pair is
    accepted iff both ends are free and score >= threshold.  Masked
    pairs never match.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise UsageError("scores must be an M x N matrix")
    pairs = []
    M, N = scores.shape
    for i in range(M):
        for j in range(N):
            if mask is not None and not mask[i][j]:
                continue
            s = scores[i, j]
            if np.isfinite(s) and s >= threshold:
                pairs.append((-s, i, j))
    pairs.sort()
    taken_i: set[int] = set()
    taken_j: set[int] = set()
    assignment: dict[int, int] = {}
    for _, i, j in pairs:
        if i in taken_i or j in taken_j:
            continue
        assignment[i] = j
        taken_i.add(i)
        taken_j.add(j)
    return assignment


@dataclass
class Observation:
    frame: int
    box: np.ndarray
    source: str  # detected | extended | interpolated


@dataclass
class Track:
    """One live identity with its fixed-size matching state."""

    track_id: int
    memory: AppearanceMemory
    motion: MotionState | None
    kalman: KalmanState
    last_embedding: np.ndarray
    observations: list[Observation] = field(default_factory=list)
    matched_count: int = 1
    missed_total: int = 0
    consecutive_missed: int = 0
    alive: bool = True
    predicted_box: np.ndarray | None = None

    def append(self, obs: Observation) -> None:
        if self.observations and obs.frame <= self.observations[-1].frame:
            raise UsageError(f"track {self.track_id}: frames must increase")
        self.observations.append(obs)

    def state_nbytes(self) -> int:
        """Bytes of matching state; constant in sequence length."""
        n = self.memory.h.value.nbytes + self.memory.c.value.nbytes
        if self.motion is not None:
            n += self.motion.h.value.nbytes + self.motion.c.value.nbytes
        n += self.kalman.mean.nbytes + self.kalman.cov.nbytes
        n += self.last_embedding.nbytes
        return n


def maybe_terminate(track: Track, cfg: TrackerConfig) -> bool:
    """More misses than matches, or too many consecutive misses."""
    return (track.missed_total > track.matched_count
            or track.consecutive_missed > cfg.n_miss)


def smooth_tracks(tracks: list[Track]) -> None:
    """Near-online post-pass: prune trailing extensions, fill gaps.

    Trailing extended observations never followed by a detection are
    dropped (they tend to be false positives); frames missing between
    two detected observations are filled by linear interpolation.
    """
    for track in tracks:
        obs = track.observations
        last_det = max((k for k, o in enumerate(obs) if o.source == "detected"),
                       default=None)
        if last_det is None:
            track.observations = []
            continue
        obs = obs[:last_det + 1]
        detected = [o for o in obs if o.source == "detected"]
        filled: list[Observation] = []
        have = {o.frame for o in obs}
        for a, b in zip(detected, detected[1:]):
            span = b.frame - a.frame
            for f in range(a.frame + 1, b.frame):
                if f in have:
                    continue
                w = (f - a.frame) / span
                box = (1.0 - w) * a.box + w * b.box
                filled.append(Observation(frame=f, box=box, source="interpolated"))
        track.observations = sorted(obs + filled, key=lambda o: o.frame)


class GreedyTracker(BaseEstimator):
    """Online tracker; ``predict`` maps a detection stream to MOT rows.

    Parameters
    ----------
    classifier : TrackScorer
        Trained track-proposal classifier (frozen during tracking).
    config : TrackerConfig
    embedding_oracle : callable (frame, box) -> vector or None, optional
        Supplies an appearance embedding for a synthesized box when a
        track is extended; without one the track's last matched
        detection embedding is reused.
    """

    def __init__(self, classifier: TrackScorer | None = None,
                 config: TrackerConfig | None = None,
                 embedding_oracle=None):
        self.classifier = classifier
        self.config = config
        self.embedding_oracle = embedding_oracle

    # sklearn surface: the tracker has no fitted state of its own
    def fit(self, X=None, y=None) -> "GreedyTracker":
        return self

    # --- streaming interface --------------------------------------------------

    def begin(self, img_w: float, img_h: float) -> None:
        if self.classifier is None:
            raise UsageError("GreedyTracker needs a classifier")
        self._cfg = self.config or TrackerConfig()
        self._cfg.validate()
        self._img_w, self._img_h = float(img_w), float(img_h)
        self._tracks: list[Track] = []
        self._next_id = 1
        self._last_frame = 0
        self._assoc_seconds = 0.0
        self._score_seconds = 0.0
        self._frames_seen = 0

    def live_tracks(self) -> list[Track]:
        return [t for t in self._tracks if t.alive]

    def all_tracks(self) -> list[Track]:
        return list(self._tracks)

    def step_frame(self, frame: int, detections: list[Detection]) -> list[MotRecord]:
        """Process one frame; returns this frame's output rows."""
        if frame <= self._last_frame:
            raise UsageError(f"frames must arrive in increasing order "
                             f"(got {frame} after {self._last_frame})")
        self._last_frame = frame
        self._frames_seen += 1
        cfg = self._cfg
        scorer = self.classifier
        joint = scorer.config.head == "joint"
        live = self.live_tracks()
        rows: list[MotRecord] = []

        for t in live:
            t.kalman, t.predicted_box = kalman_predict(t.kalman)

        xs = [scorer.embed_detection(d.embedding) for d in detections]
        M, N = len(live), len(detections)
        assignment: dict[int, int] = {}
        if M and N:
            mask = np.ones((M, N), dtype=bool)
            if cfg.gate == "iou":
                for i, t in enumerate(live):
                    for j, d in enumerate(detections):
                        mask[i, j] = motion_gate(t.predicted_box, d.box, cfg.gate_iou)
            t0 = time.perf_counter()
            grid = scorer.score_frame(
                [t.memory for t in live], xs,
                [t.motion for t in live] if joint else None,
                [normalize_box(d.box, self._img_w, self._img_h)
                 for d in detections] if joint else None,
                mask=mask)
            scores = np.full((M, N), -np.inf)
            for i in range(M):
                for j in range(N):
                    if grid[i][j] is not None:
                        scores[i, j] = float(grid[i][j].value)
            t1 = time.perf_counter()
            assignment = greedy_associate(scores, cfg.assoc_threshold, mask)
            self._assoc_seconds += time.perf_counter() - t1
            self._score_seconds += t1 - t0

        matched_dets = set(assignment.values())
        for i, t in enumerate(live):
            if i in assignment:
                d = detections[assignment[i]]
                x = xs[assignment[i]]
                t.memory = scorer.update_memory(t.memory, x)
                if joint:
                    t.motion = scorer.advance_motion(
                        t.motion, normalize_box(d.box, self._img_w, self._img_h))
                t.kalman = kalman_update(t.kalman, d.box)
                t.last_embedding = d.embedding
                t.matched_count += 1
                t.consecutive_missed = 0
                t.append(Observation(frame=frame, box=d.box, source="detected"))
                rows.append(self._row(frame, t.track_id, d.box))
            elif cfg.extension:
                row = self._try_extend(t, frame, live)
                if row is not None:
                    rows.append(row)
            else:
                self._miss(t)

        for j, d in enumerate(detections):
            if j in matched_dets or d.conf < cfg.min_birth_conf:
                continue
            mem, motion = scorer.init_track_state(
                xs[j],
                normalize_box(d.box, self._img_w, self._img_h) if joint else None)
            t = Track(track_id=self._next_id, memory=mem, motion=motion,
                      kalman=kalman_init(d.box), last_embedding=d.embedding)
            self._next_id += 1
            t.append(Observation(frame=frame, box=d.box, source="detected"))
            self._tracks.append(t)
            rows.append(self._row(frame, t.track_id, d.box))

        for t in self.live_tracks():
            if maybe_terminate(t, cfg):
                t.alive = False
        return rows

    def _try_extend(self, track: Track, frame: int,
                    live: list[Track]) -> MotRecord | None:
        """Score a synthesized detection at the predicted location.

        Accepted extensions update the Kalman and motion state but never
        the appearance memory, and reset the consecutive-miss counter;
        either way the frame counts as a missing real detection.
        """
        scorer = self.classifier
        cfg = self._cfg
        box = track.predicted_box
        embedding = None
        if self.embedding_oracle is not None:
            embedding = self.embedding_oracle(frame, box)
        if embedding is None:
            embedding = track.last_embedding
        x = scorer.embed_detection(embedding)
        others = [t.memory for t in live if t is not track]
        motion = ((track.motion, normalize_box(box, self._img_w, self._img_h))
                  if scorer.config.head == "joint" else None)
        score = scorer.score_pair(track.memory, others, x, motion)
        track.missed_total += 1
        if score.p >= cfg.assoc_threshold:
            track.consecutive_missed = 0
            track.kalman = kalman_update(track.kalman, box)
            if motion is not None:
                track.motion = scorer.advance_motion(track.motion, motion[1])
            track.append(Observation(frame=frame, box=box.copy(), source="extended"))
            return self._row(frame, track.track_id, box)
        track.consecutive_missed += 1
        return None

    def _miss(self, track: Track) -> None:
        track.missed_total += 1
        track.consecutive_missed += 1

    @staticmethod
    def _row(frame: int, track_id: int, box) -> MotRecord:
        return MotRecord(frame=frame, id=track_id, bb_left=float(box[0]),
                         bb_top=float(box[1]), bb_width=float(box[2]),
                         bb_height=float(box[3]), conf=1.0)

    # --- batch interface --------------------------------------------------------

    def predict(self, stream: DetectionStream) -> list[MotRecord]:
        """Track a whole sequence; returns MOT result rows."""
        self.begin(stream.img_w, stream.img_h)
        start = time.perf_counter()
        online_rows: list[MotRecord] = []
        last = stream.num_frames or (max(stream.frames) if stream.frames else 0)
        for frame in range(1, last + 1):
            online_rows.extend(self.step_frame(frame, stream.frames.get(frame, [])))
        total = time.perf_counter() - start
        self.timing_ = {
            "frames": self._frames_seen,
            "total_s": total,
            "fps": self._frames_seen / total if total > 0 else float("inf"),
            "mean_association_ms": 1000.0 * self._assoc_seconds / max(self._frames_seen, 1),
            "mean_scoring_ms": 1000.0 * self._score_seconds / max(self._frames_seen, 1),
        }
        if (self._cfg.smoothing == "near_online"):
            smooth_tracks(self._tracks)
            rows = []
            for t in self._tracks:
                for o in t.observations:
                    rows.append(self._row(o.frame, t.track_id, o.box))
            rows.sort(key=lambda r: (r.frame, r.id))
            return rows
        return online_rows
