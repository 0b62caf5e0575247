"""Episode construction: streamed per-frame proposal batches from real
track labels, short randomly clipped episodes, and the two data
augmentations (missing-detection dropout, detector-box id assignment).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..boxes import iou_xywh
from ..data import SequenceData, TrackBox
from ..errors import UsageError
from ..metrics import hungarian


@dataclass
class FramePlan:
    """All track-detection proposals of one frame, with teacher assignments.

    ``track_ids`` are the M tracks whose memories exist when the frame is
    scored; ``det_entries`` are the N detections (id, box+embedding) in
    deterministic order; ``labels[i, j]`` marks id equality.  Tracks
    first appearing this frame are listed in ``births`` and join the
    pool at the next frame.
    """

    frame: int
    track_ids: list[int]
    det_entries: list[tuple[int, TrackBox]]
    labels: np.ndarray
    births: list[tuple[int, TrackBox]]
    assignments: dict[int, int]  # track id -> detection index this frame

    @property
    def m(self) -> int:
        return len(self.track_ids)

    @property
    def n(self) -> int:
        return len(self.det_entries)


def build_actual_episodes(tracks: dict[int, dict[int, TrackBox]],
                          frames) -> list[FramePlan]:
    """Per-frame proposal batches over a whole sequence in replay order.

    A track enters the proposal pool the frame after its first box
    (its memory then exists) and leaves after its last box.
    """
    first = {tid: min(per) for tid, per in tracks.items() if per}
    last = {tid: max(per) for tid, per in tracks.items() if per}
    plans = []
    for t in frames:
        active = sorted(tid for tid in tracks
                        if first.get(tid, 10 ** 9) < t and last[tid] >= t)
        dets = [(tid, tracks[tid][t]) for tid in sorted(tracks)
                if t in tracks[tid]]
        labels = np.zeros((len(active), len(dets)))
        assignments = {}
        for j, (det_id, _) in enumerate(dets):
            for i, tid in enumerate(active):
                if tid == det_id:
                    labels[i, j] = 1.0
                    assignments[tid] = j
        births = [(tid, tb) for tid, tb in dets if first[tid] == t]
        plans.append(FramePlan(frame=t, track_ids=active, det_entries=dets,
                               labels=labels, births=births,
                               assignments=assignments))
    return plans


@dataclass
class RandomEpisodePlan:
    """A short clipped episode: per-track history then one scored frame."""

    seq_name: str
    end_frame: int
    histories: dict[int, list[TrackBox]]  # boxes strictly before the end frame
    plan: FramePlan = field(repr=False, default=None)


def augment_missing(track: dict[int, TrackBox], rng: np.random.Generator,
                    rate_min: float = 0.1, rate_max: float = 0.9
                    ) -> dict[int, TrackBox]:
    """Randomly drop boxes at a per-track rate drawn from [rate_min, rate_max].

    The first and last boxes always survive so the track keeps its span.
    """
    if len(track) < 2:
        return dict(track)
    rate = rng.uniform(rate_min, rate_max)
    frames = sorted(track)
    lo, hi = frames[0], frames[-1]
    out = {}
    for f in frames:
        if f in (lo, hi) or rng.random() >= rate:
            out[f] = track[f]
    return out


def assign_ids_by_iou(gt_tracks: dict[int, dict[int, np.ndarray]],
                      detections: dict[int, list[np.ndarray]],
                      iou_threshold: float = 0.5
                      ) -> dict[int, dict[int, tuple[int, np.ndarray]]]:
    """Per frame, give GT ids to detection boxes by IoU-optimal assignment.

    Returns id -> frame -> (detection index, detection box); pairs below
    the threshold stay unmatched and unmatched detections are dropped.
    """
    out: dict[int, dict[int, tuple[int, np.ndarray]]] = {}
    frames = sorted({f for per in gt_tracks.values() for f in per})
    for f in frames:
        ids = [tid for tid in sorted(gt_tracks) if f in gt_tracks[tid]]
        dets = detections.get(f, [])
        if not ids or not dets:
            continue
        cost = np.full((len(ids), len(dets)), np.inf)
        for i, tid in enumerate(ids):
            for j, box in enumerate(dets):
                ov = iou_xywh(gt_tracks[tid][f], box)
                if ov >= iou_threshold:
                    cost[i, j] = 1.0 - ov  # maximizing total IoU
        for i, j in hungarian(cost):
            out.setdefault(ids[i], {})[f] = (j, np.asarray(dets[j], dtype=float))
    return out


def build_random_episode(sequences: list[SequenceData], max_gap: int, n_max: int,
                         rng: np.random.Generator, augment: bool = True,
                         rate_min: float = 0.1, rate_max: float = 0.9,
                         max_retries: int = 50) -> RandomEpisodePlan:
    """Sample one randomly clipped episode ending in a scored frame.

    Tracks present in the sampled end frame are capped at ``n_max`` and
    clipped to random start frames, so the batch mixes track lengths;
    tracks whose clip leaves no history become births (M < N).
    """
    if not sequences:
        raise UsageError("no sequences to sample from")
    for _ in range(max_retries):
        seq = sequences[int(rng.integers(len(sequences)))]
        candidate_frames = sorted({f for per in seq.tracks.values() for f in per})
        if len(candidate_frames) < 2:
            continue
        end = int(candidate_frames[int(rng.integers(1, len(candidate_frames)))])
        start = int(rng.integers(max(1, end - max_gap), end))
        alive = [tid for tid, per in seq.tracks.items() if end in per]
        if not alive:
            continue
        if len(alive) > n_max:
            alive = sorted(rng.choice(alive, size=n_max, replace=False).tolist())
        histories: dict[int, list[TrackBox]] = {}
        dets: list[tuple[int, TrackBox]] = []
        for tid in sorted(alive):
            clip_start = int(rng.integers(start, end + 1))
            span = {f: tb for f, tb in seq.tracks[tid].items()
                    if clip_start <= f <= end}
            if augment and len(span) >= 2:
                span = augment_missing(span, rng, rate_min, rate_max)
            dets.append((tid, span[end]))
            hist = [span[f] for f in sorted(span) if f < end]
            if hist:
                histories[tid] = hist
        if not histories:
            continue  # every clip landed on the end frame
        track_ids = sorted(histories)
        labels = np.zeros((len(track_ids), len(dets)))
        assignments = {}
        for j, (det_id, _) in enumerate(dets):
            for i, tid in enumerate(track_ids):
                if tid == det_id:
                    labels[i, j] = 1.0
                    assignments[tid] = j
        births = [(tid, tb) for tid, tb in dets if tid not in histories]
        plan = FramePlan(frame=end, track_ids=track_ids, det_entries=dets,
                         labels=labels, births=births, assignments=assignments)
        return RandomEpisodePlan(seq_name=seq.name, end_frame=end,
                                 histories=histories, plan=plan)
    raise UsageError(f"could not sample a random episode in {max_retries} tries")
