"""Dataset structures shared by the trainer and the tracker.

A training ``SequenceData`` holds identity-labeled tracks whose boxes
carry embeddings; it is built by assigning detection boxes (which own
the embeddings) to ground-truth ids with the IoU-optimal matching, so
detector noise flows into the training tracks naturally.

A ``DetectionStream`` is the tracker-side view: per-frame detections
with embeddings and no identities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError
from .motio import (EmbeddingStore, MotRecord, load_embeddings, parse_mot,
                    records_by_frame)
from .simulate import DET_FILE, EMBED_FILE, GT_FILE, META_FILE


@dataclass
class Detection:
    """One observed box in one frame plus its appearance embedding."""

    frame: int
    box: np.ndarray                  # (l, t, w, h) pixels
    conf: float
    embedding: np.ndarray


@dataclass
class TrackBox:
    box: np.ndarray
    embedding: np.ndarray


@dataclass
class SequenceData:
    """Identity-labeled tracks with embedded boxes, for training."""

    name: str
    img_w: float
    img_h: float
    tracks: dict[int, dict[int, TrackBox]]   # id -> frame -> TrackBox
    num_frames: int

    def frames(self) -> range:
        return range(1, self.num_frames + 1)


@dataclass
class DetectionStream:
    """Per-frame detections with embeddings, for tracking."""

    name: str
    img_w: float
    img_h: float
    frames: dict[int, list[Detection]] = field(default_factory=dict)
    num_frames: int = 0


def assign_tracks_by_iou(gt: list[MotRecord], detections: list[MotRecord],
                         store: EmbeddingStore, iou_threshold: float = 0.5
                         ) -> dict[int, dict[int, TrackBox]]:
    """Give GT identities to detection boxes via max-IoU assignment.

    Uses the optimal per-frame assignment (see training.episodes for the
    bare-box variant); unmatched detections are discarded, unmatched GT
    boxes become holes in the track.
    """
    from .training.episodes import assign_ids_by_iou

    gt_tracks: dict[int, dict[int, np.ndarray]] = {}
    for r in gt:
        gt_tracks.setdefault(r.id, {})[r.frame] = r.box
    det_by_frame = {f: [r.box for r in rows]
                    for f, rows in records_by_frame(detections).items()}
    assigned = assign_ids_by_iou(gt_tracks, det_by_frame, iou_threshold)
    tracks: dict[int, dict[int, TrackBox]] = {}
    for tid, per_frame in assigned.items():
        for frame, (det_index, box) in per_frame.items():
            tracks.setdefault(tid, {})[frame] = TrackBox(
                box=box, embedding=store.get(frame, det_index))
    return tracks


def load_scenario_dir(path) -> tuple[SequenceData, DetectionStream, list[MotRecord]]:
    """Read one scenario directory into (training view, tracking view, gt)."""
    root = Path(path)
    for name in (GT_FILE, DET_FILE, EMBED_FILE):
        if not (root / name).exists():
            raise UsageError(f"scenario dir {root} is missing {name}")
    gt = parse_mot((root / GT_FILE).read_text())
    detections = parse_mot((root / DET_FILE).read_text())
    store = load_embeddings((root / EMBED_FILE).read_text())
    det_frames = records_by_frame(detections)
    store.validate_covers(det_frames)

    meta_path = root / META_FILE
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        img_w, img_h = float(meta["width"]), float(meta["height"])
        num_frames = int(meta["num_frames"])
    else:
        img_w = max((r.bb_left + r.bb_width for r in gt + detections), default=640.0)
        img_h = max((r.bb_top + r.bb_height for r in gt + detections), default=480.0)
        num_frames = max((r.frame for r in gt + detections), default=0)

    tracks = assign_tracks_by_iou(gt, detections, store)
    seq = SequenceData(name=root.name, img_w=img_w, img_h=img_h,
                       tracks=tracks, num_frames=num_frames)

    stream = DetectionStream(name=root.name, img_w=img_w, img_h=img_h,
                             num_frames=num_frames)
    for frame, rows in det_frames.items():
        stream.frames[frame] = [
            Detection(frame=frame, box=r.box, conf=r.conf,
                      embedding=store.get(frame, idx))
            for idx, r in enumerate(rows)]
    return seq, stream, gt
