"""Seeded generator of synthetic multi-target scenes.

Targets follow constant-velocity paths with small random acceleration,
reflecting at the image borders.  Appearance confusability is controlled
by one knob: targets are grouped into clusters and each target's
embedding is its cluster centroid plus a personal offset of norm
``cluster_spread`` plus per-frame gaussian noise.  Detections are the
ground-truth boxes jittered and dropped at the configured rates, plus
Poisson false positives with random unit-vector embeddings.

All randomness flows from one generator, so equal seeds give
byte-identical output files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import iou_xywh
from .config import ScenarioSpec
from .motio import MotRecord, write_embeddings, write_mot

GT_FILE = "gt.txt"
DET_FILE = "det.txt"
EMBED_FILE = "embed.csv"
META_FILE = "scenario.json"

FP_CONF = 0.5  # false positives get lower confidence than real detections


@dataclass
class Scenario:
    """In-memory result of one generation run."""

    spec: ScenarioSpec
    gt: list[MotRecord]
    detections: list[MotRecord]
    embedding_rows: list[tuple[int, int, np.ndarray]]
    target_embeddings: dict[int, np.ndarray]  # noiseless per-target embedding

    def gt_text(self) -> str:
        return write_mot(self.gt)

    def det_text(self) -> str:
        return write_mot(self.detections)

    def embed_text(self) -> str:
        return write_embeddings(self.embedding_rows, self.spec.embed_dim)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / GT_FILE).write_text(self.gt_text())
        (out / DET_FILE).write_text(self.det_text())
        (out / EMBED_FILE).write_text(self.embed_text())
        meta = dataclasses.asdict(self.spec)
        (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def oracle_embedding(self, frame: int, box: np.ndarray,
                         min_iou: float = 0.3) -> np.ndarray | None:
        """Noiseless embedding of the GT target best overlapping ``box``.

        Stands in for a feature extractor when the tracker synthesizes a
        box that has no detection (track extension).
        """
        best_id, best_iou = None, min_iou
        for r in self.gt:
            if r.frame != frame:
                continue
            ov = iou_xywh(box, r.box)
            if ov >= best_iou:
                best_id, best_iou = r.id, ov
        if best_id is None:
            return None
        return self.target_embeddings[best_id].copy()


def _random_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random direction scaled to norm sqrt(dim): unit per-coordinate variance.

    Keeping coordinates at O(1) makes cluster_spread and embed_noise
    direct relative-confusability knobs and keeps the classifier's
    1/sqrt(fan_in) initialization in a trainable regime at small dims.
    """
    v = rng.normal(size=dim)
    return v * (np.sqrt(dim) / np.linalg.norm(v))


def generate(spec: ScenarioSpec) -> Scenario:
    """Run the simulation; fully deterministic under spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.num_targets

    # appearance: cluster centroids, then a fixed personal offset per target
    centroids = [_random_direction(rng, spec.embed_dim) for _ in range(spec.num_clusters)]
    cluster_of = [i % spec.num_clusters for i in range(n)]
    target_embeddings = {}
    for tid in range(1, n + 1):
        offset = _random_direction(rng, spec.embed_dim) * spec.cluster_spread
        target_embeddings[tid] = centroids[cluster_of[tid - 1]] + offset

    # geometry: spawn inside margins with random heading and speed
    sizes = np.column_stack([
        rng.uniform(spec.box_w_min, spec.box_w_max, size=n),
        rng.uniform(spec.box_h_min, spec.box_h_max, size=n)])
    margin_x = sizes[:, 0] / 2 + 2.0
    margin_y = sizes[:, 1] / 2 + 2.0
    pos = np.column_stack([
        rng.uniform(margin_x, spec.width - margin_x),
        rng.uniform(margin_y, spec.height - margin_y)])
    heading = rng.uniform(0, 2 * np.pi, size=n)
    speed = rng.uniform(spec.speed_min, spec.speed_max, size=n)
    vel = np.column_stack([np.cos(heading), np.sin(heading)]) * speed[:, None]

    gt: list[MotRecord] = []
    detections: list[MotRecord] = []
    embedding_rows: list[tuple[int, int, np.ndarray]] = []

    for frame in range(1, spec.num_frames + 1):
        frame_boxes = []
        for i in range(n):
            tid = i + 1
            w, h = sizes[i]
            box = np.array([pos[i, 0] - w / 2, pos[i, 1] - h / 2, w, h])
            gt.append(MotRecord(frame, tid, *box, conf=1.0))
            frame_boxes.append((tid, box))

        # detections: jitter + dropout, order shuffled within the frame
        kept = []
        for tid, box in frame_boxes:
            if rng.random() < spec.miss_prob:
                continue
            jbox = box.copy()
            if spec.box_jitter > 0:
                jbox[:2] += rng.normal(scale=spec.box_jitter, size=2)
                jbox[2:] = np.maximum(jbox[2:] + rng.normal(
                    scale=spec.box_jitter / 2.0, size=2), 2.0)
            noise = rng.normal(scale=spec.embed_noise, size=spec.embed_dim)
            kept.append((jbox, target_embeddings[tid] + noise, 1.0))
        for _ in range(rng.poisson(spec.fp_rate)):
            w = rng.uniform(spec.box_w_min, spec.box_w_max)
            h = rng.uniform(spec.box_h_min, spec.box_h_max)
            fp_box = np.array([rng.uniform(0, spec.width - w),
                               rng.uniform(0, spec.height - h), w, h])
            kept.append((fp_box, _random_direction(rng, spec.embed_dim), FP_CONF))
        rng.shuffle(kept)
        for det_index, (box, emb, conf) in enumerate(kept):
            detections.append(MotRecord(frame, -1, *box, conf=conf))
            embedding_rows.append((frame, det_index, emb))

        # advance the motion model
        vel += rng.normal(scale=spec.accel_sigma, size=(n, 2))
        pos += vel
        for i in range(n):
            for axis, (lo, hi) in enumerate(((margin_x[i], spec.width - margin_x[i]),
                                             (margin_y[i], spec.height - margin_y[i]))):
                if pos[i, axis] < lo:
                    pos[i, axis] = 2 * lo - pos[i, axis]
                    vel[i, axis] = -vel[i, axis]
                elif pos[i, axis] > hi:
                    pos[i, axis] = 2 * hi - pos[i, axis]
                    vel[i, axis] = -vel[i, axis]

    return Scenario(spec=spec, gt=gt, detections=detections,
                    embedding_rows=embedding_rows,
                    target_embeddings=target_embeddings)
