"""Axis-aligned box helpers. Boxes are (left, top, width, height) arrays."""

from __future__ import annotations

import numpy as np


def iou_xywh(a, b) -> float:
    """Intersection over union of two (l, t, w, h) boxes."""
    ax1, ay1, aw, ah = float(a[0]), float(a[1]), float(a[2]), float(a[3])
    bx1, by1, bw, bh = float(b[0]), float(b[1]), float(b[2]), float(b[3])
    ix = max(0.0, min(ax1 + aw, bx1 + bw) - max(ax1, bx1))
    iy = max(0.0, min(ay1 + ah, by1 + bh) - max(ay1, by1))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def xywh_to_center(box) -> np.ndarray:
    """(l, t, w, h) -> (cx, cy, w, h)."""
    box = np.asarray(box, dtype=np.float64)
    return np.array([box[0] + box[2] / 2.0, box[1] + box[3] / 2.0, box[2], box[3]])


def center_to_xywh(c) -> np.ndarray:
    """(cx, cy, w, h) -> (l, t, w, h)."""
    c = np.asarray(c, dtype=np.float64)
    return np.array([c[0] - c[2] / 2.0, c[1] - c[3] / 2.0, c[2], c[3]])


def normalize_box(box, img_w: float, img_h: float) -> np.ndarray:
    """Scale (l, t, w, h) by the image size, the motion-model input form."""
    box = np.asarray(box, dtype=np.float64)
    return np.array([box[0] / img_w, box[1] / img_h, box[2] / img_w, box[3] / img_h])
