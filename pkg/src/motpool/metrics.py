"""CLEAR-MOT and identity metrics: MOTA, FP, FN, IDSW, Frag, MT, ML, IDF1.

Frame-level correspondence follows the CLEAR protocol: matches from the
previous frames persist while their overlap stays above threshold, the
remainder is matched by a minimum-cost assignment on (1 - IoU).  The
identity metrics use one global trajectory-level assignment maximizing
identity-consistent frame matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import iou_xywh
from .errors import EvaluationError
from .motio import MotRecord

IOU_THRESHOLD = 0.5  # MOTChallenge overlap convention
MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment covering the smaller side of the matrix.

    ``inf`` marks forbidden pairs; rows/columns whose every entry is
    forbidden stay unassigned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if np.isnan(cost).any():
        raise EvaluationError("cost matrix contains NaN")
    finite = cost[np.isfinite(cost)]
    # Large-constant substitution: any solution touching a forbidden pair
    # is dominated, and touched pairs are filtered out afterwards.
    big = (np.abs(finite).sum() + 1.0) * 2.0 if finite.size else 1.0
    sub = np.where(np.isfinite(cost), cost, big)
    rows, cols = linear_sum_assignment(sub)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if np.isfinite(cost[r, c])]


def match_frame(gt_boxes: dict[int, np.ndarray], pred_boxes: dict[int, np.ndarray],
                previous: dict[int, int] | None = None) -> dict[int, int]:
    """One frame of CLEAR correspondence: gt id -> pred id.

    Pairs carried in ``previous`` are kept first whenever both ids are
    present and still overlap >= 0.5, even if a better partner exists.
    """
    matches: dict[int, int] = {}
    taken_pred: set[int] = set()
    if previous:
        for g, p in previous.items():
            if g in gt_boxes and p in pred_boxes and p not in taken_pred:
                if iou_xywh(gt_boxes[g], pred_boxes[p]) >= IOU_THRESHOLD:
                    matches[g] = p
                    taken_pred.add(p)
    rest_gt = [g for g in sorted(gt_boxes) if g not in matches]
    rest_pred = [p for p in sorted(pred_boxes) if p not in taken_pred]
    if rest_gt and rest_pred:
        cost = np.full((len(rest_gt), len(rest_pred)), np.inf)
        for i, g in enumerate(rest_gt):
            for j, p in enumerate(rest_pred):
                ov = iou_xywh(gt_boxes[g], pred_boxes[p])
                if ov >= IOU_THRESHOLD:
                    cost[i, j] = 1.0 - ov
        for i, j in hungarian(cost):
            matches[rest_gt[i]] = rest_pred[j]
    return matches


def _by_frame(records: list[MotRecord]) -> dict[int, dict[int, np.ndarray]]:
    frames: dict[int, dict[int, np.ndarray]] = {}
    for r in records:
        frames.setdefault(r.frame, {})[r.id] = np.array(
            [r.bb_left, r.bb_top, r.bb_width, r.bb_height])
    return frames


def _by_track(records: list[MotRecord]) -> dict[int, dict[int, np.ndarray]]:
    tracks: dict[int, dict[int, np.ndarray]] = {}
    for r in records:
        tracks.setdefault(r.id, {})[r.frame] = np.array(
            [r.bb_left, r.bb_top, r.bb_width, r.bb_height])
    return tracks


@dataclass
class EvalReport:
    """Tracking scores for one sequence (or an aggregate)."""

    name: str = ""
    MOTA: float = 0.0
    IDF1: float = 0.0
    IDP: float = 0.0
    IDR: float = 0.0
    FP: int = 0
    FN: int = 0
    IDSW: int = 0
    Frag: int = 0
    MT: int = 0
    ML: int = 0
    MT_pct: float = 0.0
    ML_pct: float = 0.0
    num_gt_boxes: int = 0
    num_gt_tracks: int = 0
    IDTP: int = 0
    IDFP: int = 0
    IDFN: int = 0
    sequences: list["EvalReport"] = field(default_factory=list)

    # column order mirrors the headline comparison tables
    COLUMNS = ("MOTA", "IDF1", "IDS", "MT", "ML", "Frag", "FP", "FN", "IDP", "IDR")

    def row(self) -> list:
        return [self.MOTA, self.IDF1, self.IDSW, self.MT, self.ML, self.Frag,
                self.FP, self.FN, self.IDP, self.IDR]

    def to_csv(self) -> str:
        lines = ["name," + ",".join(self.COLUMNS)]
        for rep in self.sequences or [self]:
            cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in rep.row()]
            lines.append(rep.name + "," + ",".join(cells))
        if self.sequences:
            cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in self.row()]
            lines.append("OVERALL," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        reports = (self.sequences or []) + [self]
        names = [r.name or "OVERALL" for r in reports]
        width = max(len(n) for n in names + ["sequence"]) + 2
        header = "sequence".ljust(width) + "".join(c.rjust(9) for c in self.COLUMNS)
        lines = [header]
        for name, rep in zip(names, reports):
            cells = []
            for col, v in zip(self.COLUMNS, rep.row()):
                cells.append((f"{v:.3f}" if isinstance(v, float) else str(v)).rjust(9))
            lines.append(name.ljust(width) + "".join(cells))
        return "\n".join(lines) + "\n"


def clear_mot(gt: list[MotRecord], pred: list[MotRecord], name: str = "") -> EvalReport:
    """CLEAR-MOT scores; MOTA = 1 - (FN + FP + IDSW) / gt boxes."""
    if not gt:
        raise EvaluationError("empty ground truth")
    gt_frames = _by_frame(gt)
    pred_frames = _by_frame(pred)
    all_frames = sorted(set(gt_frames) | set(pred_frames))

    fp = fn = idsw = 0
    prev: dict[int, int] = {}
    last_pred_of: dict[int, int] = {}        # persists across gaps
    covered: dict[int, int] = {}             # gt id -> matched frame count
    present: dict[int, int] = {}             # gt id -> frames with a box
    frag: dict[int, int] = {}
    tracked_before: dict[int, bool] = {}     # gt id -> was matched at its last appearance

    for f in all_frames:
        g_boxes = gt_frames.get(f, {})
        p_boxes = pred_frames.get(f, {})
        matches = match_frame(g_boxes, p_boxes, prev)
        for g, p in matches.items():
            if g in last_pred_of and last_pred_of[g] != p:
                idsw += 1
            last_pred_of[g] = p
        fn += len(g_boxes) - len(matches)
        fp += len(p_boxes) - len(matches)
        for g in g_boxes:
            present[g] = present.get(g, 0) + 1
            matched = g in matches
            if matched:
                covered[g] = covered.get(g, 0) + 1
                if tracked_before.get(g) is False:
                    frag[g] = frag.get(g, 0) + 1
            tracked_before[g] = matched
        prev = matches

    num_gt_boxes = sum(present.values())
    mt = ml = 0
    for g, n in present.items():
        ratio = covered.get(g, 0) / n
        if ratio >= MT_COVERAGE:
            mt += 1
        elif ratio <= ML_COVERAGE:
            ml += 1
    num_tracks = len(present)
    return EvalReport(
        name=name,
        MOTA=1.0 - (fn + fp + idsw) / num_gt_boxes,
        FP=fp, FN=fn, IDSW=idsw,
        Frag=sum(frag.values()),
        MT=mt, ML=ml,
        MT_pct=100.0 * mt / num_tracks,
        ML_pct=100.0 * ml / num_tracks,
        num_gt_boxes=num_gt_boxes,
        num_gt_tracks=num_tracks,
    )


def identity_counts(gt: list[MotRecord], pred: list[MotRecord]) -> tuple[int, int, int]:
    """(IDTP, IDFP, IDFN) under one optimal global trajectory pairing."""
    if not gt:
        raise EvaluationError("empty ground truth")
    gt_tracks = _by_track(gt)
    pred_tracks = _by_track(pred)
    gt_ids = sorted(gt_tracks)
    pred_ids = sorted(pred_tracks)
    len_gt = sum(len(t) for t in gt_tracks.values())
    len_pred = sum(len(t) for t in pred_tracks.values())

    idtp = 0
    if pred_ids:
        overlap = np.zeros((len(gt_ids), len(pred_ids)))
        for i, g in enumerate(gt_ids):
            for j, p in enumerate(pred_ids):
                frames = set(gt_tracks[g]) & set(pred_tracks[p])
                overlap[i, j] = sum(
                    1 for f in frames
                    if iou_xywh(gt_tracks[g][f], pred_tracks[p][f]) >= IOU_THRESHOLD)
        # maximizing matched frames == minimizing IDFP + IDFN
        for i, j in hungarian(-overlap):
            idtp += int(overlap[i, j])
    return idtp, len_pred - idtp, len_gt - idtp


def _identity_rates(idtp: int, idfp: int, idfn: int) -> tuple[float, float, float]:
    denom = 2 * idtp + idfp + idfn
    f1 = 2.0 * idtp / denom if denom else 1.0
    idp = idtp / (idtp + idfp) if (idtp + idfp) else 0.0
    idr = idtp / (idtp + idfn) if (idtp + idfn) else 0.0
    return f1, idp, idr


def idf1(gt: list[MotRecord], pred: list[MotRecord]) -> tuple[float, float, float]:
    """(IDF1, IDP, IDR); IDF1 = 2*IDTP / (2*IDTP + IDFP + IDFN)."""
    return _identity_rates(*identity_counts(gt, pred))


def evaluate(gt: list[MotRecord], pred: list[MotRecord], name: str = "") -> EvalReport:
    """Full report: CLEAR-MOT counts plus the identity scores."""
    report = clear_mot(gt, pred, name=name)
    report.IDTP, report.IDFP, report.IDFN = identity_counts(gt, pred)
    report.IDF1, report.IDP, report.IDR = _identity_rates(
        report.IDTP, report.IDFP, report.IDFN)
    return report


def combine_reports(reports: list[EvalReport]) -> EvalReport:
    """Aggregate per-sequence reports by summing counts (MOTChallenge style)."""
    if not reports:
        raise EvaluationError("no reports to combine")
    total = EvalReport(name="OVERALL", sequences=list(reports))
    for r in reports:
        total.FP += r.FP
        total.FN += r.FN
        total.IDSW += r.IDSW
        total.Frag += r.Frag
        total.MT += r.MT
        total.ML += r.ML
        total.num_gt_boxes += r.num_gt_boxes
        total.num_gt_tracks += r.num_gt_tracks
        total.IDTP += r.IDTP
        total.IDFP += r.IDFP
        total.IDFN += r.IDFN
    total.MOTA = 1.0 - (total.FN + total.FP + total.IDSW) / total.num_gt_boxes
    total.IDF1, total.IDP, total.IDR = _identity_rates(
        total.IDTP, total.IDFP, total.IDFN)
    total.MT_pct = 100.0 * total.MT / total.num_gt_tracks
    total.ML_pct = 100.0 * total.ML / total.num_gt_tracks
    return total
