"""MOT-Challenge CSV parsing/writing and the plain-text embedding store.

Record lines are ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z``
(at least 7 fields; x/y/z default to -1).  Floats are written with
shortest round-trip formatting, so parse(write(parse(text))) is
bit-exact.

Embedding files carry a ``dim=D`` header followed by
``frame,det_index,e_0,...,e_{D-1}`` lines keyed by the detection's
0-based position among its frame's rows in the detection file.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ParseError
from .config import load_config  # re-exported: config loading is part of the I/O surface

__all__ = ["MotRecord", "parse_mot", "write_mot", "EmbeddingStore",
           "load_embeddings", "load_config", "records_by_frame"]


@dataclass
class MotRecord:
    """One detection or track box in one frame; id is -1 for raw detections."""

    frame: int
    id: int
    bb_left: float
    bb_top: float
    bb_width: float
    bb_height: float
    conf: float = 1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0

    @property
    def box(self) -> np.ndarray:
        return np.array([self.bb_left, self.bb_top, self.bb_width, self.bb_height])


def _iter_lines(source) -> list[str]:
    if isinstance(source, str):
        return source.splitlines()
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source.read().splitlines()
    return list(source)


def parse_mot(source) -> list[MotRecord]:
    """Parse MOT CSV text (string, file object, or iterable of lines)."""
    records = []
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) < 7:
            raise ParseError(f"expected >= 7 comma-separated fields, got {len(fields)}",
                             line_no)
        try:
            frame = int(float(fields[0]))
            track_id = int(float(fields[1]))
            numbers = [float(v) for v in fields[2:10]]
        except ValueError as exc:
            raise ParseError(f"numeric parse failed: {exc}", line_no) from None
        numbers += [-1.0] * (8 - len(numbers))
        if frame < 1:
            raise ParseError(f"frame must be >= 1, got {frame}", line_no)
        records.append(MotRecord(frame, track_id, *numbers[:8]))
    return records


def _fmt(v: float) -> str:
    """Shortest decimal that round-trips; integers without trailing .0."""
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_mot(records: list[MotRecord]) -> str:
    """Render records sorted by (frame, id), one CSV row each."""
    lines = []
    for r in sorted(records, key=lambda r: (r.frame, r.id)):
        lines.append(",".join([
            str(r.frame), str(r.id), _fmt(r.bb_left), _fmt(r.bb_top),
            _fmt(r.bb_width), _fmt(r.bb_height), _fmt(r.conf),
            _fmt(r.x), _fmt(r.y), _fmt(r.z)]))
    return "\n".join(lines) + ("\n" if lines else "")


def records_by_frame(records: list[MotRecord]) -> dict[int, list[MotRecord]]:
    out: dict[int, list[MotRecord]] = {}
    for r in records:
        out.setdefault(r.frame, []).append(r)
    return out


class EmbeddingStore:
    """Immutable map (frame, det_index) -> embedding vector of fixed dim."""

    def __init__(self, dim: int):
        self.dim = dim
        self._data: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self._data

    def add(self, frame: int, det_index: int, vec: np.ndarray) -> None:
        key = (frame, det_index)
        if key in self._data:
            raise IntegrityError(f"duplicate embedding key {key}")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise IntegrityError(f"embedding at {key} has length {vec.shape[0]}, "
                                 f"expected {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise IntegrityError(f"non-finite embedding at {key}")
        self._data[key] = vec

    def get(self, frame: int, det_index: int) -> np.ndarray:
        return self._data[(frame, det_index)]

    def validate_covers(self, detections: dict[int, list[MotRecord]]) -> None:
        """Every detection row must have an embedding (load-time check)."""
        for frame, rows in detections.items():
            for idx in range(len(rows)):
                if (frame, idx) not in self._data:
                    raise IntegrityError(
                        f"no embedding for detection {idx} in frame {frame}")


def load_embeddings(source) -> EmbeddingStore:
    """Read an embedding CSV: header ``dim=D``, then frame,det_index,e_0..."""
    lines = _iter_lines(source)
    if not lines or not lines[0].strip().startswith("dim="):
        raise ParseError("missing 'dim=D' header", 1)
    try:
        dim = int(lines[0].strip()[4:])
    except ValueError:
        raise ParseError(f"bad dim header {lines[0].strip()!r}", 1) from None
    store = EmbeddingStore(dim)
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != dim + 2:
            raise ParseError(f"expected {dim + 2} fields, got {len(fields)}", line_no)
        try:
            frame = int(fields[0])
            det_index = int(fields[1])
            vec = np.array([float(v) for v in fields[2:]])
        except ValueError as exc:
            raise ParseError(f"numeric parse failed: {exc}", line_no) from None
        try:
            store.add(frame, det_index, vec)
        except IntegrityError as exc:
            raise IntegrityError(f"line {line_no}: {exc}") from None
    return store


def write_embeddings(store_rows: list[tuple[int, int, np.ndarray]], dim: int) -> str:
    """Render embedding rows (frame, det_index, vector) under a dim header."""
    lines = [f"dim={dim}"]
    for frame, det_index, vec in store_rows:
        lines.append(",".join([str(frame), str(det_index)] + [_fmt(v) for v in vec]))
    return "\n".join(lines) + "\n"
