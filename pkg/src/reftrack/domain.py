"""Core data model shared by every stage: boxes, object states, tracks,
expressions, and prediction records.

All geometry lives in normalized center-size coordinates (fractions of image
width/height). Pixel corner forms appear only at file boundaries; see
``reftrack.harness.datafiles``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

ATTRIBUTE_CATEGORIES = ("class", "color", "position", "action", "direction")

EXPRESSION_SOURCES = ("template", "expanded", "manual")


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, normalized center-size form.

    Centers lie in [0, 1]; sizes in [0, 1]. Zero-width/height boxes are
    degenerate but representable so overlap helpers can treat them as
    area-zero instead of blowing up.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside [0,1]: ({self.cx}, {self.cy})")
        if not (0.0 <= self.w <= 1.0 and 0.0 <= self.h <= 1.0):
            raise ValueError(f"box size outside [0,1]: ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


def to_corners(box: BoundingBox) -> tuple[float, float, float, float]:
    """(x1, y1, x2, y2) corners; purely affine, no clamping."""
    return (
        box.cx - box.w / 2.0,
        box.cy - box.h / 2.0,
        box.cx + box.w / 2.0,
        box.cy + box.h / 2.0,
    )


def from_corners(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
    """Inverse of :func:`to_corners`. Rejects inverted boxes."""
    if x2 < x1 or y2 < y1:
        raise ValueError(f"inverted corners: ({x1}, {y1}, {x2}, {y2})")
    return BoundingBox((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def clamped_corners(box: BoundingBox) -> tuple[float, float, float, float]:
    """Corners clipped to the unit square; for rendering and file export."""
    x1, y1, x2, y2 = to_corners(box)
    clip = lambda v: min(1.0, max(0.0, v))
    return (clip(x1), clip(y1), clip(x2), clip(y2))


def _corner_iou(a: tuple, b: tuple) -> tuple[float, float]:
    """(intersection, union) of two corner tuples."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter, area_a + area_b - inter


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union on raw (unclamped) geometry; 0 for zero-area."""
    inter, union = _corner_iou(to_corners(a), to_corners(b))
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BoundingBox, b: BoundingBox) -> float:
    """Generalized IoU: iou minus the enclosing-box penalty (C - U) / C."""
    ca, cb = to_corners(a), to_corners(b)
    inter, union = _corner_iou(ca, cb)
    overlap = inter / union if union > 0.0 else 0.0
    ex = max(ca[2], cb[2]) - min(ca[0], cb[0])
    ey = max(ca[3], cb[3]) - min(ca[1], cb[1])
    enclose = ex * ey
    if enclose <= 0.0:
        return overlap
    return overlap - (enclose - union) / enclose


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (n, 4) and (m, 4) center-size arrays -> (n, m)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2
    ax2, ay2 = a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2
    bx1, by1 = b[:, 0] - b[:, 2] / 2, b[:, 1] - b[:, 3] / 2
    bx2, by2 = b[:, 0] + b[:, 2] / 2, b[:, 1] + b[:, 3] / 2
    ix = np.clip(np.minimum(ax2[:, None], bx2) - np.maximum(ax1[:, None], bx1), 0, None)
    iy = np.clip(np.minimum(ay2[:, None], by2) - np.maximum(ay1[:, None], by1), 0, None)
    inter = ix * iy
    union = (a[:, 2] * a[:, 3])[:, None] + b[:, 2] * b[:, 3] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


# ---------------------------------------------------------------------------
# object states and tracks


@dataclass(frozen=True)
class ObjectState:
    """One object at one frame: box plus its primary attribute per category."""

    frame: int
    object_id: int
    box: BoundingBox
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"negative frame: {self.frame}")
        for key in self.attributes:
            if key not in ATTRIBUTE_CATEGORIES:
                raise ValueError(f"unknown attribute category: {key!r}")


@dataclass(frozen=True)
class Track:
    """States of a single identity, ordered by strictly increasing frame."""

    object_id: int
    states: tuple[ObjectState, ...]

    def __post_init__(self):
        last = -1
        for st in self.states:
            if st.object_id != self.object_id:
                raise ValueError(
                    f"track {self.object_id} holds state of object {st.object_id}"
                )
            if st.frame <= last:
                raise ValueError(f"track {self.object_id}: frames not increasing")
            last = st.frame

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(st.frame for st in self.states)

    def state_at(self, frame: int) -> ObjectState | None:
        for st in self.states:
            if st.frame == frame:
                return st
        return None

    def frame_set(self) -> frozenset[int]:
        return frozenset(st.frame for st in self.states)


# ---------------------------------------------------------------------------
# expressions


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokens with punctuation stripped from the ends."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Expression:
    """A language query plus its frame-wise referent sets.

    ``referents`` maps frame -> ids of objects the text describes at that
    frame. Frames with empty referent sets are simply absent.
    """

    text: str
    referents: Mapping[int, frozenset[int]]
    source: str = "template"

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("empty expression text")
        if self.source not in EXPRESSION_SOURCES:
            raise ValueError(f"unknown expression source: {self.source!r}")
        frozen: dict[int, frozenset[int]] = {}
        for frame, ids in self.referents.items():
            if frame < 0:
                raise ValueError(f"negative referent frame: {frame}")
            if not ids:
                raise ValueError(f"empty referent set stored for frame {frame}")
            frozen[int(frame)] = frozenset(int(i) for i in ids)
        object.__setattr__(self, "referents", frozen)

    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def referents_at(self, frame: int) -> frozenset[int]:
        return self.referents.get(frame, frozenset())


def normalize_referents(raw: Mapping[int, Iterable[int]]) -> dict[int, frozenset[int]]:
    """Drop empty frames and freeze id sets."""
    return {int(f): frozenset(int(i) for i in ids) for f, ids in raw.items() if ids}


def validate_expression_references(expr: Expression, tracks: Mapping[int, Track]) -> None:
    """Every referent id must exist and be visible at the referenced frame."""
    for frame, ids in expr.referents.items():
        for oid in ids:
            track = tracks.get(oid)
            if track is None:
                raise ValueError(f"referent id {oid} has no track")
            if frame not in track.frame_set():
                raise ValueError(
                    f"referent id {oid} not visible at frame {frame}"
                )


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class PredictionRecord:
    """One emitted box: identity plus class and referring confidences."""

    expression_key: str
    frame: int
    track_id: int
    box: BoundingBox
    class_score: float
    referring_score: float

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"negative frame: {self.frame}")
        if not (0.0 <= self.class_score <= 1.0):
            raise ValueError(f"class score outside [0,1]: {self.class_score}")
        if not (0.0 <= self.referring_score <= 1.0):
            raise ValueError(f"referring score outside [0,1]: {self.referring_score}")
