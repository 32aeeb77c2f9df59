"""Referent-aware HOTA.

Ground truth for an expression is the set of referent boxes per frame;
every emitted prediction that survives the class/referring thresholds counts,
so a visible-but-not-referred object that gets predicted is a false positive.

The computation follows the reference HOTA procedure: a first pass
accumulates potential match counts (per-frame Jaccard-weighted similarity)
into a global alignment score per (gt id, pred id); a second pass solves one
optimal per-frame assignment on global score x similarity, and every
threshold alpha in {0.05, ..., 0.95} filters that single matching by
similarity >= alpha. Association terms then come from per-pair match counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from reftrack.domain import Expression, PredictionRecord, Track, iou_matrix
from reftrack.objective import hungarian_match

ALPHAS = np.arange(1, 20) * 0.05  # 0.05 .. 0.95
_BOUNDARY_EPS = 1e-12

_FIELDS = ("hota", "deta", "assa", "det_re", "det_pr", "ass_re", "ass_pr", "loc_a")


@dataclass
class FrameObservations:
    gt_ids: list[int]
    gt_boxes: np.ndarray    # (G_t, 4) normalized center-size
    pred_ids: list[int]
    pred_boxes: np.ndarray  # (P_t, 4)


@dataclass
class EvalCase:
    """One (video, expression) pair, thresholds already applied."""

    key: str
    frames: list[FrameObservations]

    @property
    def gt_total(self) -> int:
        return sum(len(f.gt_ids) for f in self.frames)

    @property
    def pred_total(self) -> int:
        return sum(len(f.pred_ids) for f in self.frames)

    @property
    def is_empty(self) -> bool:
        return self.gt_total == 0 and self.pred_total == 0


@dataclass
class MetricReport:
    hota: float
    deta: float
    assa: float
    det_re: float
    det_pr: float
    ass_re: float
    ass_pr: float
    loc_a: float
    per_alpha: dict[str, np.ndarray] = field(default_factory=dict)

    def as_row(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in _FIELDS}


def build_case(
    key: str,
    tracks: Mapping[int, Track],
    expression: Expression,
    predictions: Sequence[PredictionRecord],
    num_frames: int,
    class_threshold: float = 0.6,
    referring_threshold: float = 0.4,
) -> EvalCase:
    """Assemble per-frame referent GT and threshold-filtered predictions.

    Both thresholds are strict: a prediction participates only if its class
    score exceeds ``class_threshold`` and its referring score exceeds
    ``referring_threshold``.
    """
    frames = []
    for frame in range(num_frames):
        gt_ids = sorted(expression.referents_at(frame))
        gt_boxes = []
        for oid in gt_ids:
            track = tracks.get(oid)
            state = track.state_at(frame) if track is not None else None
            if state is None:
                raise ValueError(f"referent {oid} not visible at frame {frame}")
            gt_boxes.append(state.box.as_array())
        kept = [
            r
            for r in predictions
            if r.frame == frame
            and r.class_score > class_threshold
            and r.referring_score > referring_threshold
        ]
        kept.sort(key=lambda r: r.track_id)
        seen = set()
        for r in kept:
            if r.track_id in seen:
                raise ValueError(f"duplicate track id {r.track_id} at frame {frame}")
            seen.add(r.track_id)
        frames.append(
            FrameObservations(
                gt_ids=gt_ids,
                gt_boxes=np.array(gt_boxes, dtype=float).reshape(len(gt_ids), 4),
                pred_ids=[r.track_id for r in kept],
                pred_boxes=np.array(
                    [r.box.as_array() for r in kept], dtype=float
                ).reshape(len(kept), 4),
            )
        )
    return EvalCase(key, frames)


def compute_case(case: EvalCase) -> MetricReport:
    """HOTA family for one case; scalars are means over the alpha grid."""
    gt_ids = sorted({i for f in case.frames for i in f.gt_ids})
    pred_ids = sorted({i for f in case.frames for i in f.pred_ids})
    gmap = {oid: k for k, oid in enumerate(gt_ids)}
    pmap = {oid: k for k, oid in enumerate(pred_ids)}
    G, P = len(gt_ids), len(pred_ids)
    A = len(ALPHAS)

    gt_count = np.zeros(G)
    pred_count = np.zeros(P)
    potential = np.zeros((G, P))
    sims = []
    rowmaps = []
    colmaps = []
    for f in case.frames:
        rows = np.array([gmap[i] for i in f.gt_ids], dtype=int)
        cols = np.array([pmap[i] for i in f.pred_ids], dtype=int)
        sim = iou_matrix(f.gt_boxes, f.pred_boxes)
        sims.append(sim)
        rowmaps.append(rows)
        colmaps.append(cols)
        gt_count[rows] += 1
        pred_count[cols] += 1
        denom = sim.sum(axis=0, keepdims=True) + sim.sum(axis=1, keepdims=True) - sim
        jac = np.zeros_like(sim)
        np.divide(sim, denom, out=jac, where=denom > _BOUNDARY_EPS)
        if rows.size and cols.size:
            potential[np.ix_(rows, cols)] += jac

    global_score = np.zeros((G, P))
    if G and P:
        denom = gt_count[:, None] + pred_count[None, :] - potential
        np.divide(potential, denom, out=global_score, where=denom > 0)

    tp = np.zeros(A)
    fn = np.zeros(A)
    fp = np.zeros(A)
    loc = np.zeros(A)
    matches = np.zeros((A, G, P))
    for f, sim, rows, cols in zip(case.frames, sims, rowmaps, colmaps):
        if rows.size and cols.size:
            score = global_score[np.ix_(rows, cols)] * sim
            pairing = hungarian_match(-score).pairs
        else:
            pairing = ()
        pair_sims = np.array([sim[r, c] for r, c in pairing])
        for a, alpha in enumerate(ALPHAS):
            if len(pairing):
                keep = pair_sims >= alpha - _BOUNDARY_EPS
                kept = [p for p, ok in zip(pairing, keep) if ok]
            else:
                kept = []
            tp[a] += len(kept)
            fn[a] += rows.size - len(kept)
            fp[a] += cols.size - len(kept)
            for r, c in kept:
                matches[a, rows[r], cols[c]] += 1
                loc[a] += sim[r, c]

    per_alpha: dict[str, np.ndarray] = {name: np.zeros(A) for name in _FIELDS}
    for a in range(A):
        det_re = tp[a] / max(1.0, tp[a] + fn[a])
        det_pr = tp[a] / max(1.0, tp[a] + fp[a])
        det_a = tp[a] / max(1.0, tp[a] + fn[a] + fp[a])
        counts = matches[a]
        union = np.maximum(1.0, gt_count[:, None] + pred_count[None, :] - counts)
        ass_a = float((counts * (counts / union)).sum()) / max(1.0, tp[a])
        ass_re = float((counts * (counts / np.maximum(1.0, gt_count)[:, None])).sum()) / max(1.0, tp[a])
        ass_pr = float((counts * (counts / np.maximum(1.0, pred_count)[None, :])).sum()) / max(1.0, tp[a])
        loc_a = max(loc[a], _BOUNDARY_EPS) / max(1.0, tp[a])
        per_alpha["det_re"][a] = det_re
        per_alpha["det_pr"][a] = det_pr
        per_alpha["deta"][a] = det_a
        per_alpha["assa"][a] = ass_a
        per_alpha["ass_re"][a] = ass_re
        per_alpha["ass_pr"][a] = ass_pr
        per_alpha["hota"][a] = float(np.sqrt(det_a * ass_a))
        per_alpha["loc_a"][a] = loc_a

    scalars = {name: float(per_alpha[name].mean()) for name in _FIELDS}
    return MetricReport(**scalars, per_alpha=per_alpha)


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean per metric across expression reports."""
    if not reports:
        raise ValueError("nothing to aggregate")
    scalars = {
        name: float(np.mean([getattr(r, name) for r in reports])) for name in _FIELDS
    }
    per_alpha = {}
    if all(r.per_alpha for r in reports):
        per_alpha = {
            name: np.mean([r.per_alpha[name] for r in reports], axis=0) for name in _FIELDS
        }
    return MetricReport(**scalars, per_alpha=per_alpha)


def evaluate_cases(cases: Sequence[EvalCase]) -> tuple[dict[str, MetricReport], MetricReport]:
    """Per-case reports plus the cross-expression mean.

    Cases with no GT and no predictions are excluded from the mean; a case
    with predictions but no GT contributes zeros.
    """
    per_case: dict[str, MetricReport] = {}
    included = []
    for case in cases:
        if case.is_empty:
            continue
        report = compute_case(case)
        per_case[case.key] = report
        included.append(report)
    if not included:
        raise ValueError("every case was empty; nothing to evaluate")
    return per_case, aggregate(included)
