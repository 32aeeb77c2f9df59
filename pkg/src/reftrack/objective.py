"""Assignment and losses.

Matching uses an exact Hungarian solve with a deterministic canonicalization:
among all minimum-cost assignments, the one that favors the lowest prediction
row (and, within a row, the lowest target column) is returned. Losses follow
the focal + L1 + GIoU recipe; track queries are supervised by identity, detect
queries through the matched permutation, and the refined (temporal) outputs
reuse that same permutation with their own weight set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from reftrack.domain import BoundingBox
from reftrack.harness.config import LossConfig, TemporalConfig, TrainConfig
from reftrack.model.network import FramePass, TrackingModel
from reftrack.model.tracker import HeadOutput

# ---------------------------------------------------------------------------
# assignment


@dataclass(frozen=True)
class MatchResult:
    """Matched (prediction, target) pairs plus the total assignment cost."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    @property
    def mapping(self) -> dict[int, int]:
        return dict(self.pairs)


def _optimal_cost(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_match(cost) -> MatchResult:
    """Minimum-cost assignment over an (n, m) cost matrix.

    Matches min(n, m) pairs. Ties are broken toward the lowest prediction
    row, then the lowest target column, so equal-cost inputs always yield
    the same pairing. Non-finite costs are rejected.
    """
    if isinstance(cost, Tensor):
        cost = cost.detach().cpu().numpy()
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-d, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    k = min(n, m)
    if k == 0:
        return MatchResult((), 0.0)

    best = _optimal_cost(cost)
    tol = 1e-9 * max(1.0, abs(best))
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(m))
    fixed = 0.0
    for i in range(n):
        if len(pairs) == k:
            break
        for j in free_cols:
            need = k - len(pairs) - 1
            take = fixed + cost[i, j]
            if need:
                rows_after = range(i + 1, n)
                cols_after = [c for c in free_cols if c != j]
                if len(cols_after) < need or n - i - 1 < need:
                    continue
                take += _optimal_cost(cost[np.ix_(rows_after, cols_after)])
            if abs(take - best) <= tol:
                pairs.append((i, j))
                free_cols.remove(j)
                fixed += cost[i, j]
                break
    total = float(sum(cost[i, j] for i, j in pairs))
    return MatchResult(tuple(pairs), total)


# ---------------------------------------------------------------------------
# elementary losses


def focal_loss(prob, target, alpha: float = 0.25, gamma: float = 2.0, eps: float = 1e-6) -> Tensor:
    """Binary focal term on probabilities; elementwise, no reduction."""
    p = prob if isinstance(prob, Tensor) else torch.tensor(prob, dtype=torch.float64)
    t = target if isinstance(target, Tensor) else torch.tensor(target, dtype=p.dtype)
    t = t.to(p.dtype)
    p = p.clamp(eps, 1.0 - eps)
    pos = -alpha * t * (1.0 - p) ** gamma * torch.log(p)
    neg = -(1.0 - alpha) * (1.0 - t) * p ** gamma * torch.log1p(-p)
    return pos + neg


def _corners(boxes: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    return (
        boxes[..., 0] - boxes[..., 2] / 2,
        boxes[..., 1] - boxes[..., 3] / 2,
        boxes[..., 0] + boxes[..., 2] / 2,
        boxes[..., 1] + boxes[..., 3] / 2,
    )


def giou_pairs(a: Tensor, b: Tensor) -> Tensor:
    """Generalized IoU of paired (..., 4) center-size boxes; differentiable."""
    ax1, ay1, ax2, ay2 = _corners(a)
    bx1, by1, bx2, by2 = _corners(b)
    ix = (torch.minimum(ax2, bx2) - torch.maximum(ax1, bx1)).clamp(min=0)
    iy = (torch.minimum(ay2, by2) - torch.maximum(ay1, by1)).clamp(min=0)
    inter = ix * iy
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    overlap = torch.where(union > 0, inter / union.clamp(min=1e-12), torch.zeros_like(union))
    ex = torch.maximum(ax2, bx2) - torch.minimum(ax1, bx1)
    ey = torch.maximum(ay2, by2) - torch.minimum(ay1, by1)
    enclose = ex * ey
    penalty = torch.where(
        enclose > 0, (enclose - union) / enclose.clamp(min=1e-12), torch.zeros_like(enclose)
    )
    return overlap - penalty


def box_loss(pred: Tensor, gt: Tensor, l1_weight: float, giou_weight: float) -> Tensor:
    """Per-pair weighted L1 + (1 - GIoU); shape (...,)."""
    l1 = (pred - gt).abs().sum(dim=-1)
    return l1_weight * l1 + giou_weight * (1.0 - giou_pairs(pred, gt))


@dataclass(frozen=True)
class TermWeights:
    cls: float
    l1: float
    giou: float
    ref: float
    alpha: float = 0.25
    gamma: float = 2.0


def intra_weights(cfg: LossConfig) -> TermWeights:
    return TermWeights(cfg.cls, cfg.l1, cfg.giou, cfg.ref, cfg.focal_alpha, cfg.focal_gamma)


def refined_weights(cfg: LossConfig) -> TermWeights:
    return TermWeights(cfg.st_cls, cfg.st_l1, cfg.st_giou, cfg.st_ref, cfg.focal_alpha, cfg.focal_gamma)


def build_match_cost(
    probs: Tensor, boxes: Tensor, gt_boxes: Tensor, w: TermWeights
) -> np.ndarray:
    """Detect-query matching cost: box terms plus the focal cost of claiming
    a target (class target 1). Referring plays no part in matching."""
    with torch.no_grad():
        l1 = torch.cdist(boxes, gt_boxes, p=1)
        # pairwise giou via broadcasting (N, 1, 4) against (1, M, 4)
        g = giou_pairs(
            boxes.unsqueeze(1).expand(-1, gt_boxes.shape[0], -1),
            gt_boxes.unsqueeze(0).expand(boxes.shape[0], -1, -1),
        )
        cls = focal_loss(probs, torch.ones_like(probs), w.alpha, w.gamma)
        cost = w.l1 * l1 + w.giou * (1.0 - g) + w.cls * cls.unsqueeze(1)
    return cost.cpu().numpy()


# ---------------------------------------------------------------------------
# per-frame losses


@dataclass
class TrackTargets:
    """Slot-aligned supervision for the track block."""

    visible: Tensor   # (K,) float 0/1
    boxes: Tensor     # (K, 4); rows only read where visible
    referent: Tensor  # (K,) float 0/1

    def __post_init__(self):
        k = self.visible.shape[0]
        if self.boxes.shape != (k, 4) or self.referent.shape != (k,):
            raise ValueError("track target shapes disagree with slot count")


def _zeros(dtype, device) -> Tensor:
    return torch.zeros((), dtype=dtype, device=device)


def track_loss(out: HeadOutput, rows: slice, targets: TrackTargets, w: TermWeights) -> dict[str, Tensor]:
    """Identity-aligned supervision: class everywhere, box and referring only
    on rows whose object is visible."""
    probs = out.class_probs[rows]
    boxes = out.boxes[rows]
    refs = out.ref_probs[rows]
    k = probs.shape[0]
    if targets.visible.shape[0] != k:
        raise ValueError(f"track block has {k} rows but targets cover {targets.visible.shape[0]}")
    dtype, device = probs.dtype, probs.device
    if k == 0:
        z = _zeros(dtype, device)
        return {"cls": z, "l1": z.clone(), "giou": z.clone(), "ref": z.clone()}
    vis = targets.visible.to(dtype)
    cls = w.cls * focal_loss(probs, vis, w.alpha, w.gamma).sum()
    mask = targets.visible > 0.5
    if mask.any():
        pb, gb = boxes[mask], targets.boxes.to(dtype)[mask]
        l1 = w.l1 * (pb - gb).abs().sum()
        giou_term = w.giou * (1.0 - giou_pairs(pb, gb)).sum()
        ref = w.ref * focal_loss(refs[mask], targets.referent.to(dtype)[mask], w.alpha, w.gamma).sum()
    else:
        l1, giou_term, ref = _zeros(dtype, device), _zeros(dtype, device), _zeros(dtype, device)
    return {"cls": cls, "l1": l1, "giou": giou_term, "ref": ref}


def detect_loss(
    out: HeadOutput,
    rows: slice,
    newborn_boxes: Tensor,  # (M, 4)
    newborn_ref: Tensor,    # (M,)
    w: TermWeights,
) -> tuple[dict[str, Tensor], MatchResult]:
    """Hungarian-matched supervision for the detect block. Returns the match
    so the refined-output loss can reuse it verbatim."""
    probs = out.class_probs[rows]
    boxes = out.boxes[rows]
    refs = out.ref_probs[rows]
    dtype, device = probs.dtype, probs.device
    m = newborn_boxes.shape[0]
    if m == 0:
        match = MatchResult((), 0.0)
    else:
        cost = build_match_cost(probs, boxes, newborn_boxes.to(dtype), w)
        match = hungarian_match(cost)
    return _matched_terms(probs, boxes, refs, newborn_boxes, newborn_ref, match, w), match


def _matched_terms(
    probs: Tensor,
    boxes: Tensor,
    refs: Tensor,
    gt_boxes: Tensor,
    gt_ref: Tensor,
    match: MatchResult,
    w: TermWeights,
) -> dict[str, Tensor]:
    dtype, device = probs.dtype, probs.device
    cls_target = torch.zeros_like(probs)
    for i, _ in match.pairs:
        cls_target[i] = 1.0
    cls = w.cls * focal_loss(probs, cls_target, w.alpha, w.gamma).sum()
    if match.pairs:
        pi = torch.tensor([i for i, _ in match.pairs], dtype=torch.long, device=device)
        gj = torch.tensor([j for _, j in match.pairs], dtype=torch.long, device=device)
        pb, gb = boxes[pi], gt_boxes.to(dtype)[gj]
        l1 = w.l1 * (pb - gb).abs().sum()
        giou_term = w.giou * (1.0 - giou_pairs(pb, gb)).sum()
        ref = w.ref * focal_loss(refs[pi], gt_ref.to(dtype)[gj], w.alpha, w.gamma).sum()
    else:
        l1, giou_term, ref = _zeros(dtype, device), _zeros(dtype, device), _zeros(dtype, device)
    return {"cls": cls, "l1": l1, "giou": giou_term, "ref": ref}


def spatio_temporal_loss(
    refined: HeadOutput,
    n_detect: int,
    targets: TrackTargets,
    newborn_boxes: Tensor,
    newborn_ref: Tensor,
    match: MatchResult,
    w: TermWeights,
) -> dict[str, Tensor]:
    """Same term structure as the intra-frame loss, applied to the refined
    outputs with the refined weight set. ``match`` must be the permutation
    produced by ``detect_loss`` on the same frame; no matching happens here."""
    track = track_loss(refined, slice(n_detect, None), targets, w)
    det = _matched_terms(
        refined.class_probs[:n_detect],
        refined.boxes[:n_detect],
        refined.ref_probs[:n_detect],
        newborn_boxes,
        newborn_ref,
        match,
        w,
    )
    return {key: track[key] + det[key] for key in track}


# ---------------------------------------------------------------------------
# clip ground truth and augmentation


@dataclass
class FrameGT:
    """Visible objects (id -> normalized box) and the referent ids."""

    boxes: dict[int, BoundingBox]
    referents: frozenset[int]


@dataclass
class ClipSample:
    video_id: str
    expression_key: str
    token_ids: Tensor
    images: Tensor          # (L, 3, H, W)
    gts: list[FrameGT]


def augment_clip(
    gts: list[FrameGT], erase_prob: float, insert_prob: float, rng: np.random.Generator
) -> tuple[list[FrameGT], list[int]]:
    """Track erasing and distractor insertion plans.

    Erasing truncates an object's ground truth at a random mid-clip frame, so
    the model sees tracks that vanish. The insert plan counts distractor track
    queries to fabricate per frame (never on the first frame, which has no
    previous frame to have tracked anything).
    """
    length = len(gts)
    out = [FrameGT(dict(g.boxes), g.referents) for g in gts]
    ids = sorted({oid for g in gts for oid in g.boxes})
    for oid in ids:
        present = [t for t, g in enumerate(gts) if oid in g.boxes]
        first, last = present[0], present[-1]
        if last > first and rng.random() < erase_prob:
            cut = int(rng.integers(first + 1, last + 1))
            for t in range(cut, length):
                out[t].boxes.pop(oid, None)
    for t in range(length):
        out[t] = FrameGT(out[t].boxes, frozenset(out[t].referents & set(out[t].boxes)))
    plan = [0] * length
    for t in range(1, length):
        if rng.random() < insert_prob:
            plan[t] = 1
    return out, plan


# ---------------------------------------------------------------------------
# clip engine


@dataclass
class LossBreakdown:
    loss: Tensor | None               # scalar, for backward; None once consumed
    components: dict[str, float]
    intra: float
    refined_total: float
    final: float


_COMPONENT_KEYS = (
    "track_cls", "track_l1", "track_giou", "track_ref",
    "detect_cls", "detect_l1", "detect_giou", "detect_ref",
    "st_cls", "st_l1", "st_giou", "st_ref",
)


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return float(value.detach())
    return float(value)


@dataclass
class _TrainSlot:
    identity: int
    embedding: Tensor
    box: Tensor
    grace: int = 0


class ClipEngine:
    """Runs a model over a clip under teacher-forced identity bookkeeping.

    Track slots follow ground truth: a slot lives while its object stays
    visible, receives one frame of empty-target supervision when the object
    disappears, then drops. Matched detect queries are promoted to track
    slots for the following frame regardless of score. Distractor slots
    (negative identities) are always supervised toward empty.
    """

    DISTRACTOR_START = -10

    def __init__(self, loss_cfg: LossConfig, temporal_cfg: TemporalConfig, box_jitter: float = 0.0):
        self.loss_cfg = loss_cfg
        self.temporal_cfg = temporal_cfg
        self.box_jitter = box_jitter
        self.w_intra = intra_weights(loss_cfg)
        self.w_refined = refined_weights(loss_cfg)

    def run(
        self,
        model: TrackingModel,
        sample: ClipSample,
        insert_plan: list[int] | None = None,
        rng: np.random.Generator | None = None,
    ) -> LossBreakdown:
        device = sample.images.device
        dtype = next(model.parameters()).dtype
        images = sample.images.to(dtype)
        plan = insert_plan if insert_plan is not None else [0] * len(sample.gts)
        rng = rng or np.random.default_rng(0)

        memory = model.new_memory(dtype=dtype)
        window = self.temporal_cfg.window()
        slots: list[_TrainSlot] = []
        next_distractor = self.DISTRACTOR_START

        acc = {key: torch.zeros((), dtype=dtype, device=device) for key in _COMPONENT_KEYS}

        for t, gt in enumerate(sample.gts):
            if slots:
                stacked = torch.stack([s.embedding for s in slots])
                track_embeddings = model.track_transform(stacked.unsqueeze(0)).squeeze(0)
                track_boxes = torch.stack([s.box for s in slots])
                if self.box_jitter > 0:
                    # noise on the carried boxes teaches re-locking from an
                    # imperfect prior, which is the state after long rollouts
                    noise = torch.from_numpy(
                        rng.normal(0.0, self.box_jitter, size=(len(slots), 4))
                    ).to(dtype=track_boxes.dtype)
                    jittered = track_boxes + noise
                    track_boxes = torch.cat(
                        [jittered[:, :2].clamp(0.0, 1.0), jittered[:, 2:].clamp(1e-3, 1.0)],
                        dim=1,
                    )
            else:
                track_embeddings = track_boxes = None
            identities = [s.identity for s in slots]

            front = model.encode_frame(images[t], sample.token_ids)
            fp = model.frame_pass(
                front, track_embeddings, track_boxes, identities, memory, t, window
            )
            n_detect = fp.n_detect

            targets = self._track_targets(slots, gt, dtype, device)
            newborn_ids = sorted(set(gt.boxes) - {s.identity for s in slots})
            newborn_boxes = torch.from_numpy(
                np.array([gt.boxes[i].as_array() for i in newborn_ids], dtype=np.float64)
            ).to(dtype=dtype, device=device).reshape(len(newborn_ids), 4)
            newborn_ref = torch.tensor(
                [1.0 if i in gt.referents else 0.0 for i in newborn_ids], dtype=dtype, device=device
            )

            tr = track_loss(fp.raw, slice(n_detect, None), targets, self.w_intra)
            det, match = detect_loss(fp.raw, slice(0, n_detect), newborn_boxes, newborn_ref, self.w_intra)
            for key, val in tr.items():
                acc[f"track_{key}"] = acc[f"track_{key}"] + val
            for key, val in det.items():
                acc[f"detect_{key}"] = acc[f"detect_{key}"] + val
            if model.temporal is not None:
                st = spatio_temporal_loss(
                    fp.refined, n_detect, targets, newborn_boxes, newborn_ref, match, self.w_refined
                )
                for key, val in st.items():
                    acc[f"st_{key}"] = acc[f"st_{key}"] + val

            slots = self._advance_slots(
                slots, fp, match, newborn_ids, gt, plan, t, rng, memory, next_distractor
            )
            next_distractor = min([s.identity for s in slots if s.identity < 0] + [self.DISTRACTOR_START]) - 1

        intra_t = sum(acc[k] for k in _COMPONENT_KEYS if not k.startswith("st_"))
        st_t = sum(acc[k] for k in _COMPONENT_KEYS if k.startswith("st_"))
        loss = intra_t + st_t
        components = {k: float(_scalar(acc[k])) for k in _COMPONENT_KEYS}
        return LossBreakdown(
            loss=loss,
            components=components,
            intra=float(_scalar(intra_t)),
            refined_total=float(_scalar(st_t)),
            final=float(_scalar(loss)),
        )

    def _track_targets(self, slots: list[_TrainSlot], gt: FrameGT, dtype, device) -> TrackTargets:
        k = len(slots)
        visible = torch.zeros(k, dtype=dtype, device=device)
        boxes = torch.zeros(k, 4, dtype=dtype, device=device)
        referent = torch.zeros(k, dtype=dtype, device=device)
        for idx, slot in enumerate(slots):
            if slot.identity >= 0 and slot.identity in gt.boxes:
                visible[idx] = 1.0
                boxes[idx] = torch.tensor(gt.boxes[slot.identity].as_array(), dtype=dtype, device=device)
                referent[idx] = 1.0 if slot.identity in gt.referents else 0.0
        return TrackTargets(visible, boxes, referent)

    def _advance_slots(
        self,
        slots: list[_TrainSlot],
        fp: FramePass,
        match: MatchResult,
        newborn_ids: list[int],
        gt: FrameGT,
        plan: list[int],
        t: int,
        rng: np.random.Generator,
        memory,
        next_distractor: int,
    ) -> list[_TrainSlot]:
        n_detect = fp.n_detect
        boxes = fp.refined.boxes
        scores = fp.refined.class_probs

        # update and filter existing slots
        survivors: list[_TrainSlot] = []
        push_rows: list[int] = []
        push_ids: list[int] = []
        for k, slot in enumerate(slots):
            row = n_detect + k
            slot.embedding = fp.embeddings[row]
            slot.box = boxes[row]
            push_rows.append(row)
            push_ids.append(slot.identity)
            if slot.identity >= 0 and slot.identity in gt.boxes:
                survivors.append(slot)

        # promote matched detect queries
        for row, j in match.pairs:
            oid = newborn_ids[j]
            survivors.append(_TrainSlot(oid, fp.embeddings[row], boxes[row]))
            push_rows.append(row)
            push_ids.append(oid)

        if memory is not None and push_rows:
            source = fp.summary if fp.summary is not None else fp.embeddings
            memory.push(source[push_rows], push_ids, scores[push_rows].detach(), t)

        # distractors for the next frame
        if t + 1 < len(plan) and plan[t + 1]:
            matched_rows = {row for row, _ in match.pairs}
            candidates = [r for r in range(n_detect) if r not in matched_rows]
            if candidates:
                row = candidates[int(rng.integers(len(candidates)))]
                survivors.append(
                    _TrainSlot(next_distractor, fp.embeddings[row].detach(), boxes[row].detach())
                )
        return survivors


# ---------------------------------------------------------------------------
# dataset sampling and the training loop


class ClipSampler:
    """Uniformly samples (video, expression, window) clips from a dataset."""

    def __init__(self, dataset, vocab, clip_length: int, seed: int):
        from reftrack.harness.datafiles import expression_entries

        self.dataset = dataset
        self.vocab = vocab
        self.clip_length = clip_length
        self.rng = np.random.default_rng(seed)
        self.entries = expression_entries(dataset)
        if not self.entries:
            raise ValueError("dataset holds no expressions")

    def sample(self) -> ClipSample:
        video_id, key, expr = self.entries[int(self.rng.integers(len(self.entries)))]
        video = self.dataset.videos[video_id]
        total = video.frames.shape[0]
        length = min(self.clip_length, total)
        t0 = int(self.rng.integers(0, total - length + 1))
        images = torch.from_numpy(
            np.ascontiguousarray(video.frames[t0 : t0 + length].transpose(0, 3, 1, 2))
        )
        gts = []
        for t in range(t0, t0 + length):
            boxes = {}
            for oid, track in video.tracks.items():
                st = track.state_at(t)
                if st is not None:
                    boxes[oid] = st.box
            gts.append(FrameGT(boxes, expr.referents_at(t) & frozenset(boxes)))
        token_ids = torch.tensor(self.vocab.encode(expr.text), dtype=torch.long)
        return ClipSample(video_id, key, token_ids, images, gts)


@dataclass
class TrainLogEntry:
    step: int
    components: dict[str, float]
    total: float
    lr: float


class Trainer:
    def __init__(
        self,
        model: TrackingModel,
        dataset,
        vocab,
        loss_cfg: LossConfig,
        temporal_cfg: TemporalConfig,
        train_cfg: TrainConfig,
    ):
        self.model = model
        self.train_cfg = train_cfg
        self.engine = ClipEngine(loss_cfg, temporal_cfg, box_jitter=train_cfg.track_jitter)
        self.sampler = ClipSampler(dataset, vocab, train_cfg.clip_length, train_cfg.seed)
        self.aug_rng = np.random.default_rng(train_cfg.seed + 1)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
        self.step_index = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self) -> LossBreakdown:
        """One optimizer step: gradients averaged over ``batch_clips`` clips."""
        cfg = self.train_cfg
        if self.step_index == cfg.lr_drop_step:
            for group in self.optimizer.param_groups:
                group["lr"] *= cfg.lr_drop_factor
        self.model.train()
        self.optimizer.zero_grad()
        batch = max(1, cfg.batch_clips)
        comp_sum: dict[str, float] = {k: 0.0 for k in _COMPONENT_KEYS}
        intra_sum = refined_sum = final_sum = 0.0
        for _ in range(batch):
            sample = self.sampler.sample()
            gts, plan = augment_clip(sample.gts, cfg.erase_prob, cfg.insert_prob, self.aug_rng)
            sample.gts = gts
            breakdown = self.engine.run(self.model, sample, insert_plan=plan, rng=self.aug_rng)
            (breakdown.loss / batch).backward()
            for key, val in breakdown.components.items():
                comp_sum[key] += val / batch
            intra_sum += breakdown.intra / batch
            refined_sum += breakdown.refined_total / batch
            final_sum += breakdown.final / batch
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()
        self.step_index += 1
        return LossBreakdown(
            loss=None,
            components=comp_sum,
            intra=intra_sum,
            refined_total=refined_sum,
            final=final_sum,
        )

    def run(self, steps: int, log_hook=None) -> list[TrainLogEntry]:
        log: list[TrainLogEntry] = []
        for _ in range(steps):
            breakdown = self.step()
            entry = TrainLogEntry(
                step=self.step_index,
                components=breakdown.components,
                total=breakdown.final,
                lr=self.lr,
            )
            log.append(entry)
            if log_hook is not None:
                log_hook(entry)
        return log
