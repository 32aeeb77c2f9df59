"""On-disk formats and the dataset store.

Dataset layout under a root directory:

- ``dataset.json``         {"image_size": [H, W], "frames": T, "videos": [...]}
- ``frames/<vid>.npz``     rendered frames, key "frames", (T, H, W, 3) float32
- ``labels/<vid>.txt``     track lines: frame id type trunc occl alpha x1 y1 x2 y2 ...
- ``items.txt``            item lines: video object_id category value start end
- ``expressions/<vid>/<k>.json``  {"video", "text", "source", "label": {frame: [ids]}}

Boxes in text files are pixel corners; everything in memory is normalized
center-size. Prediction lines are ``frame track_id x1 y1 x2 y2 class_score
ref_score``. All writes go through an atomic temp-file + rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from reftrack.domain import (
    BoundingBox,
    Expression,
    ObjectState,
    PredictionRecord,
    Track,
    from_corners,
    normalize_referents,
    to_corners,
)
from reftrack.harness.errors import DataError
from reftrack.pipeline import ItemSpan, LanguageItem, spans_from_frames


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write(path: str | Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, payload) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# pixel <-> normalized boxes


def box_to_pixels(box: BoundingBox, image_size: tuple[int, int]) -> tuple[float, float, float, float]:
    h, w = image_size
    x1, y1, x2, y2 = to_corners(box)
    clip = lambda v, top: min(float(top), max(0.0, v))
    return clip(x1 * w, w), clip(y1 * h, h), clip(x2 * w, w), clip(y2 * h, h)


def box_from_pixels(
    x1: float, y1: float, x2: float, y2: float, image_size: tuple[int, int]
) -> BoundingBox:
    h, w = image_size
    clip = lambda v: min(1.0, max(0.0, v))
    return from_corners(clip(x1 / w), clip(y1 / h), clip(x2 / w), clip(y2 / h))


# ---------------------------------------------------------------------------
# track label files


def write_track_file(path: str | Path, tracks: Mapping[int, Track], image_size: tuple[int, int]) -> None:
    lines = []
    rows = []
    for oid in sorted(tracks):
        for st in tracks[oid].states:
            rows.append((st.frame, oid, st))
    rows.sort(key=lambda r: (r[0], r[1]))
    for frame, oid, st in rows:
        x1, y1, x2, y2 = box_to_pixels(st.box, image_size)
        cls = st.attributes.get("class", "object")
        lines.append(
            f"{frame} {oid} {cls} 0 0 -10 {x1:.2f} {y1:.2f} {x2:.2f} {y2:.2f}"
        )
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_track_file(path: str | Path, image_size: tuple[int, int]) -> dict[int, Track]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing track file: {path}")
    states: dict[int, list[ObjectState]] = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 10:
            raise DataError(f"{path}:{ln}: expected at least 10 fields, got {len(parts)}")
        try:
            frame, oid = int(parts[0]), int(parts[1])
            cls = parts[2]
            x1, y1, x2, y2 = (float(v) for v in parts[6:10])
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
        box = box_from_pixels(x1, y1, x2, y2, image_size)
        states.setdefault(oid, []).append(
            ObjectState(frame, oid, box, {"class": cls})
        )
    tracks = {}
    for oid, sts in states.items():
        sts.sort(key=lambda s: s.frame)
        try:
            tracks[oid] = Track(oid, tuple(sts))
        except ValueError as exc:
            raise DataError(f"{path}: object {oid}: {exc}") from exc
    return tracks


# ---------------------------------------------------------------------------
# item files


def write_items_file(path: str | Path, items_by_video: Mapping[str, Sequence[LanguageItem]]) -> None:
    lines = []
    for video in sorted(items_by_video):
        for item in items_by_video[video]:
            if any(ch.isspace() for ch in item.value):
                raise ValueError(f"item value with whitespace: {item.value!r}")
            for span in item.spans:
                lines.append(
                    f"{video} {span.object_id} {item.category} {item.value} {span.start} {span.end}"
                )
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_items_file(path: str | Path) -> dict[str, list[LanguageItem]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing items file: {path}")
    grouped: dict[str, dict[tuple[str, str], dict[int, set[int]]]] = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
        video, oid_s, category, value, start_s, end_s = parts
        try:
            oid, start, end = int(oid_s), int(start_s), int(end_s)
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
        if end < start:
            raise DataError(f"{path}:{ln}: span end {end} before start {start}")
        grouped.setdefault(video, {}).setdefault((category, value), {}).setdefault(
            oid, set()
        ).update(range(start, end + 1))
    out: dict[str, list[LanguageItem]] = {}
    for video, by_key in grouped.items():
        items = []
        for (category, value) in sorted(by_key):
            try:
                items.append(
                    LanguageItem(category, value, spans_from_frames(by_key[(category, value)]))
                )
            except ValueError as exc:
                raise DataError(f"{path}: {video}: {exc}") from exc
        out[video] = items
    return out


# ---------------------------------------------------------------------------
# expression files


def write_expression_file(path: str | Path, video: str, expression: Expression) -> None:
    payload = {
        "video": video,
        "text": expression.text,
        "source": expression.source,
        "label": {str(f): sorted(ids) for f, ids in sorted(expression.referents.items())},
    }
    write_json(path, payload)


def read_expression_file(path: str | Path) -> tuple[str, Expression]:
    payload = read_json(path)
    try:
        video = payload["video"]
        text = payload["text"]
        source = payload.get("source", "manual")
        label = payload.get("label", {})
        referents = normalize_referents({int(f): ids for f, ids in label.items()})
        return video, Expression(text, referents, source)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: bad expression file: {exc}") from exc


# ---------------------------------------------------------------------------
# prediction files


def write_predictions_file(
    path: str | Path, records: Sequence[PredictionRecord], image_size: tuple[int, int]
) -> None:
    lines = []
    for r in sorted(records, key=lambda r: (r.frame, r.track_id)):
        x1, y1, x2, y2 = box_to_pixels(r.box, image_size)
        lines.append(
            f"{r.frame} {r.track_id} {x1:.2f} {y1:.2f} {x2:.2f} {y2:.2f} "
            f"{r.class_score:.6f} {r.referring_score:.6f}"
        )
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_predictions_file(
    path: str | Path, image_size: tuple[int, int], expression_key: str = "expr"
) -> list[PredictionRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing predictions file: {path}")
    out = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DataError(f"{path}:{ln}: expected 8 fields, got {len(parts)}")
        try:
            frame, tid = int(parts[0]), int(parts[1])
            x1, y1, x2, y2, cls, ref = (float(v) for v in parts[2:])
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
        try:
            out.append(
                PredictionRecord(
                    expression_key, frame, tid,
                    box_from_pixels(x1, y1, x2, y2, image_size), cls, ref,
                )
            )
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# loss log / metric report


def append_loss_log(path: str | Path, entry: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as handle:
        handle.write(json.dumps(entry, sort_keys=True) + "\n")


def read_loss_log(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing loss log: {path}")
    out = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{ln}: corrupt loss log: {exc}") from exc
    return out


REPORT_COLUMNS = ("hota", "deta", "assa", "det_re", "det_pr", "ass_re", "ass_pr", "loc_a")


def write_metric_report(path: str | Path, per_expression: Mapping[str, object], overall) -> None:
    lines = ["expression," + ",".join(REPORT_COLUMNS)]
    for key in sorted(per_expression):
        row = per_expression[key].as_row()
        lines.append(key + "," + ",".join(f"{row[c]:.6f}" for c in REPORT_COLUMNS))
    row = overall.as_row()
    lines.append("OVERALL," + ",".join(f"{row[c]:.6f}" for c in REPORT_COLUMNS))
    atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# dataset store


@dataclass
class VideoData:
    video_id: str
    frames: np.ndarray  # (T, H, W, 3) float32
    tracks: dict[int, Track]
    expressions: list[tuple[str, Expression]] = field(default_factory=list)


@dataclass
class TrackingDataset:
    root: Path
    image_size: tuple[int, int]
    num_frames: int
    videos: dict[str, VideoData]

    def all_texts(self) -> list[str]:
        return [e.text for v in self.videos.values() for _, e in v.expressions]


def expression_entries(dataset: TrackingDataset) -> list[tuple[str, str, Expression]]:
    out = []
    for vid in sorted(dataset.videos):
        for key, expr in dataset.videos[vid].expressions:
            out.append((vid, key, expr))
    return out


def expression_key(video_id: str, index: int) -> str:
    return f"{video_id}/{index:04d}"


def save_dataset(videos: Sequence, root: str | Path) -> None:
    """Persist synthetic videos (frames, labels, items, expressions)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    image_size = None
    num_frames = None
    items_by_video = {}
    for video in videos:
        t, h, w, _ = video.frames.shape
        if image_size is None:
            image_size, num_frames = (h, w), t
        elif image_size != (h, w) or num_frames != t:
            raise ValueError("all videos in a dataset must share shape")
        frames_path = root / "frames" / f"{video.video_id}.npz"
        frames_path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=frames_path.parent, suffix=".npz", delete=False) as tmp:
            np.savez_compressed(tmp, frames=video.frames)
            tmp_path = tmp.name
        os.replace(tmp_path, frames_path)
        write_track_file(root / "labels" / f"{video.video_id}.txt", video.tracks, image_size)
        for idx, expr in enumerate(video.expressions):
            write_expression_file(
                root / "expressions" / video.video_id / f"{idx:04d}.json",
                video.video_id,
                expr,
            )
        items_by_video[video.video_id] = video.items
    write_items_file(root / "items.txt", items_by_video)
    write_json(
        root / "dataset.json",
        {
            "image_size": list(image_size),
            "frames": num_frames,
            "videos": sorted(v.video_id for v in videos),
        },
    )


def load_dataset(root: str | Path) -> TrackingDataset:
    root = Path(root)
    meta = read_json(root / "dataset.json")
    try:
        image_size = (int(meta["image_size"][0]), int(meta["image_size"][1]))
        num_frames = int(meta["frames"])
        video_ids = list(meta["videos"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad dataset.json in {root}: {exc}") from exc
    videos = {}
    for vid in video_ids:
        frames_path = root / "frames" / f"{vid}.npz"
        if not frames_path.exists():
            raise DataError(f"missing frames: {frames_path}")
        try:
            frames = np.load(frames_path)["frames"]
        except Exception as exc:
            raise DataError(f"corrupt frames file {frames_path}: {exc}") from exc
        tracks = read_track_file(root / "labels" / f"{vid}.txt", image_size)
        exprs = []
        expr_dir = root / "expressions" / vid
        if expr_dir.exists():
            for idx, path in enumerate(sorted(expr_dir.glob("*.json"))):
                evid, expr = read_expression_file(path)
                if evid != vid:
                    raise DataError(f"{path}: video field {evid!r} != directory {vid!r}")
                exprs.append((expression_key(vid, idx), expr))
        videos[vid] = VideoData(vid, frames, tracks, exprs)
    return TrackingDataset(root, image_size, num_frames, videos)


def resolve_data_root(path: str) -> Path:
    """Relative paths resolve against $REFTRACK_DATA_ROOT when it is set."""
    p = Path(path)
    base = os.environ.get("REFTRACK_DATA_ROOT")
    if not p.is_absolute() and base:
        return Path(base) / p
    return p


# ---------------------------------------------------------------------------
# foreign expression corpora (for corpus statistics)


def load_expression_corpus(root: str | Path) -> tuple[dict[str, list[Expression]], dict[str, set[int]]]:
    """Expressions per video plus known object ids per video.

    Understands both this package's dataset layout and a foreign archive
    layout with ``expression/<video>/*.json`` files carrying a sentence and a
    frame->ids label map. Object ids fall back to the union of referents when
    no label files exist.
    """
    root = Path(root)
    if (root / "dataset.json").exists():
        dataset = load_dataset(root)
        exprs = {
            vid: [e for _, e in v.expressions] for vid, v in dataset.videos.items()
        }
        objects = {vid: set(v.tracks) for vid, v in dataset.videos.items()}
        return exprs, objects

    expr_root = None
    for name in ("expression", "expressions"):
        if (root / name).is_dir():
            expr_root = root / name
            break
    if expr_root is None:
        raise DataError(f"no expression corpus found under {root}")
    exprs: dict[str, list[Expression]] = {}
    objects: dict[str, set[int]] = {}
    for video_dir in sorted(p for p in expr_root.iterdir() if p.is_dir()):
        vid = video_dir.name
        exprs[vid] = []
        objects.setdefault(vid, set())
        for path in sorted(video_dir.glob("*.json")):
            payload = read_json(path)
            text = payload.get("text") or payload.get("sentence") or payload.get("expression")
            if not text:
                raise DataError(f"{path}: no expression text field")
            label = payload.get("label", {}) or {}
            try:
                referents = normalize_referents(
                    {int(f): [int(i) for i in ids] for f, ids in label.items()}
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad label map: {exc}") from exc
            exprs[vid].append(Expression(str(text), referents, source="manual"))
            objects[vid].update(oid for ids in referents.values() for oid in ids)
    return exprs, objects
