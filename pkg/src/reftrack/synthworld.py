"""Deterministic synthetic videos: colored rectangles with scripted
kinematics on a gray background, plus frame-accurate attribute labels and
template expressions.

Everything derives from one seed. Trajectories are rejection-sampled to stay
fully inside the frame so motion predicates stay clean over whole lifetimes
(no wall bounces). Motion predicates, in pixels per frame:

- moving/stopped: displacement above/at-most MOVE_PX
- turning: heading change above TURN_DEG degrees per frame
- accelerating/braking: speed change above +/- ACCEL_PX per frame
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from reftrack import pipeline
from reftrack.domain import BoundingBox, Expression, ObjectState, Track, clamped_corners, iou
from reftrack.pipeline import DEFAULT_TEMPLATES, LanguageItem, Template, spans_from_frames

MOVE_PX = 1.0
TURN_DEG = 10.0
ACCEL_PX = 0.5

BACKGROUND = 0.5

COLOR_VALUES: dict[str, tuple[float, float, float]] = {
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}

CLASSES = ("car", "person")
MOTION_KINDS = ("moving", "stopped", "turning", "accelerating", "braking")
ACTION_PRIORITY = ("turning", "accelerating", "braking", "moving", "stopped")


@dataclass(frozen=True)
class SceneConfig:
    frames: int = 40
    image_size: tuple[int, int] = (64, 64)  # (H, W)
    min_objects: int = 2
    max_objects: int = 4
    classes: tuple[str, ...] = CLASSES
    colors: tuple[str, ...] = ("black", "white", "red", "blue")
    motions: tuple[str, ...] = ("moving", "stopped")
    seed: int = 0
    min_life: int = 10
    full_life_prob: float = 0.7
    min_support: int = 10
    max_expressions: int | None = None
    templates: tuple[Template, ...] | None = None

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("need at least 2 frames")
        if self.min_life < 1 or self.min_life > self.frames:
            raise ValueError(f"min_life {self.min_life} outside [1, frames={self.frames}]")
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise ValueError("bad object count range")
        for m in self.motions:
            if m not in MOTION_KINDS:
                raise ValueError(f"unknown motion kind {m!r}")
        for c in self.colors:
            if c not in COLOR_VALUES:
                raise ValueError(f"unknown color {c!r}")
        for c in self.classes:
            if c not in CLASSES:
                raise ValueError(f"unknown class {c!r}")


@dataclass
class SyntheticVideo:
    video_id: str
    frames: np.ndarray  # (T, H, W, 3) float32
    tracks: dict[int, Track]
    items: list[LanguageItem]
    expressions: list[Expression]
    occlusions: list[tuple[int, int, int]] = field(default_factory=list)  # (frame, id, id)


@dataclass
class _Body:
    object_id: int
    cls: str
    color: str
    w: float
    h: float
    entry: int
    centers: np.ndarray  # (life, 2) cx, cy

    @property
    def exit(self) -> int:
        return self.entry + len(self.centers) - 1

    def center_at(self, frame: int) -> np.ndarray:
        return self.centers[frame - self.entry]

    def box_at(self, frame: int) -> BoundingBox:
        cx, cy = self.center_at(frame)
        return BoundingBox(float(cx), float(cy), self.w, self.h)


# ---------------------------------------------------------------------------
# trajectory sampling


def _margins(w: float, h: float) -> tuple[float, float]:
    return w / 2 + 0.01, h / 2 + 0.01


def _in_bounds(centers: np.ndarray, w: float, h: float) -> bool:
    mx, my = _margins(w, h)
    return bool(
        (centers[:, 0] >= mx).all()
        and (centers[:, 0] <= 1 - mx).all()
        and (centers[:, 1] >= my).all()
        and (centers[:, 1] <= 1 - my).all()
    )


def _sample_size(rng: np.random.Generator, cls: str) -> tuple[float, float]:
    if cls == "car":
        w = rng.uniform(0.16, 0.26)
        return w, w * rng.uniform(0.5, 0.65)
    h = rng.uniform(0.18, 0.3)
    return h * rng.uniform(0.35, 0.5), h


def _simulate(
    rng: np.random.Generator,
    kind: str,
    start: np.ndarray,
    life: int,
    scale: np.ndarray,  # px per normalized unit, (W, H)
) -> np.ndarray:
    """Centers for `life` frames; velocities in normalized units."""
    if kind == "stopped":
        return np.repeat(start[None, :], life, axis=0)
    pts = [start.copy()]
    heading = rng.uniform(0, 2 * math.pi)
    if kind == "moving":
        speed = rng.uniform(1.6, 3.0)
        omega = 0.0
        accel = 0.0
    elif kind == "turning":
        speed = rng.uniform(1.4, 2.4)
        omega = math.radians(rng.uniform(12.0, 18.0)) * rng.choice([-1.0, 1.0])
        accel = 0.0
    elif kind == "accelerating":
        speed = rng.uniform(0.2, 0.8)
        omega = 0.0
        accel = rng.uniform(0.6, 0.9)
    elif kind == "braking":
        speed = rng.uniform(3.2, 4.5)
        omega = 0.0
        accel = -rng.uniform(0.6, 0.9)
    else:
        raise ValueError(f"unknown motion kind {kind!r}")
    pos = start.copy()
    for _ in range(life - 1):
        step = np.array([math.cos(heading), math.sin(heading)]) * speed / scale
        pos = pos + step
        pts.append(pos.copy())
        heading += omega
        speed = float(np.clip(speed + accel, 0.0, 6.0))
    return np.array(pts)


def _sample_body(
    rng: np.random.Generator, config: SceneConfig, object_id: int
) -> _Body:
    h_img, w_img = config.image_size
    scale = np.array([float(w_img), float(h_img)])
    for _ in range(400):
        cls = str(rng.choice(config.classes))
        color = str(rng.choice(config.colors))
        kind = str(rng.choice(config.motions))
        w, h = _sample_size(rng, cls)
        mx, my = _margins(w, h)
        if config.full_life_prob > rng.random():
            want = config.frames
        else:
            want = int(rng.integers(config.min_life, config.frames + 1))
        start = np.array(
            [rng.uniform(mx, 1 - mx), rng.uniform(my, 1 - my)]
        )
        centers = _simulate(rng, kind, start, want, scale)
        # keep the longest in-bounds prefix; accept if long enough
        ok = len(centers)
        for t in range(len(centers)):
            if not _in_bounds(centers[t : t + 1], w, h):
                ok = t
                break
        if ok < config.min_life:
            continue
        centers = centers[:ok]
        life = len(centers)
        entry = int(rng.integers(0, config.frames - life + 1)) if life < config.frames else 0
        return _Body(object_id, cls, color, w, h, entry, centers)
    raise RuntimeError("could not place an in-bounds trajectory; loosen the config")


# ---------------------------------------------------------------------------
# predicates and labels


def motion_predicates(centers: np.ndarray, scale: np.ndarray) -> list[set[str]]:
    """Per-frame action predicate sets for one trajectory.

    Displacements define speed/heading between consecutive frames; the last
    frame carries the final defined value so every frame is labeled.
    """
    life = len(centers)
    if life == 1:
        return [{"stopped"}]
    deltas = (centers[1:] - centers[:-1]) * scale  # px
    speeds = np.linalg.norm(deltas, axis=1)  # (life-1,)
    headings = np.arctan2(deltas[:, 1], deltas[:, 0])
    out: list[set[str]] = []
    for t in range(life):
        st = min(t, life - 2)  # carry last displacement onto the final frame
        preds: set[str] = set()
        preds.add("moving" if speeds[st] > MOVE_PX else "stopped")
        if st + 1 <= life - 2:
            dh = _wrap_angle(headings[st + 1] - headings[st])
            ds = speeds[st + 1] - speeds[st]
        elif life >= 3:
            dh = _wrap_angle(headings[st] - headings[st - 1])
            ds = speeds[st] - speeds[st - 1]
        else:
            dh, ds = 0.0, 0.0
        if speeds[st] > MOVE_PX and abs(math.degrees(dh)) > TURN_DEG:
            preds.add("turning")
        if ds > ACCEL_PX:
            preds.add("accelerating")
        elif ds < -ACCEL_PX:
            preds.add("braking")
        out.append(preds)
    return out


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def direction_value(delta: np.ndarray, scale: np.ndarray) -> str:
    dx, dy = delta * scale
    if abs(dx) >= abs(dy):
        return "rightward" if dx > 0 else "leftward"
    return "downward" if dy > 0 else "upward"


def frame_predicates(body: _Body, scale: np.ndarray) -> dict[int, dict[str, set[str]]]:
    """frame -> category -> values that hold for this object."""
    actions = motion_predicates(body.centers, scale)
    life = len(body.centers)
    deltas = (body.centers[1:] - body.centers[:-1]) if life > 1 else np.zeros((1, 2))
    out = {}
    for t in range(life):
        frame = body.entry + t
        cx = body.centers[t][0]
        cats: dict[str, set[str]] = {
            "class": {body.cls},
            "color": {body.color},
            "position": {"left" if cx < 0.5 else "right"},
            "action": actions[t],
        }
        if "moving" in actions[t]:
            d = deltas[min(t, len(deltas) - 1)]
            cats["direction"] = {direction_value(d, scale)}
        out[frame] = cats
    return out


def primary_action(values: set[str]) -> str:
    for name in ACTION_PRIORITY:
        if name in values:
            return name
    return "stopped"


def build_items(bodies: list[_Body], scale: np.ndarray) -> list[LanguageItem]:
    """Language items from per-frame predicates, as maximal frame runs."""
    coverage: dict[tuple[str, str], dict[int, set[int]]] = {}
    for body in bodies:
        for frame, cats in frame_predicates(body, scale).items():
            for cat, values in cats.items():
                for value in values:
                    coverage.setdefault((cat, value), {}).setdefault(
                        body.object_id, set()
                    ).add(frame)
    items = []
    for (cat, value) in sorted(coverage):
        items.append(LanguageItem(cat, value, spans_from_frames(coverage[(cat, value)])))
    return items


# ---------------------------------------------------------------------------
# rendering


def render_frame(states: list[ObjectState], image_size: tuple[int, int]) -> np.ndarray:
    """Paint boxes over gray background; later object ids draw on top.

    Corners are clamped to the unit square, scaled to pixels, and rounded;
    the filled region is [round(x1), round(x2)) per axis.
    """
    h, w = image_size
    canvas = np.full((h, w, 3), BACKGROUND, dtype=np.float32)
    for state in sorted(states, key=lambda s: s.object_id):
        x1, y1, x2, y2 = clamped_corners(state.box)
        row0, row1 = int(round(y1 * h)), int(round(y2 * h))
        col0, col1 = int(round(x1 * w)), int(round(x2 * w))
        color = COLOR_VALUES[state.attributes["color"]]
        canvas[max(row0, 0) : min(row1, h), max(col0, 0) : min(col1, w)] = color
    return canvas


# ---------------------------------------------------------------------------
# scene assembly


def _tracks_from_bodies(bodies: list[_Body], scale: np.ndarray) -> dict[int, Track]:
    tracks = {}
    for body in bodies:
        preds = frame_predicates(body, scale)
        states = []
        for t in range(len(body.centers)):
            frame = body.entry + t
            cats = preds[frame]
            attrs = {
                "class": body.cls,
                "color": body.color,
                "position": next(iter(cats["position"])),
                "action": primary_action(cats["action"]),
            }
            if "direction" in cats:
                attrs["direction"] = next(iter(cats["direction"]))
            states.append(ObjectState(frame, body.object_id, body.box_at(frame), attrs))
        tracks[body.object_id] = Track(body.object_id, tuple(states))
    return tracks


def _assemble(
    video_id: str,
    bodies: list[_Body],
    config: SceneConfig,
    rng: np.random.Generator,
) -> SyntheticVideo:
    h, w = config.image_size
    scale = np.array([float(w), float(h)])
    tracks = _tracks_from_bodies(bodies, scale)
    items = build_items(bodies, scale)
    templates = config.templates if config.templates is not None else DEFAULT_TEMPLATES
    expressions = pipeline.generate_expressions(items, templates, config.min_support)
    if config.max_expressions is not None and len(expressions) > config.max_expressions:
        order = rng.permutation(len(expressions))[: config.max_expressions]
        expressions = [expressions[i] for i in sorted(order)]

    frames = np.empty((config.frames, h, w, 3), dtype=np.float32)
    for f in range(config.frames):
        states = [t.state_at(f) for t in tracks.values()]
        frames[f] = render_frame([s for s in states if s is not None], config.image_size)

    occlusions = []
    ids = sorted(tracks)
    for f in range(config.frames):
        for i, a in enumerate(ids):
            sa = tracks[a].state_at(f)
            if sa is None:
                continue
            for b in ids[i + 1 :]:
                sb = tracks[b].state_at(f)
                if sb is None:
                    continue
                if iou(sa.box, sb.box) > 0.7:
                    occlusions.append((f, a, b))
    return SyntheticVideo(video_id, frames, tracks, items, expressions, occlusions)


def generate_scene(config: SceneConfig, video_id: str | None = None) -> SyntheticVideo:
    """A seeded scene: bodies, labels, items, expressions, rendered frames."""
    rng = np.random.default_rng(config.seed)
    vid = video_id or f"scene-{config.seed:04d}"
    n = int(rng.integers(config.min_objects, config.max_objects + 1))
    bodies = [_sample_body(rng, config, oid) for oid in range(1, n + 1)]
    return _assemble(vid, bodies, config, rng)


def occlusion_split(
    config: SceneConfig, crossings: int = 1, video_id: str | None = None
) -> SyntheticVideo:
    """Scenes built around same-appearance crossing pairs.

    Each crossing pair shares class/color/size and meets mid-life, fully
    overlapping for a couple of frames; with ``crossings=0`` the scene
    degenerates to well-separated objects and no occlusion frames.
    """
    rng = np.random.default_rng(config.seed)
    vid = video_id or f"occlusion-{config.seed:04d}"
    h_img, w_img = config.image_size
    scale = np.array([float(w_img), float(h_img)])
    bodies: list[_Body] = []
    next_id = 1
    t_meet = config.frames // 2

    lanes = np.array([0.5]) if crossings <= 1 else np.linspace(0.3, 0.7, crossings)
    for k in range(crossings):
        cls = "car"
        color = str(rng.choice(config.colors))
        w = 0.22
        h = 0.13
        speed_px = 1.2
        vx = speed_px / w_img
        reach = vx * t_meet
        mx, _ = _margins(w, h)
        if 0.5 - reach < mx:
            raise ValueError("frame too short/small for a crossing pair")
        cy = float(lanes[k])
        t_axis = np.arange(config.frames, dtype=float)
        ax = 0.5 - reach + vx * t_axis
        bx = 0.5 + reach - vx * t_axis
        ay = np.full(config.frames, cy)
        for cx_arr, cy_arr in ((ax, ay), (bx, ay)):
            centers = np.stack([cx_arr, cy_arr], axis=1)
            if not _in_bounds(centers, w, h):
                raise ValueError("crossing trajectory leaves the frame")
            bodies.append(_Body(next_id, cls, color, w, h, 0, centers))
            next_id += 1

    # background objects to fill out the configured population
    want_total = max(config.min_objects, 2 * crossings)
    crossing_colors = {b.color for b in bodies}
    other_colors = tuple(c for c in config.colors if c not in crossing_colors) or config.colors
    cfg = SceneConfig(
        frames=config.frames,
        image_size=config.image_size,
        min_objects=1,
        max_objects=1,
        classes=config.classes,
        colors=other_colors,
        motions=("stopped",),
        seed=config.seed,
        min_life=min(config.min_life, config.frames),
        full_life_prob=1.0,
    )
    attempts = 0
    while next_id <= want_total:
        attempts += 1
        if attempts > 500:
            raise RuntimeError("could not place background objects clear of the lanes")
        body = _sample_body(rng, cfg, next_id)
        # keep background clear of the crossing lanes
        if crossings and min(abs(body.centers[0, 1] - float(l)) for l in lanes) < 0.18:
            continue
        bodies.append(body)
        next_id += 1
    return _assemble(vid, bodies, config, rng)
