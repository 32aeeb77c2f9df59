"""Dataset construction tooling.

Three stages mirror how the expression corpus is built:

1. item propagation: per-object attribute endpoints are trimmed to the frames
   where the object actually exists, producing frame-accurate items;
2. template generation: slot patterns combine items into expressions whose
   referent sets are the frame-wise intersection of the item object sets;
3. expansion: a paraphrase provider (mock or HTTP) grows each expression,
   with machine verdicts and an optional manual review file filtering the
   candidates. Paraphrases inherit referents verbatim.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

from reftrack.domain import (
    ATTRIBUTE_CATEGORIES,
    Expression,
    Track,
    normalize_referents,
    tokenize,
)


# ---------------------------------------------------------------------------
# items


@dataclass(frozen=True)
class ItemSpan:
    """One object's inclusive frame interval for an item."""

    object_id: int
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad span [{self.start}, {self.end}]")

    def frames(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class LanguageItem:
    """An attribute assertion, e.g. color=black, over object/frame spans."""

    category: str
    value: str
    spans: tuple[ItemSpan, ...]

    def __post_init__(self):
        if self.category not in ATTRIBUTE_CATEGORIES:
            raise ValueError(f"unknown item category: {self.category!r}")
        if not self.value:
            raise ValueError("empty item value")

    def coverage(self) -> dict[int, set[int]]:
        """object id -> set of frames where this item holds."""
        cov: dict[int, set[int]] = {}
        for span in self.spans:
            cov.setdefault(span.object_id, set()).update(span.frames())
        return cov


def _runs(frames: Sequence[int]) -> list[tuple[int, int]]:
    """Sorted frames -> maximal inclusive (start, end) runs."""
    runs = []
    for f in sorted(frames):
        if runs and f == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], f)
        else:
            runs.append((f, f))
    return runs


def spans_from_frames(object_frames: Mapping[int, set[int]]) -> tuple[ItemSpan, ...]:
    out = []
    for oid in sorted(object_frames):
        for start, end in _runs(object_frames[oid]):
            out.append(ItemSpan(oid, start, end))
    return tuple(out)


def propagate_items(
    items: Sequence[LanguageItem], tracks: Mapping[int, Track]
) -> tuple[list[LanguageItem], list[str]]:
    """Trim item spans to the frames where each object is visible.

    Spans over unknown objects are dropped; spans that shrink or fragment
    produce warning strings. Items left with no coverage are dropped.
    """
    out: list[LanguageItem] = []
    warnings: list[str] = []
    for item in items:
        kept: dict[int, set[int]] = {}
        for span in item.spans:
            track = tracks.get(span.object_id)
            label = f"{item.category}={item.value} object {span.object_id}"
            if track is None:
                warnings.append(f"{label}: no track; span [{span.start},{span.end}] dropped")
                continue
            visible = track.frame_set() & set(span.frames())
            if not visible:
                warnings.append(
                    f"{label}: span [{span.start},{span.end}] outside visibility; dropped"
                )
                continue
            if len(visible) < span.end - span.start + 1:
                runs = _runs(visible)
                shown = ", ".join(f"[{a},{b}]" for a, b in runs)
                warnings.append(
                    f"{label}: span [{span.start},{span.end}] trimmed to {shown}"
                )
            kept.setdefault(span.object_id, set()).update(visible)
        if kept:
            out.append(LanguageItem(item.category, item.value, spans_from_frames(kept)))
        else:
            warnings.append(f"{item.category}={item.value}: item dropped (no visible frames)")
    return out, warnings


# ---------------------------------------------------------------------------
# templates


_SLOT_RE = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class Template:
    """Slot pattern like ``"{class}s in {color|position}"``.

    Each slot lists the categories it accepts, separated by ``|``. ``fixed``
    adds implicit (category, value) filters that constrain referents without
    appearing as a slot (e.g. the literal "cars" in a pattern).
    """

    pattern: str
    fixed: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for group in self.slot_groups():
            for cat in group:
                if cat not in ATTRIBUTE_CATEGORIES:
                    raise ValueError(f"template slot names unknown category {cat!r}")
        for cat, _ in self.fixed:
            if cat not in ATTRIBUTE_CATEGORIES:
                raise ValueError(f"template filter names unknown category {cat!r}")

    def slot_groups(self) -> list[tuple[str, ...]]:
        return [
            tuple(part.strip() for part in m.group(1).split("|"))
            for m in _SLOT_RE.finditer(self.pattern)
        ]

    def render(self, values: Sequence[str]) -> str:
        parts = iter(values)
        return _SLOT_RE.sub(lambda _: next(parts), self.pattern)


DEFAULT_TEMPLATES: tuple[Template, ...] = (
    Template("{color} {action} cars", fixed=(("class", "car"),)),
    Template("{class}s in {color|position}"),
    Template("{class}s which are {action}"),
    Template("{class}s heading {direction}"),
)


def generate_expressions(
    items: Sequence[LanguageItem],
    templates: Sequence[Template] = DEFAULT_TEMPLATES,
    min_support: int = 10,
) -> list[Expression]:
    """Instantiate templates with compatible items.

    Referents are the frame-wise intersection of all chosen (and fixed) item
    object sets. Expressions with fewer than ``min_support`` referent
    box-frames are discarded.
    """
    by_category: dict[str, list[LanguageItem]] = {}
    for item in items:
        by_category.setdefault(item.category, []).append(item)
    for cat in by_category:
        by_category[cat].sort(key=lambda it: it.value)

    index = {(item.category, item.value): item for item in items}

    out: list[Expression] = []
    seen_texts: set[str] = set()
    for template in templates:
        fixed_items = [index.get(key) for key in template.fixed]
        if any(it is None for it in fixed_items):
            continue
        groups = template.slot_groups()
        candidates = [
            [it for cat in group for it in by_category.get(cat, [])] for group in groups
        ]
        if any(not c for c in candidates):
            continue
        for combo in _combinations(candidates):
            if len({(it.category, it.value) for it in combo}) < len(combo):
                continue
            chosen = list(combo) + list(fixed_items)
            referents = _intersect_coverage(chosen)
            support = sum(len(ids) for ids in referents.values())
            if support < min_support:
                continue
            text = template.render([it.value for it in combo])
            if text in seen_texts:
                continue
            seen_texts.add(text)
            out.append(Expression(text, normalize_referents(referents), source="template"))
    return out


def _combinations(candidates: list[list[LanguageItem]]):
    if not candidates:
        yield ()
        return
    for head in candidates[0]:
        for rest in _combinations(candidates[1:]):
            yield (head,) + rest


def _intersect_coverage(items: Sequence[LanguageItem]) -> dict[int, set[int]]:
    """frame -> object ids covered by every item."""
    covs = [item.coverage() for item in items]
    shared_ids = set(covs[0])
    for cov in covs[1:]:
        shared_ids &= set(cov)
    referents: dict[int, set[int]] = {}
    for oid in shared_ids:
        frames = set.intersection(*(cov[oid] for cov in covs))
        for f in frames:
            referents.setdefault(f, set()).add(oid)
    return referents


# ---------------------------------------------------------------------------
# paraphrase expansion


class ParaphraseProvider(Protocol):
    def paraphrase(self, text: str, count: int) -> tuple[list[str], list[bool]]:
        """Return up to ``count`` paraphrases and one verdict per paraphrase."""
        ...


class MockParaphraseProvider:
    """Deterministic offline provider.

    Produces simple rewrites; the quantifier variant ("any ...") always gets
    a negative verdict, exercising the stage-1 filter deterministically.
    """

    VARIANTS: tuple[Callable[[str], str], ...] = (
        lambda t: f"the {t}",
        lambda t: f"{t} in the scene",
        lambda t: f"{t} in view",
        lambda t: f"all {t}",
        lambda t: f"any {t}",
        lambda t: f"those {t}",
    )

    def paraphrase(self, text: str, count: int) -> tuple[list[str], list[bool]]:
        variants = [make(text) for make in self.VARIANTS[:count]]
        verdicts = [not v.startswith("any ") for v in variants]
        return variants, verdicts


class HttpParaphraseProvider:
    """POSTs {"text", "count"} and expects {"paraphrases", "verdicts"}."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def paraphrase(self, text: str, count: int) -> tuple[list[str], list[bool]]:
        import requests

        resp = requests.post(
            self.endpoint, json={"text": text, "count": count}, timeout=self.timeout
        )
        resp.raise_for_status()
        payload = resp.json()
        return list(payload["paraphrases"]), [bool(v) for v in payload["verdicts"]]


def expand_expressions(
    expressions: Sequence[Expression],
    provider: ParaphraseProvider,
    count: int = 4,
    review: Mapping[str, bool] | None = None,
    max_retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[Expression], list[dict]]:
    """Grow the corpus with accepted paraphrases.

    Provider failures retry with exponential backoff; an expression whose
    provider calls keep failing is skipped with an error record. A paraphrase
    survives when its machine verdict is positive and the review file (text ->
    accept) does not reject it. Survivors inherit the source referents
    bit-for-bit.
    """
    out: list[Expression] = list(expressions)
    records: list[dict] = []
    review = review or {}
    for expr in expressions:
        result = None
        for attempt in range(1, max_retries + 1):
            try:
                result = provider.paraphrase(expr.text, count)
                break
            except Exception as exc:  # provider errors are data, not bugs
                if attempt == max_retries:
                    records.append(
                        {"source": expr.text, "error": str(exc), "attempts": attempt}
                    )
                else:
                    sleep(backoff * 2 ** (attempt - 1))
        if result is None:
            continue
        paraphrases, verdicts = result
        if len(paraphrases) != len(verdicts):
            records.append(
                {
                    "source": expr.text,
                    "error": "provider returned mismatched verdicts",
                    "attempts": max_retries,
                }
            )
            continue
        for text, verdict in zip(paraphrases, verdicts):
            reviewed = review.get(text, True)
            accepted = bool(verdict) and reviewed
            records.append(
                {
                    "source": expr.text,
                    "paraphrase": text,
                    "verdict": bool(verdict),
                    "review": reviewed,
                    "accepted": accepted,
                }
            )
            if accepted:
                out.append(Expression(text, expr.referents, source="expanded"))
    return out, records


# ---------------------------------------------------------------------------
# statistics


@dataclass
class StatReport:
    expressions: int
    distinct_expressions: int
    distinct_words: int
    videos: int
    expressions_per_video: float
    objects_per_expression_mean: float
    objects_per_expression_hist: dict[int, int]
    referenced_ratio_per_video: dict[str, float]
    mean_referenced_ratio: float

    def to_dict(self) -> dict:
        return {
            "expressions": self.expressions,
            "distinct_expressions": self.distinct_expressions,
            "distinct_words": self.distinct_words,
            "videos": self.videos,
            "expressions_per_video": self.expressions_per_video,
            "objects_per_expression_mean": self.objects_per_expression_mean,
            "objects_per_expression_hist": {
                str(k): v for k, v in sorted(self.objects_per_expression_hist.items())
            },
            "referenced_ratio_per_video": dict(sorted(self.referenced_ratio_per_video.items())),
            "mean_referenced_ratio": self.mean_referenced_ratio,
        }


def compute_statistics(
    expressions_by_video: Mapping[str, Sequence[Expression]],
    objects_by_video: Mapping[str, set[int]] | None = None,
) -> StatReport:
    """Corpus statistics over every video in the mapping.

    Distinct words are counted over lowercased, punctuation-stripped
    whitespace tokens. Objects per expression counts distinct referent ids
    across the whole expression.
    """
    all_exprs = [(vid, e) for vid, exprs in expressions_by_video.items() for e in exprs]
    texts = [e.text for _, e in all_exprs]
    words = {tok for t in texts for tok in tokenize(t)}
    videos = len(expressions_by_video)
    counts = [
        len({oid for ids in e.referents.values() for oid in ids}) for _, e in all_exprs
    ]
    hist: dict[int, int] = {}
    for c in counts:
        hist[c] = hist.get(c, 0) + 1
    ratios: dict[str, float] = {}
    for vid, exprs in expressions_by_video.items():
        referenced = {oid for e in exprs for ids in e.referents.values() for oid in ids}
        total = len(objects_by_video.get(vid, set())) if objects_by_video else 0
        if not total:
            total = len(referenced)
        ratios[vid] = len(referenced) / total if total else 0.0
    return StatReport(
        expressions=len(all_exprs),
        distinct_expressions=len(set(texts)),
        distinct_words=len(words),
        videos=videos,
        expressions_per_video=len(all_exprs) / videos if videos else 0.0,
        objects_per_expression_mean=(sum(counts) / len(counts)) if counts else 0.0,
        objects_per_expression_hist=hist,
        referenced_ratio_per_video=ratios,
        mean_referenced_ratio=(sum(ratios.values()) / len(ratios)) if ratios else 0.0,
    )
