"""Dataset-construction pipeline: items, templates, expansion, statistics."""

from __future__ import annotations

import itertools

import pytest

from reftrack.domain import BoundingBox, Expression, ObjectState, Track
from reftrack.pipeline import (
    HttpParaphraseProvider,
    ItemSpan,
    LanguageItem,
    MockParaphraseProvider,
    Template,
    compute_statistics,
    expand_expressions,
    generate_expressions,
    propagate_items,
    spans_from_frames,
)

BOX = BoundingBox(0.5, 0.5, 0.2, 0.2)


def track(oid: int, frames) -> Track:
    return Track(oid, tuple(ObjectState(f, oid, BOX, {}) for f in sorted(frames)))


def item(cat, value, spans) -> LanguageItem:
    return LanguageItem(cat, value, tuple(ItemSpan(o, a, b) for o, a, b in spans))


class TestItemSpans:
    def test_span_validation(self):
        with pytest.raises(ValueError):
            ItemSpan(1, 5, 4)
        with pytest.raises(ValueError):
            ItemSpan(1, -1, 4)
        assert list(ItemSpan(1, 2, 4).frames()) == [2, 3, 4]

    def test_item_validation(self):
        with pytest.raises(ValueError):
            item("texture", "soft", [(1, 0, 1)])
        with pytest.raises(ValueError):
            LanguageItem("color", "", ())

    def test_spans_from_frames_builds_maximal_runs(self):
        spans = spans_from_frames({2: {5, 6, 7, 9}, 1: {0}})
        assert spans == (ItemSpan(1, 0, 0), ItemSpan(2, 5, 7), ItemSpan(2, 9, 9))

    def test_coverage_round_trip(self):
        cov = {1: {0, 1, 2, 7}, 3: {4}}
        rebuilt = LanguageItem("color", "red", spans_from_frames(cov)).coverage()
        assert rebuilt == cov


class TestPropagateItems:
    def test_full_visibility_passes_through_silently(self):
        tracks = {1: track(1, range(0, 10))}
        items, warnings = propagate_items([item("color", "red", [(1, 2, 8)])], tracks)
        assert warnings == []
        assert items[0].coverage() == {1: set(range(2, 9))}

    def test_span_trimmed_to_visibility_with_warning(self):
        tracks = {1: track(1, range(3, 8))}
        items, warnings = propagate_items([item("color", "red", [(1, 0, 20)])], tracks)
        assert items[0].coverage() == {1: {3, 4, 5, 6, 7}}
        assert len(warnings) == 1 and "trimmed" in warnings[0]

    def test_gap_fragments_span(self):
        tracks = {1: track(1, [0, 1, 2, 6, 7])}
        items, warnings = propagate_items([item("color", "red", [(1, 0, 7)])], tracks)
        assert items[0].spans == (ItemSpan(1, 0, 2), ItemSpan(1, 6, 7))
        assert "trimmed to [0,2], [6,7]" in warnings[0]

    def test_unknown_object_dropped(self):
        items, warnings = propagate_items(
            [item("color", "red", [(9, 0, 5), (1, 0, 5)])], {1: track(1, range(6))}
        )
        assert items[0].coverage() == {1: set(range(6))}
        assert any("no track" in w for w in warnings)

    def test_fully_invisible_item_dropped(self):
        items, warnings = propagate_items(
            [item("color", "red", [(1, 20, 30)])], {1: track(1, range(6))}
        )
        assert items == []
        assert any("dropped" in w for w in warnings)


class TestTemplates:
    def test_slot_groups_and_render(self):
        t = Template("{class}s in {color|position}")
        assert t.slot_groups() == [("class",), ("color", "position")]
        assert t.render(["car", "left"]) == "cars in left"

    def test_unknown_slot_category_rejected(self):
        with pytest.raises(ValueError):
            Template("{size} cars")
        with pytest.raises(ValueError):
            Template("cars", fixed=(("size", "big"),))


def brute_force_referents(chosen: list[LanguageItem]) -> dict[int, set[int]]:
    """Frame-wise intersection of item coverages, the slow obvious way."""
    covs = [it.coverage() for it in chosen]
    out: dict[int, set[int]] = {}
    all_ids = set(itertools.chain.from_iterable(covs))
    all_frames = set(
        itertools.chain.from_iterable(f for cov in covs for f in cov.values())
    )
    for frame in all_frames:
        for oid in all_ids:
            if all(oid in cov and frame in cov[oid] for cov in covs):
                out.setdefault(frame, set()).add(oid)
    return out


class TestGenerateExpressions:
    def setup_method(self):
        self.items = [
            item("class", "car", [(1, 0, 9), (2, 0, 9), (3, 0, 4)]),
            item("class", "person", [(4, 0, 9)]),
            item("color", "red", [(1, 0, 9), (4, 0, 9)]),
            item("color", "blue", [(2, 0, 9), (3, 0, 4)]),
            item("action", "moving", [(1, 0, 3), (2, 2, 9), (4, 0, 9)]),
        ]

    def test_referents_are_frame_wise_intersections(self):
        templates = (Template("{color} {action} cars", fixed=(("class", "car"),)),)
        exprs = generate_expressions(self.items, templates, min_support=1)
        by_text = {e.text: e for e in exprs}
        index = {(i.category, i.value): i for i in self.items}
        # red moving cars: object 1 on frames 0..3 (others fail a predicate)
        want = brute_force_referents(
            [index[("color", "red")], index[("action", "moving")], index[("class", "car")]]
        )
        assert want == {0: {1}, 1: {1}, 2: {1}, 3: {1}}
        got = by_text["red moving cars"].referents
        assert {f: set(ids) for f, ids in got.items()} == want
        # blue moving cars: object 2 on frames 2..9
        got = by_text["blue moving cars"].referents
        assert {f: set(ids) for f, ids in got.items()} == {f: {2} for f in range(2, 10)}

    def test_every_generated_expression_matches_oracle(self):
        templates = (
            Template("{color} {action} cars", fixed=(("class", "car"),)),
            Template("{class}s which are {action}"),
        )
        exprs = generate_expressions(self.items, templates, min_support=1)
        assert exprs
        index = {(i.category, i.value): i for i in self.items}
        for expr in exprs:
            toks = expr.tokens()
            chosen = [
                index[(cat, val)]
                for (cat, val) in index
                if val in toks or f"{val}s" in toks
            ]
            want = brute_force_referents(chosen)
            assert {f: set(ids) for f, ids in expr.referents.items()} == want

    def test_min_support_filters(self):
        templates = (Template("{color} {action} cars", fixed=(("class", "car"),)),)
        exprs = generate_expressions(self.items, templates, min_support=5)
        texts = [e.text for e in exprs]
        assert "red moving cars" not in texts  # support 4
        assert "blue moving cars" in texts     # support 8

    def test_missing_fixed_item_skips_template(self):
        templates = (Template("{color} {action} cars", fixed=(("class", "truck"),)),)
        assert generate_expressions(self.items, templates, min_support=1) == []

    def test_empty_category_skips_template(self):
        templates = (Template("{class}s heading {direction}"),)
        assert generate_expressions(self.items, templates, min_support=1) == []

    def test_no_duplicate_texts(self):
        exprs = generate_expressions(self.items, min_support=1)
        texts = [e.text for e in exprs]
        assert len(texts) == len(set(texts))


class FlakyProvider:
    """Fails ``failures`` times, then delegates to the mock provider."""

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0
        self.inner = MockParaphraseProvider()

    def paraphrase(self, text, count):
        self.calls += 1
        if self.calls <= self.failures:
            raise ConnectionError(f"boom {self.calls}")
        return self.inner.paraphrase(text, count)


class TestExpansion:
    def exprs(self):
        return [Expression("red cars", {0: [1], 1: [1, 2]})]

    def test_mock_provider_rejects_quantifier_variant(self):
        out, records = expand_expressions(self.exprs(), MockParaphraseProvider(), count=6)
        texts = [e.text for e in out]
        assert "the red cars" in texts and "all red cars" in texts
        assert "any red cars" not in texts  # negative machine verdict
        rec = next(r for r in records if r.get("paraphrase") == "any red cars")
        assert rec["verdict"] is False and rec["accepted"] is False

    def test_paraphrases_inherit_referents_exactly(self):
        src = self.exprs()
        out, _ = expand_expressions(src, MockParaphraseProvider(), count=2)
        for expr in out[1:]:
            assert expr.referents == src[0].referents
            assert expr.source == "expanded"

    def test_review_file_overrides_acceptance(self):
        review = {"the red cars": False}
        out, records = expand_expressions(
            self.exprs(), MockParaphraseProvider(), count=2, review=review
        )
        texts = [e.text for e in out]
        assert "the red cars" not in texts
        assert "red cars in the scene" in texts
        rec = next(r for r in records if r.get("paraphrase") == "the red cars")
        assert rec["verdict"] is True and rec["review"] is False and not rec["accepted"]

    def test_retry_with_exponential_backoff(self):
        sleeps = []
        provider = FlakyProvider(failures=2)
        out, records = expand_expressions(
            self.exprs(), provider, count=2, backoff=0.5, sleep=sleeps.append
        )
        assert provider.calls == 3
        assert sleeps == [0.5, 1.0]
        assert len(out) > 1  # eventually succeeded
        assert not any("error" in r for r in records)

    def test_exhausted_retries_produce_error_record(self):
        sleeps = []
        provider = FlakyProvider(failures=99)
        out, records = expand_expressions(
            self.exprs(), provider, count=2, max_retries=3, sleep=sleeps.append
        )
        assert [e.text for e in out] == ["red cars"]  # source kept, nothing added
        assert sleeps == [0.5, 1.0]  # no sleep after the final failure
        err = records[-1]
        assert err["source"] == "red cars" and "boom" in err["error"] and err["attempts"] == 3

    def test_mismatched_verdicts_recorded_as_error(self):
        class BadProvider:
            def paraphrase(self, text, count):
                return ["a", "b"], [True]

        out, records = expand_expressions(self.exprs(), BadProvider(), count=2)
        assert [e.text for e in out] == ["red cars"]
        assert "mismatched" in records[-1]["error"]

    def test_http_provider_posts_and_parses(self, monkeypatch):
        calls = {}

        class FakeResponse:
            def raise_for_status(self):
                pass

            def json(self):
                return {"paraphrases": ["x red cars"], "verdicts": [1]}

        def fake_post(url, json=None, timeout=None):
            calls["url"], calls["payload"], calls["timeout"] = url, json, timeout
            return FakeResponse()

        import requests

        monkeypatch.setattr(requests, "post", fake_post)
        provider = HttpParaphraseProvider("http://localhost:9/para", timeout=3.0)
        texts, verdicts = provider.paraphrase("red cars", 1)
        assert calls == {
            "url": "http://localhost:9/para",
            "payload": {"text": "red cars", "count": 1},
            "timeout": 3.0,
        }
        assert texts == ["x red cars"] and verdicts == [True]


class TestStatistics:
    def test_hand_counted_report(self):
        exprs_a = [
            Expression("red cars", {0: [1], 1: [1, 2]}),
            Expression("the red cars", {0: [1]}, source="expanded"),
        ]
        exprs_b = [Expression("people moving", {5: [7]})]
        report = compute_statistics(
            {"va": exprs_a, "vb": exprs_b},
            objects_by_video={"va": {1, 2, 3, 4}, "vb": {7}},
        )
        assert report.expressions == 3
        assert report.distinct_expressions == 3
        # words: red, cars, the, people, moving
        assert report.distinct_words == 5
        assert report.videos == 2
        assert report.expressions_per_video == pytest.approx(1.5)
        # referent counts per expression: 2, 1, 1
        assert report.objects_per_expression_mean == pytest.approx(4 / 3)
        assert report.objects_per_expression_hist == {1: 2, 2: 1}
        assert report.referenced_ratio_per_video == {"va": 0.5, "vb": 1.0}
        assert report.mean_referenced_ratio == pytest.approx(0.75)

    def test_duplicate_texts_counted_once_distinct(self):
        exprs = [Expression("red cars", {0: [1]}), Expression("red cars", {1: [2]})]
        report = compute_statistics({"v": exprs})
        assert report.expressions == 2
        assert report.distinct_expressions == 1

    def test_missing_object_counts_fall_back_to_referenced(self):
        report = compute_statistics({"v": [Expression("red cars", {0: [1, 2]})]})
        assert report.referenced_ratio_per_video == {"v": 1.0}

    def test_to_dict_keys_stringified(self):
        report = compute_statistics({"v": [Expression("red cars", {0: [1]})]})
        d = report.to_dict()
        assert d["objects_per_expression_hist"] == {"1": 1}
