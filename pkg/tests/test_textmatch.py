import numpy as np
import pytest
from hypothesis import given, strategies as st

from emlabel import textmatch as tm
from emlabel.errors import InvalidArgument


class _Obj:
    def __init__(self, text):
        self.text = text


class TestKeywordBits:
    def test_containment(self):
        feats = tm.KeywordFeatureSet(("knife", "sharp"))
        assert tm.keyword_bits(_Obj("Steel Knife Blade"), feats).tolist() == [1, 0]

    def test_substring_semantics(self):
        feats = tm.KeywordFeatureSet(("sharp",))
        assert tm.keyword_bits(_Obj("Knife Sharpener"), feats).tolist() == [1]

    def test_empty_feature_set(self):
        assert tm.keyword_bits(_Obj("anything"), tm.KeywordFeatureSet()).tolist() == []

    def test_feature_order_is_stable(self):
        feats = tm.KeywordFeatureSet(("b", "a"))
        assert list(feats) == ["b", "a"]
        assert tm.keyword_bits(_Obj("a"), feats).tolist() == [0, 1]

    def test_duplicates_rejected(self):
        with pytest.raises(InvalidArgument):
            tm.KeywordFeatureSet(("mug", "MUG"))

    def test_empty_string_rejected(self):
        with pytest.raises(InvalidArgument):
            tm.KeywordFeatureSet(("",))

    @given(st.text(max_size=60), st.lists(st.text(min_size=1, max_size=8), max_size=4, unique_by=lambda s: s.lower()))
    def test_pure_function(self, text, strings):
        feats = tm.KeywordFeatureSet(tuple(strings))
        a = tm.text_bits(text, feats)
        b = tm.text_bits(text, feats)
        assert np.array_equal(a, b)
        for bit, s in zip(a, feats):
            assert bit == (1 if s in text.lower() else 0)


class TestWordSearch:
    def test_case_insensitive_match_count(self, small_catalog):
        # 8 of 24 objects carry "Basket" in mixed case
        ids, total = tm.word_search(small_catalog, "BASKET", seed=1, page=0, page_size=3)
        assert total == 8
        assert len(ids) == 3

    def test_same_seed_same_order(self, small_catalog):
        a, _ = tm.word_search(small_catalog, "basket", seed=9, page=0, page_size=8)
        b, _ = tm.word_search(small_catalog, "basket", seed=9, page=0, page_size=8)
        assert a == b

    def test_zero_matches(self, small_catalog):
        ids, total = tm.word_search(small_catalog, "zzzz", seed=0)
        assert ids == [] and total == 0

    def test_union_of_pages_is_match_set(self, small_catalog):
        seen = []
        page = 0
        while True:
            ids, total = tm.word_search(small_catalog, "basket", seed=3, page=page, page_size=3)
            if not ids:
                break
            seen.extend(ids)
            page += 1
        assert sorted(seen) == sorted(tm.search_matches(small_catalog, "basket"))
        assert len(seen) == len(set(seen)) == total

    def test_every_result_contains_term(self, small_catalog):
        ids, _ = tm.word_search(small_catalog, "knife", seed=1, page=0, page_size=100)
        for oid in ids:
            assert "knife" in small_catalog.get(oid).text.lower()

    def test_empty_term_rejected(self, small_catalog):
        with pytest.raises(InvalidArgument):
            tm.word_search(small_catalog, "", seed=0)

    def test_bad_pagination_rejected(self, small_catalog):
        with pytest.raises(InvalidArgument):
            tm.word_search(small_catalog, "x", seed=0, page=-1)
        with pytest.raises(InvalidArgument):
            tm.word_search(small_catalog, "x", seed=0, page_size=0)
