import numpy as np
import pytest

from conftest import make_catalog_file
from emlabel import datastore as ds
from emlabel import linmodel as lm
from emlabel.engine import LabelingEngine
from emlabel.errors import FailedPrecondition, InvalidArgument


def _setup(tmp_path, n=30, dim=3, seed=0, text_fn=None):
    p = make_catalog_file(tmp_path / "c.jsonl", n=n, dim=dim, seed=seed, text_fn=text_fn)
    catalog = ds.ingest_catalog(p, dim).catalog
    store = ds.LabelStore(catalog)
    store.create_project("p", seed=11)
    return catalog, store, LabelingEngine(catalog, store)


def _rig_model(proj, catalog, probs_by_row):
    """Install a hand-built model mapping embedding[0] through a logit."""
    dim = catalog.dim
    w = np.zeros(dim)
    w[0] = 1.0
    proj.model = lm.LinearModel(
        weights=w,
        bias=0.0,
        lam=1.0,
        standardizer=lm.Standardizer(np.zeros(dim), np.ones(dim), np.zeros(dim, dtype=bool)),
        n_keyword_features=0,
        feature_version=0,
    )
    proj.model_version = 1
    for row, prob in probs_by_row.items():
        catalog.embeddings.setflags(write=True)
        catalog.embeddings[row, 0] = np.log(prob / (1 - prob))
        catalog.embeddings[row, 1:] = 0.0
        catalog.embeddings.setflags(write=False)


class TestUncertainPage:
    def test_picks_probability_closest_to_half(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=3)
        proj = store.get_project("p")
        _rig_model(proj, catalog, {0: 0.10, 1: 0.49, 2: 0.90})
        page = eng.next_uncertain_page("p", page_size=1)
        assert page.ids() == ["obj0001"]
        assert page.items[0].probability == pytest.approx(0.49, abs=1e-9)

    def test_ties_break_by_ascending_id(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=4)
        proj = store.get_project("p")
        _rig_model(proj, catalog, {0: 0.5, 1: 0.5, 2: 0.9, 3: 0.1})
        page = eng.next_uncertain_page("p", page_size=2)
        assert page.ids() == ["obj0000", "obj0001"]

    def test_empty_pool_gives_empty_page(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=4)
        proj = store.get_project("p")
        _rig_model(proj, catalog, {})
        for i in range(4):
            store.append_label("p", f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "ACTIVE")
        page = eng.next_uncertain_page("p")
        assert page.items == []

    def test_requires_labels_without_model(self, tmp_path):
        _, _, eng = _setup(tmp_path)
        with pytest.raises(FailedPrecondition):
            eng.next_uncertain_page("p")

    def test_never_contains_labeled_objects(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=20)
        for i in range(8):
            store.append_label("p", f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "ACTIVE")
        page = eng.next_uncertain_page("p", page_size=20)
        labeled = set(store.get_project("p").current)
        assert not (set(page.ids()) & labeled)
        assert all(oid in catalog for oid in page.ids())


class TestRangePage:
    def test_filters_to_range(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=3)
        proj = store.get_project("p")
        _rig_model(proj, catalog, {0: 0.2, 1: 0.6, 2: 0.8})
        page = eng.range_page("p", 0.5, 1.0, page_size=10)
        assert sorted(page.ids()) == ["obj0001", "obj0002"]
        for item in page.items:
            assert 0.5 <= item.probability <= 1.0

    def test_empty_when_nothing_in_range(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=3)
        proj = store.get_project("p")
        _rig_model(proj, catalog, {0: 0.7, 1: 0.8, 2: 0.9})
        assert eng.range_page("p", 0.1, 0.5).items == []

    def test_deterministic_per_state(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=25)
        for i in range(6):
            store.append_label("p", f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "ACTIVE")
        eng.retrain("p")
        a = eng.range_page("p", 0.0, 1.0, page_size=5)
        b = eng.range_page("p", 0.0, 1.0, page_size=5)
        assert a.ids() == b.ids() and a.page_token == b.page_token

    def test_invalid_bounds(self, tmp_path):
        _, _, eng = _setup(tmp_path)
        with pytest.raises(InvalidArgument):
            eng.range_page("p", 0.6, 0.4)


class TestReviewPage:
    def _labeled_engine(self, tmp_path, flip_one=False):
        rng = np.random.default_rng(4)
        p = tmp_path / "c.jsonl"
        import json

        X = rng.standard_normal((200, 2))
        margin = X[:, 0] - 0.3 * X[:, 1]
        keep = np.abs(margin) > 0.8  # wide margin: labels are unambiguous
        X = X[keep][:60]
        y = (X[:, 0] - 0.3 * X[:, 1] > 0).astype(int)
        with open(p, "w") as f:
            for i, (vec, yi) in enumerate(zip(X, y)):
                f.write(
                    json.dumps(
                        {"id": f"obj{i:04d}", "title": "", "text": "", "embedding": list(map(float, vec))}
                    )
                    + "\n"
                )
        catalog = ds.ingest_catalog(p, 2).catalog
        store = ds.LabelStore(catalog)
        store.create_project("p", seed=5)
        flipped = "obj0007"
        for i, yi in enumerate(y):
            oid = f"obj{i:04d}"
            value = bool(yi)
            if flip_one and oid == flipped:
                value = not value
            store.append_label("p", oid, "POSITIVE" if value else "NEGATIVE", "ACTIVE")
        return catalog, store, LabelingEngine(catalog, store, lam=0.1), flipped

    def test_flipped_label_ranked_first(self, tmp_path):
        _, _, eng, flipped = self._labeled_engine(tmp_path, flip_one=True)
        page = eng.review_page("p", page_size=5)
        assert page.items[0].object_id == flipped
        assert page.items[0].label is not None

    def test_consistent_labels_score_low(self, tmp_path):
        _, store, eng, _ = self._labeled_engine(tmp_path, flip_one=False)
        ranked = eng.mislabel_ranking("p")
        assert ranked[0][1] < 0.5

    def test_only_labeled_objects_and_page_size_cap(self, tmp_path):
        _, store, eng, _ = self._labeled_engine(tmp_path, flip_one=False)
        page = eng.review_page("p", page_size=10)
        assert len(page.items) == 10
        labeled = set(store.get_project("p").current)
        assert set(page.ids()) <= labeled
        # fewer labeled objects than the page size: return them all
        page_all = eng.review_page("p", page_size=1000)
        assert len(page_all.items) == len(labeled)


class TestAdvanceAndRetrain:
    def test_bookkeeping_counts_new_labels(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=30)
        seed = [(f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "WORD_SEARCH") for i in range(6)]
        eng.advance_and_retrain("p", seed)
        batch = [(f"obj{i:04d}", "POSITIVE" if i % 3 else "NEGATIVE", "ACTIVE") for i in range(6, 16)]
        before = len(store.get_project("p").current)
        report = eng.advance_and_retrain("p", batch)
        assert sum(report.labeled_counts) == before + 10

    def test_clear_reduces_counts(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=30)
        seed = [(f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "WORD_SEARCH") for i in range(6)]
        eng.advance_and_retrain("p", seed)
        report = eng.advance_and_retrain("p", [("obj0000", "CLEAR", "REVIEW")])
        assert sum(report.labeled_counts) == 5

    def test_zero_events_skips_refit(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=30)
        seed = [(f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "WORD_SEARCH") for i in range(6)]
        eng.advance_and_retrain("p", seed)
        proj = store.get_project("p")
        w_before = proj.model.weights.copy()
        v_before = proj.model_version
        report = eng.advance_and_retrain("p", [])
        assert not report.retrained
        assert np.array_equal(proj.model.weights, w_before)
        assert proj.model_version == v_before

    def test_degenerate_labels_keep_previous_model(self, tmp_path):
        catalog, store, eng = _setup(tmp_path, n=30)
        seed = [(f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "WORD_SEARCH") for i in range(6)]
        eng.advance_and_retrain("p", seed)
        proj = store.get_project("p")
        w_before = proj.model.weights.copy()
        # clear every negative: only positives remain
        clears = [(f"obj{i:04d}", "CLEAR", "REVIEW") for i in range(0, 6, 2)]
        report = eng.advance_and_retrain("p", clears)
        assert report.model_stale
        assert np.array_equal(proj.model.weights, w_before)

    def test_page_determinism_across_identical_states(self, tmp_path):
        make = lambda: _setup(tmp_path, n=40, seed=9)
        c1, s1, e1 = make()
        c2, s2, e2 = make()
        seed = [(f"obj{i:04d}", "POSITIVE" if i % 2 else "NEGATIVE", "WORD_SEARCH") for i in range(8)]
        e1.advance_and_retrain("p", seed)
        e2.advance_and_retrain("p", seed)
        p1 = e1.next_uncertain_page("p", page_size=5)
        p2 = e2.next_uncertain_page("p", page_size=5)
        assert p1.ids() == p2.ids()
        assert [i.probability for i in p1.items] == [i.probability for i in p2.items]
