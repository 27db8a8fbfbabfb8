import numpy as np
import pytest

from emlabel import simharness as sh
from emlabel.errors import InvalidArgument


class TestGenerateCatalog:
    def test_prevalence_hit_closely(self):
        spec = sh.SyntheticSpec(n_objects=100_000, prevalence=0.02, seed=1)
        gen = sh.generate_catalog(spec)
        rate = gen.truth.mean()
        assert abs(rate - 0.02) <= 0.003

    def test_same_seed_identical(self):
        spec = sh.SyntheticSpec(n_objects=500, embedding_dim=8, seed=4)
        a = sh.generate_catalog(spec)
        b = sh.generate_catalog(spec)
        assert np.array_equal(a.catalog.embeddings, b.catalog.embeddings)
        assert np.array_equal(a.truth, b.truth)
        assert [r.text for r in a.catalog] == [r.text for r in b.catalog]

    def test_noiseless_oracle_matches_truth_outside_band(self):
        spec = sh.SyntheticSpec(n_objects=2000, embedding_dim=8, label_noise=0.0, seed=2)
        gen = sh.generate_catalog(spec)
        for row in range(500):
            value = sh.oracle_label(row, gen)
            if value == "SKIP":
                assert abs(gen.score[row] - 0.5) < spec.abstain_band
            else:
                assert (value == "POSITIVE") == bool(gen.truth[row])

    def test_keywords_correlate_with_truth(self):
        spec = sh.SyntheticSpec(n_objects=20_000, embedding_dim=8, prevalence=0.1,
                                keyword_correlation=0.6, seed=3)
        gen = sh.generate_catalog(spec)
        has_kw = np.array([any(k in t for t in [r.text.lower()] for k in sh.SEED_KEYWORDS)
                           for r in gen.catalog])
        pos_rate = has_kw[gen.truth].mean()
        neg_rate = has_kw[~gen.truth].mean()
        assert pos_rate > 0.5 and neg_rate < 0.05

    def test_degenerate_prevalence_rejected(self):
        with pytest.raises(InvalidArgument):
            sh.generate_catalog(sh.SyntheticSpec(n_objects=200, prevalence=0.0))

    def test_small_catalog_rejected(self):
        with pytest.raises(InvalidArgument):
            sh.SyntheticSpec(n_objects=50)


@pytest.fixture(scope="module")
def gen():
    return sh.generate_catalog(sh.SyntheticSpec(n_objects=5000, embedding_dim=8, seed=9))


class TestOracle:

    def test_confident_positive(self, gen):
        row = int(np.argmax(gen.score))
        assert gen.score[row] > 0.9
        assert sh.oracle_label(row, gen, abstain_band=0.1, noiseless=True) == "POSITIVE"

    def test_near_boundary_skips(self, gen):
        row = int(np.argmin(np.abs(gen.score - 0.52)))
        assert sh.oracle_label(row, gen, abstain_band=0.1) == "SKIP"

    def test_forced_flip(self):
        spec = sh.SyntheticSpec(n_objects=1000, embedding_dim=8, label_noise=1.0, seed=5)
        gen = sh.generate_catalog(spec)
        row = int(np.argmax(gen.score))
        assert sh.oracle_label(row, gen, abstain_band=0.01) == "NEGATIVE"


class TestProtocol:
    SPEC = dict(n_objects=4000, embedding_dim=16, prevalence=0.1, label_noise=0.02,
                abstain_band=0.05, keyword_correlation=0.6)

    def test_budget_exhausted_by_seeding_single_point(self):
        spec = sh.SyntheticSpec(seed=21, **self.SPEC)
        res = sh.run_protocol(spec, budget=100, strategy="SMART")
        assert len(res.curve) == 1
        assert res.labels_used <= 100

    def test_curve_point_per_retrain_and_budget_respected(self):
        spec = sh.SyntheticSpec(seed=22, **self.SPEC)
        res = sh.run_protocol(spec, budget=400, strategy="SMART")
        assert res.labels_used <= 400
        assert len(res.curve) >= 2
        used = [pt["labels_used"] for pt in res.curve]
        assert used == sorted(used)

    def test_deterministic_curves(self):
        spec = sh.SyntheticSpec(seed=23, **self.SPEC)
        a = sh.run_protocol(spec, budget=300, strategy="SMART")
        b = sh.run_protocol(spec, budget=300, strategy="SMART")
        assert a.curve == b.curve
        assert a.to_json() == b.to_json()

    def test_test_ids_disjoint_from_training_labels(self):
        spec = sh.SyntheticSpec(seed=24, **self.SPEC)
        config = sh.ProtocolConfig(test_size=400)
        run = sh._ProtocolRun(spec, 300, "SMART", config)
        run.run()
        test_ids = {run.gen.catalog.ids[i] for i in run.test_rows}
        labeled_ids = set(run.store.get_project("sim").current)
        assert not (test_ids & labeled_ids)

    def test_random_strategy_runs(self):
        spec = sh.SyntheticSpec(seed=25, **self.SPEC)
        res = sh.run_protocol(spec, budget=300, strategy="RANDOM")
        assert res.strategy == "RANDOM"
        assert res.labels_used <= 300
        assert res.curve  # at 10% prevalence both classes appear quickly

    def test_summary_table_shape(self):
        spec = sh.SyntheticSpec(seed=26, **self.SPEC)
        res = sh.run_protocol(spec, budget=200, strategy="RANDOM")
        table = res.summary_table()
        assert "# Train" in table and "F1" in table
        assert len(table.splitlines()) == 2

    def test_bad_budget_and_strategy(self):
        spec = sh.SyntheticSpec(seed=27, **self.SPEC)
        with pytest.raises(InvalidArgument):
            sh.run_protocol(spec, budget=50, strategy="SMART")
        with pytest.raises(InvalidArgument):
            sh.run_protocol(spec, budget=200, strategy="GREEDY")


class TestMcarCatalog:
    def test_missingness_rate(self, materials_tax, category_tax):
        spec = sh.McarSpec(n_objects=2000, missing_rate=0.3, seed=1)
        cat = sh.generate_mcar_catalog(spec, materials_tax, category_tax)
        missing_price = sum(1 for r in cat if r.price is None) / len(cat)
        assert abs(missing_price - 0.3) < 0.05

    def test_ratings_hist_sums_to_reviews(self, materials_tax, category_tax):
        spec = sh.McarSpec(n_objects=500, seed=2)
        cat = sh.generate_mcar_catalog(spec, materials_tax, category_tax)
        for r in cat:
            if r.ratings_hist is not None:
                assert sum(r.ratings_hist) == r.num_reviews

    def test_material_paths_valid(self, materials_tax, category_tax):
        spec = sh.McarSpec(n_objects=300, seed=3)
        cat = sh.generate_mcar_catalog(spec, materials_tax, category_tax)
        for r in cat:
            if r.category_path is not None:
                assert category_tax.is_valid_path(r.category_path)
            if r.materials is not None:
                assert r.materials.positive
