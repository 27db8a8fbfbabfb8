import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from emlabel import metrics as m
from emlabel.errors import InvalidArgument

positive_floats = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)


class TestMnre:
    def test_perfect(self):
        assert m.mnre(5.0, 5.0) == 1.0

    def test_closed_forms(self):
        assert m.mnre(2.0, 1.0) == 0.5
        assert m.mnre(3.0, 4.0) == 0.75

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidArgument):
            m.mnre(0.0, 1.0)
        with pytest.raises(InvalidArgument):
            m.mnre(1.0, -2.0)

    @given(positive_floats, positive_floats)
    def test_symmetry(self, p, t):
        assert m.mnre(p, t) == m.mnre(t, p)

    @given(positive_floats, positive_floats, st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariance(self, p, t, c):
        assert m.mnre(c * p, c * t) == pytest.approx(m.mnre(p, t), rel=1e-9)


class TestAlde:
    def test_perfect(self):
        assert m.alde(3.3, 3.3) == 0.0

    def test_closed_forms(self):
        assert m.alde(math.e * 2.0, 2.0) == pytest.approx(1.0, abs=1e-12)
        assert m.alde(2.0, 8.0) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidArgument):
            m.alde(-1.0, 1.0)

    @given(positive_floats, positive_floats)
    def test_symmetry(self, p, t):
        assert m.alde(p, t) == m.alde(t, p)

    def test_mnre_is_exp_of_negative_alde(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p, t = np.exp(rng.uniform(-6, 6, size=2))
            assert m.mnre(p, t) == pytest.approx(math.exp(-m.alde(p, t)), abs=1e-12)


class TestRatingsKL:
    def test_identical_is_zero(self):
        d = m.RatingsDistribution(np.array([0.1, 0.2, 0.3, 0.2, 0.2]), 10)
        assert m.ratings_kl(d, d) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_vs_uniform(self):
        true = m.RatingsDistribution(np.array([1.0, 0, 0, 0, 0]), 3)
        pred = m.RatingsDistribution(np.full(5, 0.2), 0)
        assert m.ratings_kl(true, pred) == pytest.approx(math.log(5.0), abs=1e-12)

    def test_zero_reviews_excluded_from_batch(self):
        a = m.RatingsDistribution(np.array([1.0, 0, 0, 0, 0]), 0)
        b = m.RatingsDistribution(np.array([0, 1.0, 0, 0, 0]), 7)
        pred = m.RatingsDistribution(np.full(5, 0.2), 0)
        # the zero-review pair would contribute ln 5 if it were counted
        assert m.weighted_mean_kl([(a, pred), (b, pred)]) == pytest.approx(
            m.ratings_kl(b, pred), abs=1e-12
        )

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            true = m.RatingsDistribution(p, 5)
            kl = m.ratings_kl(true, m.RatingsDistribution(q, 5))
            assert kl >= 0.0
            assert m.ratings_kl(true, true) == pytest.approx(0.0, abs=1e-9)

    def test_normalization_validated(self):
        with pytest.raises(InvalidArgument):
            m.RatingsDistribution(np.array([0.5, 0.5, 0.5, 0, 0]), 1)


class TestObjectMaterialF1:
    def test_exact_match(self):
        pred = {"a": 0.9, "b": 0.8, "c": 0.1}
        assert m.object_material_f1(pred, {"a", "b"}, {"c"}) == 1.0

    def test_disjoint_is_zero(self):
        pred = {"a": 0.1, "b": 0.2, "c": 0.9}
        assert m.object_material_f1(pred, {"a", "b"}, {"c"}) == 0.0

    def test_half_overlap(self):
        # truth positives {A, B}; predicted positives {A, C}
        pred = {"A": 0.9, "B": 0.1, "C": 0.9, "D": 0.1}
        assert m.object_material_f1(pred, {"A", "B"}, {"C", "D"}) == pytest.approx(0.5)

    def test_unlabeled_nodes_ignored(self):
        pred = {"A": 0.9, "Z": 0.99}  # Z carries no truth: must not count as fp
        assert m.object_material_f1(pred, {"A"}, set()) == 1.0

    def test_requires_positive_truth(self):
        with pytest.raises(InvalidArgument):
            m.object_material_f1({"a": 0.1}, set(), {"a"})

    def test_dataset_mean(self):
        per_object = [
            ({"a": 1.0}, {"a"}, set()),
            ({"A": 0.9, "B": 0.1, "C": 0.9}, {"A", "B"}, {"C"}),
        ]
        assert m.dataset_material_f1(per_object) == pytest.approx(0.75)


class TestBinaryPRF:
    def test_rare_class_reference_row(self):
        # 1504 test items, 25 positives, 4 errors
        r = m.binary_prf(23, 2, 2, 1477)
        assert round(100 * r.precision, 1) == 92.0
        assert round(100 * r.recall, 1) == 92.0
        assert round(100 * r.f1, 1) == 92.0
        assert round(100 * r.accuracy, 1) == 99.7

    def test_degenerate_flags(self):
        r = m.binary_prf(0, 0, 5, 0)
        assert r.precision is None
        assert r.recall == 0.0
        assert "precision" in r.undefined

    def test_all_ones(self):
        r = m.binary_prf(1, 1, 1, 1)
        assert (r.precision, r.recall, r.f1, r.accuracy) == (0.5, 0.5, 0.5, 0.5)

    def test_rejects_negative(self):
        with pytest.raises(InvalidArgument):
            m.binary_prf(-1, 0, 0, 0)
