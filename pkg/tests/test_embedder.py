import numpy as np
import pytest

from emlabel import embedder as em
from emlabel.errors import FailedPrecondition, InvalidArgument, TrainingFailure


class TestFeatureLayout:
    def test_from_lengths(self):
        layout = em.FeatureLayout.from_lengths([("a", 2), ("b", 3)])
        assert layout.total_dim == 5
        assert layout.range_of("b") == slice(2, 5)

    def test_gap_rejected(self):
        with pytest.raises(InvalidArgument):
            em.FeatureLayout((("a", 0, 2), ("b", 3, 2)), 5)

    def test_overlap_rejected(self):
        with pytest.raises(InvalidArgument):
            em.FeatureLayout((("a", 0, 3), ("b", 2, 3)), 5)

    def test_wrong_total_rejected(self):
        with pytest.raises(InvalidArgument):
            em.FeatureLayout((("a", 0, 2),), 5)


class TestBuildInputVector:
    layout = em.FeatureLayout.from_lengths([("text", 2), ("price", 2)])

    def _standardizers(self):
        rng = np.random.default_rng(0)
        vals = {"text": rng.standard_normal((50, 2)), "price": rng.standard_normal((50, 2))}
        return vals, em.fit_layout_standardizers(vals, self.layout)

    def test_concatenated_length(self):
        vals, stds = self._standardizers()
        out = em.build_input_vector({"text": [1.0, 2.0], "price": [3.0, 4.0]}, self.layout, stds)
        assert out.shape == (4,)

    def test_standardized_columns_zero_mean(self):
        vals, stds = self._standardizers()
        rows = np.array(
            [
                em.build_input_vector({"text": vals["text"][i], "price": vals["price"][i]}, self.layout, stds)
                for i in range(50)
            ]
        )
        assert np.all(np.abs(rows.mean(axis=0)) < 1e-9)

    def test_missing_field_names_slice(self):
        vals, stds = self._standardizers()
        with pytest.raises(FailedPrecondition, match="price"):
            em.build_input_vector({"text": [1.0, 2.0]}, self.layout, stds)


class TestTraining:
    def test_rank_one_reconstructs_exactly(self):
        rng = np.random.default_rng(42)
        X = np.outer(rng.standard_normal(60), rng.standard_normal(8))
        cfg = em.TrainConfig(batch_size=64, epochs=800, lr_start=3e-2, lr_end=3e-5, seed=1)
        m = em.train_autoencoder(X, 1, cfg)
        assert m.final_loss <= 1e-4

    def test_full_rank_bottleneck_reaches_identity(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((80, 6))
        cfg = em.TrainConfig(batch_size=80, epochs=3000, lr_start=3e-2, lr_end=1e-6, seed=2)
        m = em.train_autoencoder(X, 6, cfg)
        assert m.final_loss <= 1e-6

    def test_rms_is_sqrt_of_loss(self):
        m = em.AutoencoderModel(
            enc_w=np.zeros((2, 1)),
            enc_b=np.zeros(1),
            dec_w=np.zeros((1, 2)),
            dec_b=np.zeros(2),
            activation=em.LINEAR,
            bottleneck_dim=1,
            input_standardizer=None,
            final_loss=0.0054,
        )
        assert m.rms == pytest.approx(0.0735, abs=5e-5)

    def test_too_few_vectors(self):
        with pytest.raises(InvalidArgument):
            em.train_autoencoder(np.zeros((3, 4)), 2)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported_with_epoch(self):
        # an absurd learning rate overflows the squared error to inf
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 4))
        cfg = em.TrainConfig(batch_size=40, epochs=50, lr_start=1e200, lr_end=1e200, seed=0)
        with pytest.raises(TrainingFailure, match="epoch"):
            em.train_autoencoder(X, 2, cfg)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((50, 5))
        cfg = em.TrainConfig(batch_size=16, epochs=40, lr_start=1e-2, lr_end=1e-4, seed=9)
        a = em.train_autoencoder(X, 2, cfg)
        b = em.train_autoencoder(X, 2, cfg)
        assert np.array_equal(a.enc_w, b.enc_w)
        assert np.array_equal(a.dec_b, b.dec_b)
        assert a.final_loss == b.final_loss

    def test_linear_never_beats_principal_subspace(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((60, 8))
        opt = em.principal_subspace_loss(X, 3)
        cfg = em.TrainConfig(batch_size=60, epochs=2000, lr_start=3e-2, lr_end=1e-6, seed=0)
        m = em.train_autoencoder(X, 3, cfg)
        assert m.final_loss >= opt - 1e-6


@pytest.fixture(scope="module")
def model_and_data():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((60, 6)) @ rng.standard_normal((6, 6))
    cfg = em.TrainConfig(batch_size=60, epochs=400, lr_start=1e-2, lr_end=1e-4, seed=4)
    return em.train_autoencoder(X, 3, cfg), X


class TestEncode:

    def test_output_length(self, model_and_data):
        m, X = model_and_data
        assert em.encode(X[0], m).shape == (3,)

    def test_training_set_codes_standardized(self, model_and_data):
        m, X = model_and_data
        codes = em.encode(X, m)
        assert np.all(np.abs(codes.mean(axis=0)) < 1e-6)

    def test_identical_inputs_identical_codes(self, model_and_data):
        m, X = model_and_data
        assert np.array_equal(em.encode(X[3], m), em.encode(X[3].copy(), m))

    def test_dimension_mismatch(self, model_and_data):
        m, _ = model_and_data
        with pytest.raises(InvalidArgument):
            em.encode(np.zeros(5), m)
        layout = em.FeatureLayout.from_lengths([("a", 4)])
        with pytest.raises(InvalidArgument):
            em.encode(np.zeros(6), m, layout=layout)


class TestReconstructionReport:
    def test_perfect_reconstruction_zero(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((40, 4))
        cfg = em.TrainConfig(batch_size=40, epochs=2500, lr_start=3e-2, lr_end=1e-6, seed=1)
        m = em.train_autoencoder(X, 4, cfg)
        rep = em.reconstruction_report(m, X)
        assert rep["avg_standardized_l2"] <= 1e-6

    def test_per_slice_weighted_average_identity(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 6))
        layout = em.FeatureLayout.from_lengths([("a", 2), ("b", 4)])
        cfg = em.TrainConfig(batch_size=50, epochs=50, lr_start=1e-2, lr_end=1e-3, seed=0)
        m = em.train_autoencoder(X, 2, cfg)
        rep = em.reconstruction_report(m, X, layout=layout)
        weighted = (2 * rep["per_slice_l2"]["a"] + 4 * rep["per_slice_l2"]["b"]) / 6
        assert weighted == pytest.approx(rep["avg_standardized_l2"], rel=1e-9)

    def test_rank_deficient_slice_pattern_matches_spectral_oracle(self):
        # slice "a" is a noisy copy of a rank-1 signal; slice "b" is full-rank
        # noise. A 1-bottleneck should reconstruct "a" far better than "b",
        # consistenly with the principal-component structure.
        rng = np.random.default_rng(3)
        s = rng.standard_normal(80)
        A = np.outer(s, rng.standard_normal(3)) * 2.0
        B = rng.standard_normal((80, 3))
        X = np.hstack([A, B])
        layout = em.FeatureLayout.from_lengths([("a", 3), ("b", 3)])
        cfg = em.TrainConfig(batch_size=80, epochs=3000, lr_start=3e-2, lr_end=1e-6, seed=5)
        m = em.train_autoencoder(X, 1, cfg)
        rep = em.reconstruction_report(m, X, layout=layout)
        opt = em.principal_subspace_loss(X, 1)
        assert rep["avg_standardized_l2"] <= opt * 1.1 + 1e-9
        assert rep["per_slice_l2"]["a"] < 0.25 * rep["per_slice_l2"]["b"]


class TestGradients:
    @pytest.mark.parametrize("activation", [em.LINEAR, em.SMOOTH_SATURATING])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(5)
        Xs = rng.standard_normal((12, 5))
        params = [
            rng.standard_normal((5, 3)) * 0.5,
            rng.standard_normal(3) * 0.1,
            rng.standard_normal((3, 5)) * 0.5,
            rng.standard_normal(5) * 0.1,
        ]
        loss, *grads = em.ae_loss_and_grads(*params, activation, Xs)
        eps = 1e-6
        for arr, g in zip(params, grads):
            flat = arr.ravel()
            gflat = g.ravel()
            for idx in range(0, flat.size, max(1, flat.size // 8)):
                old = flat[idx]
                flat[idx] = old + eps
                lp = em.ae_loss_and_grads(*params, activation, Xs)[0]
                flat[idx] = old - eps
                lmn = em.ae_loss_and_grads(*params, activation, Xs)[0]
                flat[idx] = old
                fd = (lp - lmn) / (2 * eps)
                assert abs(fd - gflat[idx]) / max(1e-8, abs(gflat[idx])) < 1e-4


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((40, 4))
        cfg = em.TrainConfig(batch_size=40, epochs=30, lr_start=1e-2, lr_end=1e-3, seed=0)
        m = em.train_autoencoder(X, 2, cfg)
        layout = em.FeatureLayout.from_lengths([("a", 4)])
        path = tmp_path / "model.npz"
        em.save_autoencoder(m, path, layout=layout)
        back, layout2 = em.load_autoencoder(path)
        assert np.array_equal(back.enc_w, m.enc_w)
        assert np.array_equal(back.code_standardizer.mean, m.code_standardizer.mean)
        assert back.final_loss == m.final_loss
        assert layout2.total_dim == 4
        assert np.array_equal(em.encode(X, back), em.encode(X, m))
