import numpy as np
import pytest

from hri_bridge import codec
from hri_bridge.metrics import FeatureVector
from hri_bridge.regression import (
    LinearModel,
    MissingFeature,
    RankDeficient,
    TooFewSamples,
    model_from_document,
    model_to_document,
    ols_fit,
    predict,
    predict_clamped,
)


class TestExactRecovery:
    def test_zero_noise_plane(self):
        rng = np.random.default_rng(42)
        X = rng.normal(size=(50, 2))
        y = 1.0 + 2.0 * X[:, 0] - 3.0 * X[:, 1]
        model = ols_fit(X, y)
        assert abs(model.intercept - 1.0) < 1e-9
        assert abs(model.coefficients[0] - 2.0) < 1e-9
        assert abs(model.coefficients[1] + 3.0) < 1e-9
        assert model.r_squared == 1.0
        assert model.n_samples == 50
        assert model.residual_std < 1e-9

    def test_predict_training_rows(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 3))
        y = 0.5 - 1.5 * X[:, 0] + 0.25 * X[:, 1] + 4.0 * X[:, 2]
        model = ols_fit(X, y, feature_names=["a", "b", "c"])
        for row, target in zip(X, y):
            got = predict(model, {"a": row[0], "b": row[1], "c": row[2]})
            assert abs(got - target) < 1e-9


class TestDegenerateInputs:
    def test_duplicated_column(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=100)
        X = np.column_stack([x, x])
        y = rng.normal(size=100)
        with pytest.raises(RankDeficient):
            ols_fit(X, y)

    def test_constant_column_conflicts_with_intercept(self):
        X = np.column_stack([np.full(40, 2.0)])
        y = np.arange(40.0)
        with pytest.raises(RankDeficient):
            ols_fit(X, y)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            ols_fit(np.ones((3, 2)) + np.eye(3, 2), np.ones(3))

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            ols_fit(np.ones(5), np.ones(5))
        with pytest.raises(ValueError):
            ols_fit(np.ones((5, 1)), np.ones(4))


class TestStatisticalRecovery:
    def test_monte_carlo_coefficients_within_three_se(self):
        # scoring-study shape: 196 sessions, 10 explanatory features
        n, p, sigma = 196, 10, 0.1
        master = np.random.default_rng(20260810)
        beta_true = master.uniform(-2, 2, size=p)
        intercept_true = 3.0
        trials = 40
        hits = np.zeros(p + 1, dtype=int)
        for trial in range(trials):
            rng = np.random.default_rng(1000 + trial)
            X = rng.normal(size=(n, p))
            y = intercept_true + X @ beta_true + rng.normal(scale=sigma, size=n)
            model = ols_fit(X, y)
            estimates = np.array([model.intercept, *model.coefficients])
            truth = np.array([intercept_true, *beta_true])
            se = np.array(model.std_errors)
            hits += (np.abs(estimates - truth) <= 3 * se).astype(int)
        fractions = hits / trials
        assert np.all(fractions >= 0.95), f"per-coefficient hit fractions {fractions}"

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(196, 10))
        y = 2.0 + X @ rng.uniform(-1, 1, size=10) + rng.normal(scale=0.1, size=196)
        model = ols_fit(X, y)
        A = np.column_stack([np.ones(len(y)), X])
        beta = np.array([model.intercept, *model.coefficients])
        residuals = y - A @ beta
        lhs = np.abs(A.T @ residuals).max()
        scale = np.linalg.norm(A, axis=0).max() * max(np.linalg.norm(residuals), 1e-30)
        assert lhs / scale < 1e-8

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(60, 4))
        y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + rng.normal(scale=0.3, size=60)
        base = ols_fit(X, y)
        shifted = ols_fit(X, y + 10.0)
        assert abs(shifted.intercept - base.intercept - 10.0) < 1e-9
        for a, b in zip(base.coefficients, shifted.coefficients):
            assert abs(a - b) < 1e-9


class TestPredict:
    @staticmethod
    def toy_model():
        return LinearModel(
            feature_names=("a", "b"),
            intercept=1.0,
            coefficients=(2.0, -3.0),
            n_samples=10,
            residual_std=0.0,
            r_squared=1.0,
            std_errors=(0.0, 0.0, 0.0),
        )

    def test_zero_vector_gives_intercept(self):
        assert predict(self.toy_model(), {"a": 0.0, "b": 0.0}) == 1.0

    def test_raw_and_clamped(self):
        model = self.toy_model()
        x = {"a": 1.0, "b": 1.0}
        assert predict(model, x) == 0.0
        assert predict_clamped(model, x) == 1.0
        high = {"a": 4.0, "b": 0.0}
        assert predict(model, high) == 9.0
        assert predict_clamped(model, high) == 5.0

    def test_feature_vector_input(self):
        fv = FeatureVector(session_id="s", values={"a": 1.0, "b": 0.0})
        assert predict(self.toy_model(), fv) == 3.0

    def test_missing_feature(self):
        with pytest.raises(MissingFeature):
            predict(self.toy_model(), {"a": 1.0})


class TestSerialization:
    def test_document_round_trip(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(25, 2))
        y = 1.0 + X @ np.array([0.5, -0.25]) + rng.normal(scale=0.05, size=25)
        model = ols_fit(X, y, feature_names=["gaze", "time"])
        doc = model_to_document(model)
        data = codec.encode_document(doc)
        restored = model_from_document(codec.decode_document(data))
        assert restored == model
