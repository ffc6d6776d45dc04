import numpy as np
import pytest

from escfr.data import GenSpec, generate_synthetic, split_dataset
from escfr.errors import ConfigError
from escfr.estimators import EscfrRegressor, KnnCateRegressor, OlsSLearner


def small_problem(seed=0):
    dataset = generate_synthetic(GenSpec(n=150, d=3, bias_strength=1.0, noise_std=0.5, seed=seed))
    train, valid, test = split_dataset(dataset, seed=seed)
    return train, valid, test


def quick_regressor(**overrides):
    params = dict(
        max_epochs=6, patience=2, hidden_dim=8, batch_size=16,
        solver_max_iters=200, seed=0,
    )
    params.update(overrides)
    return EscfrRegressor(**params)


class TestEscfrRegressor:
    def test_get_set_params_roundtrip(self):
        est = quick_regressor(lambda_=0.5)
        params = est.get_params()
        assert params["lambda_"] == 0.5
        est.set_params(gamma=2.0)
        assert est.gamma == 2.0

    def test_fit_predict_shapes(self):
        train, valid, test = small_problem()
        est = quick_regressor().fit(train.x, train.t, train.y, validation=(valid.x, valid.t, valid.y))
        cate = est.predict_cate(test.x)
        assert cate.shape == (len(test),)
        y0, y1 = est.predict_outcomes(test.x)
        np.testing.assert_allclose(y1 - y0, cate, rtol=1e-12)
        assert est.estimator_kind_ == "escfr"

    def test_internal_validation_split(self):
        train, _, _ = small_problem(seed=1)
        est = quick_regressor().fit(train.x, train.t, train.y)
        assert hasattr(est, "report_")

    def test_unfitted_raises(self):
        with pytest.raises(ConfigError):
            quick_regressor().predict_cate(np.zeros((2, 3)))

    def test_determinism(self):
        train, valid, _ = small_problem(seed=2)
        validation = (valid.x, valid.t, valid.y)
        first = quick_regressor().fit(train.x, train.t, train.y, validation=validation)
        second = quick_regressor().fit(train.x, train.t, train.y, validation=validation)
        queries = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(first.predict_cate(queries), second.predict_cate(queries))

    def test_bad_validation_fraction(self):
        train, _, _ = small_problem(seed=3)
        est = quick_regressor(validation_fraction=1.5)
        with pytest.raises(ConfigError):
            est.fit(train.x, train.t, train.y)


class TestBaselineEstimators:
    def test_ols_wrapper(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(100, 3))
        t = (rng.uniform(size=100) < 0.5).astype(int)
        y = x @ np.array([1.0, -1.0, 0.5]) + 2.0 * t
        est = OlsSLearner(ridge=1e-10).fit(x, t, y)
        np.testing.assert_allclose(est.predict_cate(x[:5]), np.full(5, 2.0), rtol=1e-8)

    def test_knn_wrapper(self):
        x = np.array([[0.0], [10.0], [0.0], [10.0]])
        t = np.array([1, 1, 0, 0])
        y = np.array([1.0, 5.0, 0.0, 3.0])
        est = KnnCateRegressor(k=1).fit(x, t, y)
        np.testing.assert_allclose(est.predict_cate([[1.0]]), [1.0])

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        est = quick_regressor(lambda_=0.25)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
