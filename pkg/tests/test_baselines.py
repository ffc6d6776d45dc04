import numpy as np
import pytest

from escfr.baselines import knn_cate, knn_factual, ols_slearner
from escfr.data import CausalDataset
from escfr.errors import ConfigError


def linear_dataset(rng, n=200, d=4, effect=2.0, noise=0.0):
    x = rng.normal(size=(n, d))
    t = (rng.uniform(size=n) < 0.5).astype(int)
    w = rng.normal(size=d)
    y = x @ w + effect * t + noise * rng.normal(size=n)
    return CausalDataset(x, t, y), w


class TestOlsSLearner:
    def test_recovers_noiseless_linear_data(self):
        rng = np.random.default_rng(0)
        dataset, w = linear_dataset(rng)
        model = ols_slearner(dataset, ridge=1e-10)
        assert model.treatment_coefficient == pytest.approx(2.0, rel=1e-8)
        np.testing.assert_allclose(model.weights[:-1], w, rtol=1e-8)
        np.testing.assert_allclose(model.predict_cate(dataset.x), np.full(len(dataset), 2.0), rtol=1e-8)

    def test_constant_cate_everywhere(self):
        rng = np.random.default_rng(1)
        dataset, _ = linear_dataset(rng, noise=0.3)
        model = ols_slearner(dataset)
        queries = rng.normal(size=(7, 4))
        assert len(set(model.predict_cate(queries).tolist())) == 1

    def test_strong_ridge_shrinks_to_zero(self):
        rng = np.random.default_rng(2)
        dataset, _ = linear_dataset(rng)
        model = ols_slearner(dataset, ridge=1e12)
        assert abs(model.treatment_coefficient) < 1e-6
        assert np.all(np.abs(model.weights) < 1e-6)

    def test_singular_without_ridge(self):
        x = np.zeros((6, 2))
        x[:, 0] = np.arange(6.0)
        x[:, 1] = np.arange(6.0)  # duplicated column
        dataset = CausalDataset(x, np.array([0, 1] * 3), np.arange(6.0))
        with pytest.raises(np.linalg.LinAlgError):
            ols_slearner(dataset, ridge=0.0)

    def test_negative_ridge_rejected(self):
        rng = np.random.default_rng(3)
        dataset, _ = linear_dataset(rng)
        with pytest.raises(ConfigError):
            ols_slearner(dataset, ridge=-1.0)


class TestKnnCate:
    def one_dim_dataset(self):
        x = np.array([[0.0], [10.0], [0.0], [10.0]])
        t = np.array([1, 1, 0, 0])
        y = np.array([1.0, 5.0, 0.0, 3.0])
        return CausalDataset(x, t, y)

    def test_nearest_neighbor_lookup_by_hand(self):
        dataset = self.one_dim_dataset()
        np.testing.assert_allclose(knn_cate(dataset, 1, [[1.0]]), [1.0])

    def test_full_group_k_gives_mean_difference(self):
        dataset = self.one_dim_dataset()
        expected = (1.0 + 5.0) / 2 - (0.0 + 3.0) / 2
        rng = np.random.default_rng(4)
        queries = rng.normal(size=(5, 1))
        np.testing.assert_allclose(knn_cate(dataset, 2, queries), np.full(5, expected))

    def test_query_on_treated_point_uses_own_outcome(self):
        dataset = self.one_dim_dataset()
        cate = knn_cate(dataset, 1, [[10.0]])
        np.testing.assert_allclose(cate, [5.0 - 3.0])

    def test_k_too_large(self):
        with pytest.raises(ConfigError):
            knn_cate(self.one_dim_dataset(), 3, [[0.0]])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(50, 3))
        t = np.array([1, 0] * 25)
        y = rng.normal(size=50)
        dataset = CausalDataset(x, t, y)
        perm = rng.permutation(50)
        shuffled = CausalDataset(x[perm], t[perm], y[perm])
        queries = rng.normal(size=(9, 3))
        np.testing.assert_allclose(
            knn_cate(dataset, 3, queries), knn_cate(shuffled, 3, queries), rtol=1e-12
        )

    def test_factual_prediction_uses_own_group(self):
        dataset = self.one_dim_dataset()
        yhat = knn_factual(dataset, 1, [[0.0], [10.0]], [1, 0])
        np.testing.assert_allclose(yhat, [1.0, 3.0])
