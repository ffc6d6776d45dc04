"""Non-neural reference estimators: ridge S-learner and k-NN matching."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import pairwise_sqeuclidean
from .validation import as_matrix


@dataclass(frozen=True)
class RidgeModel:
    """Linear model on [covariates, treatment] with an unpenalized intercept."""

    weights: np.ndarray
    intercept: float
    ridge: float

    @property
    def treatment_coefficient(self):
        return float(self.weights[-1])

    def predict(self, x, t):
        x = as_matrix(x, "x")
        t = np.asarray(t, dtype=np.float64)
        design = np.column_stack([x, t])
        return design @ self.weights + self.intercept

    def predict_cate(self, x):
        """Constant effect: the S-learner's treatment coefficient."""
        x = as_matrix(x, "x")
        return np.full(len(x), self.treatment_coefficient)


def ols_slearner(dataset, ridge=1e-6):
    """Closed-form normal-equations fit of outcome on [covariates, treatment].

    Raises ``numpy.linalg.LinAlgError`` when ridge is zero and the system is
    singular.
    """
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    z = np.column_stack([dataset.x, dataset.t.astype(np.float64)])
    n, p = z.shape
    design = np.column_stack([z, np.ones(n)])
    gram = design.T @ design
    penalty = np.zeros(p + 1)
    penalty[:p] = ridge
    gram = gram + np.diag(penalty)
    # Cholesky rejects singular systems reliably; solve() alone may not.
    np.linalg.cholesky(gram)
    solution = np.linalg.solve(gram, design.T @ dataset.y)
    return RidgeModel(weights=solution[:p], intercept=float(solution[p]), ridge=ridge)


def _knn_group_means(dataset, k, x_query):
    means = {}
    for group in (1, 0):
        members = np.flatnonzero(dataset.t == group)
        if k > len(members):
            raise ConfigError(
                f"k={k} exceeds treatment group {group} size {len(members)}"
            )
        dists = pairwise_sqeuclidean(x_query, dataset.x[members])
        nearest = np.argsort(dists, axis=1, kind="stable")[:, :k]
        means[group] = dataset.y[members][nearest].mean(axis=1)
    return means


def knn_cate(dataset, k, x_query):
    """Effect estimate as the gap between k-nearest group means.

    Distances are Euclidean; exact ties are broken in favor of the
    lowest-index unit, so the result is invariant to row permutations up to
    that rule.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    x_query = as_matrix(x_query, "x_query")
    means = _knn_group_means(dataset, k, x_query)
    return means[1] - means[0]


def knn_factual(dataset, k, x_query, t_query):
    """Factual-outcome prediction: mean of the k nearest same-group units."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    x_query = as_matrix(x_query, "x_query")
    means = _knn_group_means(dataset, k, x_query)
    return np.where(np.asarray(t_query) == 1, means[1], means[0])
