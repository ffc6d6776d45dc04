"""Scikit-learn style estimator wrappers.

Each estimator follows the usual conventions: hyperparameters are stored
verbatim in ``__init__`` (so ``get_params``/``set_params``/``clone`` work),
fitted state lives in trailing-underscore attributes, and ``fit`` returns
``self``. The extra ``t`` argument carries the binary treatment indicator.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .baselines import knn_cate, ols_slearner
from .data import CausalDataset, split_dataset
from .errors import ConfigError
from .training import TrainConfig, estimator_label, fit
from .validation import as_float_array, as_matrix, check_binary_treatment


def _dataset_from_arrays(x, t, y):
    return CausalDataset(
        as_matrix(x, "X"), check_binary_treatment(t), as_float_array(y, "y", ndim=1)
    )


class EscfrRegressor(BaseEstimator):
    """Conditional-effect regressor trained against factual risk plus a
    relaxed, outcome-calibrated transport discrepancy.

    Setting ``lambda_=0`` recovers the plain two-headed network; ``gamma=0``
    with ``kappa=inf`` recovers balanced-transport counterfactual
    regression. Pass a validation set to ``fit`` or let it carve one out of
    the training data.
    """

    def __init__(
        self,
        lambda_=1.0,
        epsilon=0.5,
        kappa=5.0,
        gamma=1.0,
        batch_size=32,
        max_epochs=400,
        patience=30,
        validate_every=2,
        learning_rate=1e-3,
        weight_decay=1e-4,
        seed=0,
        selection_metric="auuc",
        hidden_dim=60,
        activation="elu",
        solver_max_iters=1000,
        solver_tol=1e-6,
        standardize_outcomes=True,
        validation_fraction=0.15,
    ):
        self.lambda_ = lambda_
        self.epsilon = epsilon
        self.kappa = kappa
        self.gamma = gamma
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validate_every = validate_every
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.selection_metric = selection_metric
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.solver_max_iters = solver_max_iters
        self.solver_tol = solver_tol
        self.standardize_outcomes = standardize_outcomes
        self.validation_fraction = validation_fraction

    def _train_config(self):
        return TrainConfig(
            lambda_=self.lambda_,
            epsilon=self.epsilon,
            kappa=self.kappa,
            gamma=self.gamma,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            validate_every=self.validate_every,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            selection_metric=self.selection_metric,
            hidden_dim=self.hidden_dim,
            activation=self.activation,
            solver_max_iters=self.solver_max_iters,
            solver_tol=self.solver_tol,
            standardize_outcomes=self.standardize_outcomes,
        )

    def fit(self, X, t, y, validation=None):
        """Train on (X, t, y); ``validation`` is an optional (X, t, y) triple."""
        config = self._train_config()
        train = _dataset_from_arrays(X, t, y)
        if validation is not None:
            valid = _dataset_from_arrays(*validation)
        else:
            if not 0 < self.validation_fraction < 1:
                raise ConfigError(
                    f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
                )
            train, valid = split_dataset(
                train,
                ratios=(1.0 - self.validation_fraction, self.validation_fraction),
                seed=self.seed,
            )
        result = fit(train, valid, config)
        self.result_ = result
        self.report_ = result.report
        self.estimator_kind_ = estimator_label(config)
        return self

    def predict_cate(self, X):
        self._check_is_fitted()
        return self.result_.predict_cate(as_matrix(X, "X"))

    def predict_outcomes(self, X):
        self._check_is_fitted()
        return self.result_.predict_outcomes(as_matrix(X, "X"))

    def _check_is_fitted(self):
        if not hasattr(self, "result_"):
            raise ConfigError("this estimator has not been fitted yet")


class OlsSLearner(BaseEstimator):
    """Ridge regression on [X, t]; the effect is the treatment coefficient."""

    def __init__(self, ridge=1e-6):
        self.ridge = ridge

    def fit(self, X, t, y):
        self.model_ = ols_slearner(_dataset_from_arrays(X, t, y), ridge=self.ridge)
        return self

    def predict_cate(self, X):
        return self.model_.predict_cate(as_matrix(X, "X"))

    def predict_factual(self, X, t):
        return self.model_.predict(as_matrix(X, "X"), t)


class KnnCateRegressor(BaseEstimator):
    """Matching estimator: gap between the k nearest group means."""

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, t, y):
        self.train_ = _dataset_from_arrays(X, t, y)
        return self

    def predict_cate(self, X):
        return knn_cate(self.train_, self.k, as_matrix(X, "X"))
