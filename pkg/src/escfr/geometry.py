"""Cost-matrix construction: squared-Euclidean ground cost and its
outcome-calibrated refinement used by the transport discrepancy."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .validation import as_float_array, as_matrix, check_same_length


def pairwise_sqeuclidean(points_a, points_b):
    """Matrix of squared Euclidean distances between two point sets.

    Computed from explicit differences rather than the inner-product
    expansion: entries are exactly nonnegative and the diagonal is exactly
    zero when both sets coincide.
    """
    points_a = as_matrix(points_a, "points_a")
    points_b = as_matrix(points_b, "points_b")
    if points_a.shape[1] != points_b.shape[1]:
        raise ShapeError(
            f"point dimensionalities differ: {points_a.shape[1]} vs {points_b.shape[1]}"
        )
    diff = points_a[:, None, :] - points_b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class PairedOutcomes:
    """Factual outcomes and cross-group counterfactual predictions.

    ``yhat_cf_treated`` holds the untreated-head predictions for the treated
    units; ``yhat_cf_untreated`` holds the treated-head predictions for the
    untreated units.
    """

    y_treated: np.ndarray
    y_untreated: np.ndarray
    yhat_cf_treated: np.ndarray
    yhat_cf_untreated: np.ndarray

    def __post_init__(self):
        for name in ("y_treated", "y_untreated", "yhat_cf_treated", "yhat_cf_untreated"):
            object.__setattr__(
                self, name, as_float_array(getattr(self, name), name, ndim=1)
            )
        check_same_length("y_treated", self.y_treated, "yhat_cf_treated", self.yhat_cf_treated)
        check_same_length(
            "y_untreated", self.y_untreated, "yhat_cf_untreated", self.yhat_cf_untreated
        )


def pfor_cost_matrix(repr_cost, outcomes, gamma):
    """Calibrate a representation-space cost with outcome proximity.

    Entry (i, j) gains ``gamma * ((yhat_cf_i - y_j)^2 + (yhat_cf_j - y_i)^2)``
    on top of the representation distance, so pairs whose (predicted)
    potential outcomes disagree become expensive to match.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be nonnegative, got {gamma}")
    repr_cost = as_float_array(repr_cost, "repr_cost", ndim=2)
    n, m = repr_cost.shape
    if n != len(outcomes.y_treated) or m != len(outcomes.y_untreated):
        raise ShapeError(
            f"cost matrix {repr_cost.shape} does not match outcome lengths "
            f"({len(outcomes.y_treated)}, {len(outcomes.y_untreated)})"
        )
    gap = (
        (outcomes.yhat_cf_treated[:, None] - outcomes.y_untreated[None, :]) ** 2
        + (outcomes.yhat_cf_untreated[None, :] - outcomes.y_treated[:, None]) ** 2
    )
    return repr_cost + gamma * gap
