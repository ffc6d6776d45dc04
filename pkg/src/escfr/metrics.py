"""Estimation-quality metrics: heterogeneous-effect error, uplift-ranking
area, and factual RMSE."""

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError
from .validation import as_float_array, check_binary_treatment, check_same_length


def pehe_metrics(tau_hat, tau_true):
    """Mean squared error between estimated and true per-unit effects.

    Returns ``(pehe, sqrt_pehe)``; only computable when true effects are
    known (synthetic or semi-synthetic data).
    """
    tau_hat = as_float_array(tau_hat, "tau_hat", ndim=1)
    tau_true = as_float_array(tau_true, "tau_true", ndim=1)
    check_same_length("tau_hat", tau_hat, "tau_true", tau_true)
    if len(tau_hat) == 0:
        raise MetricError("pehe needs at least one unit")
    pehe = float(np.mean((tau_hat - tau_true) ** 2))
    return pehe, float(np.sqrt(pehe))


def auuc(tau_hat, t, y):
    """Normalized area under the uplift curve of a predicted-effect ranking.

    Units are sorted by ``tau_hat`` descending (ties broken by original
    index). For each prefix of size k the uplift is
    ``(mean(y | t=1) - mean(y | t=0)) * k / N`` with an empty group's mean
    taken as 0; the curve's mean is normalized by its final value. A random
    ranking scores about 0.5, a useful ranking above it. When the overall
    group-mean difference is zero the 0.5 sentinel is returned.
    """
    tau_hat = as_float_array(tau_hat, "tau_hat", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    t = check_binary_treatment(t)
    check_same_length("tau_hat", tau_hat, "t", t)
    check_same_length("tau_hat", tau_hat, "y", y)
    if not (np.any(t == 1) and np.any(t == 0)):
        raise MetricError("auuc needs both treatment groups")

    order = np.argsort(-tau_hat, kind="stable")
    t_sorted = t[order].astype(np.float64)
    y_sorted = y[order]
    n = len(y_sorted)

    n1 = np.cumsum(t_sorted)
    n0 = np.arange(1, n + 1) - n1
    sum1 = np.cumsum(y_sorted * t_sorted)
    sum0 = np.cumsum(y_sorted * (1.0 - t_sorted))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean1 = np.where(n1 > 0, sum1 / np.maximum(n1, 1), 0.0)
        mean0 = np.where(n0 > 0, sum0 / np.maximum(n0, 1), 0.0)
    k = np.arange(1, n + 1)
    uplift = (mean1 - mean0) * k / n
    final = uplift[-1]
    if final == 0.0:
        return 0.5
    return float(np.sum(uplift) / n / final)


def factual_rmse(yhat_factual, y):
    """Root mean squared error of factual-outcome predictions."""
    yhat_factual = as_float_array(yhat_factual, "yhat_factual", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    check_same_length("yhat_factual", yhat_factual, "y", y)
    if len(y) == 0:
        raise MetricError("factual_rmse needs at least one unit")
    return float(np.sqrt(np.mean((yhat_factual - y) ** 2)))


@dataclass(frozen=True)
class MetricReport:
    """Metrics for one model on one split; effect errors are optional
    because they need true effects."""

    split: str
    auuc: float
    factual_rmse: float
    pehe: float = None
    sqrt_pehe: float = None

    def __post_init__(self):
        if (self.pehe is None) != (self.sqrt_pehe is None):
            raise ShapeError("pehe and sqrt_pehe must be supplied together")
        if self.pehe is not None:
            if abs(self.sqrt_pehe**2 - self.pehe) > 1e-12 * max(1.0, abs(self.pehe)):
                raise ShapeError("sqrt_pehe^2 must equal pehe")
        if self.factual_rmse < 0:
            raise ShapeError("factual_rmse must be nonnegative")

    def to_json_dict(self):
        return {
            "split": self.split,
            "auuc": self.auuc,
            "factual_rmse": self.factual_rmse,
            "pehe": self.pehe,
            "sqrt_pehe": self.sqrt_pehe,
        }


def evaluate_predictions(split, tau_hat, yhat_factual, t, y, tau_true=None):
    """Bundle the three metrics into a :class:`MetricReport`."""
    pehe = sqrt_pehe = None
    if tau_true is not None:
        pehe, sqrt_pehe = pehe_metrics(tau_hat, tau_true)
    return MetricReport(
        split=split,
        auuc=auuc(tau_hat, t, y),
        factual_rmse=factual_rmse(yhat_factual, y),
        pehe=pehe,
        sqrt_pehe=sqrt_pehe,
    )
