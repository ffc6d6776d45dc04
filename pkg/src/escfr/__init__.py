"""Counterfactual regression with relaxed optimal transport.

Discrete OT solvers (exact, entropic, KL-relaxed), an outcome-calibrated
transport cost, a two-headed effect estimator trained against factual risk
plus the transport discrepancy, evaluation metrics, baselines, a synthetic
generator, and a CLI for reproducible experiments.
"""

__version__ = "0.1.0"

from .baselines import knn_cate, knn_factual, ols_slearner
from .data import CausalDataset, GenSpec, generate_synthetic, load_dataset_csv, save_dataset_csv, split_dataset
from .estimators import EscfrRegressor, KnnCateRegressor, OlsSLearner
from .geometry import PairedOutcomes, pairwise_sqeuclidean, pfor_cost_matrix
from .metrics import MetricReport, auuc, evaluate_predictions, factual_rmse, pehe_metrics
from .network import (
    FactualAndTransportLoss,
    GradientBundle,
    TarnetParams,
    grad_eval,
    gradcheck,
    init_params,
    predict_cate,
    tarnet_forward,
)
from .ot import (
    BALANCED,
    DiscreteMeasure,
    SolverConfig,
    TransportPlan,
    exact_transport,
    plan_cost_and_marginals,
    sinkhorn_plan,
    unbalanced_sinkhorn_plan,
)
from .training import (
    Batch,
    TrainConfig,
    TrainReport,
    escfr_objective,
    estimator_label,
    fit,
    make_batches,
    train_step,
)

__all__ = [
    "BALANCED",
    "Batch",
    "CausalDataset",
    "DiscreteMeasure",
    "EscfrRegressor",
    "FactualAndTransportLoss",
    "GenSpec",
    "GradientBundle",
    "KnnCateRegressor",
    "MetricReport",
    "OlsSLearner",
    "PairedOutcomes",
    "SolverConfig",
    "TarnetParams",
    "TrainConfig",
    "TrainReport",
    "TransportPlan",
    "auuc",
    "escfr_objective",
    "estimator_label",
    "evaluate_predictions",
    "exact_transport",
    "factual_rmse",
    "fit",
    "generate_synthetic",
    "grad_eval",
    "gradcheck",
    "init_params",
    "knn_cate",
    "knn_factual",
    "load_dataset_csv",
    "make_batches",
    "ols_slearner",
    "pairwise_sqeuclidean",
    "pehe_metrics",
    "pfor_cost_matrix",
    "plan_cost_and_marginals",
    "predict_cate",
    "save_dataset_csv",
    "sinkhorn_plan",
    "split_dataset",
    "tarnet_forward",
    "train_step",
    "unbalanced_sinkhorn_plan",
]
