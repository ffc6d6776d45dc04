"""Objective assembly and the optimization loop.

One training step builds the outcome-calibrated cost on the current batch,
solves the relaxed transport problem against a frozen copy of that cost,
evaluates factual risk plus the weighted transport discrepancy, and applies
one Adam update. The loop runs stratified mini-batches with periodic
validation and patience-based early stopping.
"""

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, StratificationError
from .geometry import PairedOutcomes, pairwise_sqeuclidean, pfor_cost_matrix
from .metrics import auuc, factual_rmse
from .network import (
    FactualAndTransportLoss,
    grad_eval,
    init_params,
    predict_cate,
    tarnet_forward,
)
from .ot import SolverConfig, unbalanced_sinkhorn_plan
from .validation import as_float_array, as_matrix

SELECTION_METRICS = ("auuc", "factual_rmse")


@dataclass(frozen=True)
class TrainConfig:
    """Objective strengths, solver knobs, and the optimization protocol.

    ``lambda_`` weights the transport discrepancy; ``kappa=inf`` keeps hard
    marginals (the balanced configuration) and ``gamma=0`` disables outcome
    calibration, so the estimator family degenerates by configuration alone.
    """

    lambda_: float = 1.0
    epsilon: float = 0.5
    kappa: float = 5.0
    gamma: float = 1.0
    batch_size: int = 32
    max_epochs: int = 400
    patience: int = 30
    validate_every: int = 2
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    selection_metric: str = "auuc"
    hidden_dim: int = 60
    activation: str = "elu"
    solver_max_iters: int = 1000
    solver_tol: float = 1e-6
    standardize_outcomes: bool = True

    def __post_init__(self):
        if self.lambda_ < 0 or self.gamma < 0:
            raise ConfigError("lambda and gamma must be nonnegative")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0 (inf for balanced), got {self.kappa}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.validate_every < 1:
            raise ConfigError(f"validate_every must be >= 1, got {self.validate_every}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be nonnegative")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(
                f"selection_metric must be one of {SELECTION_METRICS}, "
                f"got {self.selection_metric!r}"
            )

    def solver_config(self):
        return SolverConfig(
            epsilon=self.epsilon,
            kappa=self.kappa,
            max_iters=self.solver_max_iters,
            tol=self.solver_tol,
        )

    def to_json_dict(self):
        out = {}
        for spec in fields(self):
            key = "lambda" if spec.name == "lambda_" else spec.name
            value = getattr(self, spec.name)
            if isinstance(value, float) and math.isinf(value):
                value = "inf"
            out[key] = value
        return out

    @classmethod
    def from_json_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("train config must be a JSON object")
        names = {("lambda" if f.name == "lambda_" else f.name): f.name for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in names:
                raise ConfigError(f"unknown train config field {key!r}")
            if isinstance(value, str) and value.lower() in ("inf", "infinity"):
                value = math.inf
            kwargs[names[key]] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


def estimator_label(config):
    """Name of the configuration-lattice cell this config occupies."""
    if config.lambda_ == 0:
        return "tarnet"
    balanced = math.isinf(config.kappa)
    if config.gamma == 0:
        return "cfr_wass" if balanced else "escfr_relaxed_only"
    return "escfr_calibrated_only" if balanced else "escfr"


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchIndices:
    indices: np.ndarray
    n_treated: int
    ot_eligible: bool


def make_batches(dataset, batch_size, seed, epoch):
    """Stratified index batches for one epoch.

    Every unit appears exactly once; each batch's treated fraction stays
    within one unit of the global fraction. Batches with fewer than two
    units in either group are flagged so the transport term is skipped.
    """
    treated = np.flatnonzero(dataset.t == 1)
    untreated = np.flatnonzero(dataset.t == 0)
    if len(treated) == 0 or len(untreated) == 0:
        raise StratificationError("stratified batching needs both treatment groups")
    rng = np.random.default_rng([seed, epoch])
    treated = rng.permutation(treated)
    untreated = rng.permutation(untreated)

    n = len(dataset.t)
    n_batches = max(1, math.ceil(n / batch_size))
    base, extra = divmod(n, n_batches)
    sizes = np.full(n_batches, base, dtype=np.int64)
    sizes[:extra] += 1

    quotas = sizes * (len(treated) / n)
    treated_counts = np.floor(quotas).astype(np.int64)
    shortfall = len(treated) - int(treated_counts.sum())
    if shortfall:
        order = np.argsort(-(quotas - treated_counts), kind="stable")
        treated_counts[order[:shortfall]] += 1

    batches = []
    t_offset = u_offset = 0
    for size, n_treated_k in zip(sizes, treated_counts):
        n_untreated_k = int(size - n_treated_k)
        chunk = np.concatenate(
            [
                treated[t_offset : t_offset + n_treated_k],
                untreated[u_offset : u_offset + n_untreated_k],
            ]
        )
        t_offset += n_treated_k
        u_offset += n_untreated_k
        batches.append(
            BatchIndices(
                indices=chunk,
                n_treated=int(n_treated_k),
                ot_eligible=n_treated_k >= 2 and n_untreated_k >= 2,
            )
        )
    return batches


@dataclass(frozen=True)
class Batch:
    """Arrays for one mini-batch, already split by treatment group."""

    x_treated: np.ndarray
    y_treated: np.ndarray
    x_untreated: np.ndarray
    y_untreated: np.ndarray
    ot_eligible: bool = True

    @classmethod
    def from_arrays(cls, x, t, y, batch_indices):
        idx = batch_indices.indices
        mask = t[idx] == 1
        return cls(
            x_treated=x[idx[mask]],
            y_treated=y[idx[mask]],
            x_untreated=x[idx[~mask]],
            y_untreated=y[idx[~mask]],
            ot_eligible=batch_indices.ot_eligible,
        )


# ---------------------------------------------------------------------------
# Objective and one optimizer step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveValue:
    loss_factual: float
    loss_discrepancy: float
    total: float
    plan: object = None


def _loss_spec_for_batch(params, batch, config):
    """Build the frozen-plan loss description for one batch.

    The transport plan is solved against a detached copy of the calibrated
    cost: the solver sees plain numbers, so no gradient ever flows through
    its iterations.
    """
    use_transport = config.lambda_ > 0 and batch.ot_eligible
    if not use_transport:
        return (
            FactualAndTransportLoss(
                batch.x_treated, batch.y_treated, batch.x_untreated, batch.y_untreated
            ),
            None,
        )
    repr_treated, yhat0_t, _ = tarnet_forward(params, batch.x_treated)
    repr_untreated, _, yhat1_u = tarnet_forward(params, batch.x_untreated)
    repr_cost = pairwise_sqeuclidean(repr_treated, repr_untreated)
    calibrated = pfor_cost_matrix(
        repr_cost,
        PairedOutcomes(batch.y_treated, batch.y_untreated, yhat0_t, yhat1_u),
        config.gamma,
    )
    n, m = calibrated.shape
    plan = unbalanced_sinkhorn_plan(
        np.full(n, 1.0 / n), np.full(m, 1.0 / m), calibrated, config.solver_config()
    )
    spec = FactualAndTransportLoss(
        batch.x_treated,
        batch.y_treated,
        batch.x_untreated,
        batch.y_untreated,
        alignment=config.lambda_,
        calibration=config.gamma,
        plan=plan.coupling,
    )
    return spec, plan


def escfr_objective(params, batch, config):
    """Factual risk, transport discrepancy, and their weighted total."""
    spec, plan = _loss_spec_for_batch(params, batch, config)
    losses = spec.value(params)
    return ObjectiveValue(losses.factual, losses.discrepancy, losses.total, plan)


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_params):
        return cls(0, np.zeros(n_params), np.zeros(n_params))


def train_step(params, opt_state, batch, config):
    """One Adam step on the batch objective.

    Weight decay is folded into the gradient before the moment updates
    (classic L2 regularization, not decoupled decay).
    """
    spec, _ = _loss_spec_for_batch(params, batch, config)
    bundle = grad_eval(params, spec)
    theta = params.flatten()
    grad = bundle.flatten() + config.weight_decay * theta

    step = opt_state.step + 1
    m = config.adam_beta1 * opt_state.m + (1.0 - config.adam_beta1) * grad
    v = config.adam_beta2 * opt_state.v + (1.0 - config.adam_beta2) * grad * grad
    m_hat = m / (1.0 - config.adam_beta1**step)
    v_hat = v / (1.0 - config.adam_beta2**step)
    theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params.with_flat(theta), AdamState(step, m, v), bundle.losses


# ---------------------------------------------------------------------------
# Full fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_factual: float
    loss_discrepancy: float
    val_metric: float = None

    def to_json_dict(self):
        return {
            "epoch": self.epoch,
            "loss_factual": self.loss_factual,
            "loss_discrepancy": self.loss_discrepancy,
            "val_metric": self.val_metric,
        }


@dataclass
class TrainReport:
    """Trajectory of one run; the canonical JSON form excludes wall-clock
    timings so identical runs serialize byte-identically."""

    estimator: str
    selection_metric: str
    epochs: list
    best_epoch: int
    best_metric: float
    stopped_epoch: int
    discrepancy_active: bool
    checkpoint_path: str = None
    epoch_seconds: list = field(default_factory=list)

    def to_json_dict(self, include_timings=False):
        out = {
            "estimator": self.estimator,
            "selection_metric": self.selection_metric,
            "best_epoch": self.best_epoch,
            "best_metric": self.best_metric,
            "stopped_epoch": self.stopped_epoch,
            "discrepancy_active": self.discrepancy_active,
            "checkpoint_path": self.checkpoint_path,
            "epochs": [record.to_json_dict() for record in self.epochs],
        }
        if include_timings:
            out["epoch_seconds"] = list(self.epoch_seconds)
        return out


@dataclass(frozen=True)
class FitResult:
    params: object
    y_mean: float
    y_std: float
    report: TrainReport

    def predict_cate(self, x):
        return predict_cate(self.params, x, outcome_scale=self.y_std)

    def predict_outcomes(self, x):
        """Potential-outcome predictions in original outcome units."""
        _, yhat0, yhat1 = tarnet_forward(self.params, x)
        return (
            yhat0 * self.y_std + self.y_mean,
            yhat1 * self.y_std + self.y_mean,
        )

    def predict_factual(self, x, t):
        yhat0, yhat1 = self.predict_outcomes(x)
        return np.where(np.asarray(t) == 1, yhat1, yhat0)


def _validation_score(result, valid, metric):
    """Higher is better for every metric (errors enter negated)."""
    if metric == "auuc":
        return auuc(result.predict_cate(valid.x), valid.t, valid.y)
    return -factual_rmse(result.predict_factual(valid.x, valid.t), valid.y)


def fit(train, valid, config):
    """Train up to ``max_epochs``, validating every ``validate_every`` epochs
    and keeping the checkpoint with the best validation score; stop after
    ``patience`` consecutive validations without improvement."""
    x = as_matrix(train.x, "train.x")
    y = as_float_array(train.y, "train.y", ndim=1)
    if config.standardize_outcomes:
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if y_std < 1e-12:
            y_std = 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    y_scaled = (y - y_mean) / y_std

    params = init_params(
        x.shape[1], config.seed, hidden_dim=config.hidden_dim, activation=config.activation
    )
    opt_state = AdamState.zeros(params.n_params)

    records = []
    timings = []
    best_params = params
    best_score = None
    best_epoch = 0
    stale_validations = 0
    discrepancy_active = False
    stopped_epoch = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        batch_specs = make_batches(train, config.batch_size, config.seed, epoch)
        factual_sum = discrepancy_sum = 0.0
        for batch_indices in batch_specs:
            batch = Batch.from_arrays(x, train.t, y_scaled, batch_indices)
            params, opt_state, losses = train_step(params, opt_state, batch, config)
            factual_sum += losses.factual
            discrepancy_sum += losses.discrepancy
            if config.lambda_ > 0 and batch.ot_eligible:
                discrepancy_active = True

        val_metric = None
        stop = False
        if epoch % config.validate_every == 0:
            snapshot = FitResult(params, y_mean, y_std, report=None)
            val_metric = _validation_score(snapshot, valid, config.selection_metric)
            if best_score is None or val_metric > best_score:
                best_score = val_metric
                best_epoch = epoch
                best_params = params.copy()
                stale_validations = 0
            else:
                stale_validations += 1
                if stale_validations >= config.patience:
                    stop = True

        records.append(
            EpochRecord(
                epoch=epoch,
                loss_factual=factual_sum / len(batch_specs),
                loss_discrepancy=discrepancy_sum / len(batch_specs),
                val_metric=val_metric,
            )
        )
        timings.append(time.perf_counter() - started)
        stopped_epoch = epoch
        if stop:
            break

    if best_score is None:
        # No validation ever ran (max_epochs < validate_every); keep the last state.
        best_params = params
        best_epoch = stopped_epoch

    report = TrainReport(
        estimator=estimator_label(config),
        selection_metric=config.selection_metric,
        epochs=records,
        best_epoch=best_epoch,
        best_metric=best_score,
        stopped_epoch=stopped_epoch,
        discrepancy_active=discrepancy_active,
        epoch_seconds=timings,
    )
    return FitResult(best_params, y_mean, y_std, report)
