import json
import math

import numpy as np
import pytest

from escfr.data import CausalDataset, GenSpec, generate_synthetic, split_dataset
from escfr.errors import ConfigError, StratificationError
from escfr.network import init_params
from escfr.training import (
    AdamState,
    Batch,
    TrainConfig,
    escfr_objective,
    estimator_label,
    fit,
    make_batches,
    train_step,
)


def tiny_dataset(n=60, d=3, seed=0, bias=1.0):
    return generate_synthetic(GenSpec(n=n, d=d, bias_strength=bias, noise_std=0.5, seed=seed))


def quick_config(**overrides):
    base = dict(
        lambda_=1.0,
        epsilon=0.5,
        kappa=5.0,
        gamma=1.0,
        batch_size=16,
        max_epochs=6,
        patience=2,
        validate_every=2,
        hidden_dim=8,
        solver_max_iters=300,
        solver_tol=1e-6,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults_match_protocol(self):
        config = TrainConfig()
        assert config.batch_size == 32
        assert config.max_epochs == 400
        assert config.patience == 30
        assert config.validate_every == 2
        assert config.learning_rate == 1e-3
        assert config.weight_decay == 1e-4
        assert config.selection_metric == "auuc"
        assert config.hidden_dim == 60

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lambda_=-0.1)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1)
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(validate_every=0)
        with pytest.raises(ConfigError):
            TrainConfig(kappa=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(selection_metric="pehe")

    def test_json_roundtrip_with_infinite_kappa(self):
        config = TrainConfig(kappa=math.inf, gamma=0.0)
        payload = config.to_json_dict()
        assert payload["kappa"] == "inf"
        assert payload["lambda"] == 1.0
        rebuilt = TrainConfig.from_json_dict(json.loads(json.dumps(payload)))
        assert rebuilt == config

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_json_dict({"lambda": 1.0, "momentum": 0.9})

    def test_lattice_labels(self):
        assert estimator_label(TrainConfig(lambda_=0.0)) == "tarnet"
        assert estimator_label(TrainConfig(gamma=0.0, kappa=math.inf)) == "cfr_wass"
        assert estimator_label(TrainConfig(gamma=1.0, kappa=5.0)) == "escfr"
        assert estimator_label(TrainConfig(gamma=0.0, kappa=5.0)) == "escfr_relaxed_only"
        assert estimator_label(TrainConfig(gamma=1.0, kappa=math.inf)) == "escfr_calibrated_only"


class TestMakeBatches:
    def test_exact_stratification(self):
        x = np.zeros((64, 1))
        t = np.array([1] * 32 + [0] * 32)
        dataset = CausalDataset(x, t, np.zeros(64))
        batches = make_batches(dataset, 32, seed=0, epoch=0)
        assert len(batches) == 2
        for batch in batches:
            assert len(batch.indices) == 32
            assert batch.n_treated == 16
            assert batch.ot_eligible

    def test_single_treated_unit_flags_skip(self):
        x = np.zeros((10, 1))
        t = np.array([1] + [0] * 9)
        dataset = CausalDataset(x, t, np.zeros(10))
        (batch,) = make_batches(dataset, 10, seed=0, epoch=0)
        assert not batch.ot_eligible
        assert batch.n_treated == 1

    def test_determinism_per_seed_and_epoch(self):
        dataset = tiny_dataset(n=50)
        first = make_batches(dataset, 16, seed=4, epoch=2)
        second = make_batches(dataset, 16, seed=4, epoch=2)
        for lhs, rhs in zip(first, second):
            assert np.array_equal(lhs.indices, rhs.indices)
        shuffled = make_batches(dataset, 16, seed=4, epoch=3)
        assert any(
            not np.array_equal(lhs.indices, rhs.indices) for lhs, rhs in zip(first, shuffled)
        )

    def test_every_unit_exactly_once(self):
        dataset = tiny_dataset(n=77)
        batches = make_batches(dataset, 16, seed=1, epoch=5)
        all_indices = np.concatenate([batch.indices for batch in batches])
        assert sorted(all_indices.tolist()) == list(range(77))

    def test_fraction_within_one_unit(self):
        dataset = tiny_dataset(n=90, bias=2.0)
        global_frac = dataset.t.mean()
        for batch in make_batches(dataset, 16, seed=2, epoch=1):
            expected = global_frac * len(batch.indices)
            assert abs(batch.n_treated - expected) <= 1.0 + 1e-9

    def test_single_group_rejected(self):
        x = np.zeros((6, 1))
        data = CausalDataset(x, np.array([0, 1] * 3), np.zeros(6))
        object.__setattr__(data, "t", np.ones(6, dtype=np.int64))
        with pytest.raises(StratificationError):
            make_batches(data, 4, seed=0, epoch=0)


def batch_from(dataset, indices, ot_eligible=True):
    mask = dataset.t[indices] == 1
    return Batch(
        x_treated=dataset.x[indices[mask]],
        y_treated=dataset.y[indices[mask]],
        x_untreated=dataset.x[indices[~mask]],
        y_untreated=dataset.y[indices[~mask]],
        ot_eligible=ot_eligible,
    )


class TestEscfrObjective:
    def test_lambda_zero_skips_plan(self):
        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=0, hidden_dim=8)
        batch = batch_from(dataset, np.arange(20))
        value = escfr_objective(params, batch, quick_config(lambda_=0.0))
        assert value.plan is None
        assert value.loss_discrepancy == 0.0
        assert value.total == value.loss_factual

    def test_ot_skip_flag_drops_discrepancy(self):
        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=0, hidden_dim=8)
        batch = batch_from(dataset, np.arange(20), ot_eligible=False)
        value = escfr_objective(params, batch, quick_config())
        assert value.plan is None
        assert value.loss_discrepancy == 0.0

    def test_loss_decomposition_exact(self):
        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=1, hidden_dim=8)
        batch = batch_from(dataset, np.arange(24))
        config = quick_config(lambda_=0.7)
        value = escfr_objective(params, batch, config)
        assert value.total - config.lambda_ * value.loss_discrepancy - value.loss_factual == 0.0

    def test_balanced_sentinel_matches_balanced_discrepancy(self):
        # gamma=0 with the balanced sentinel is the plain representation-space
        # transport discrepancy between the group's uniform measures.
        from escfr.geometry import pairwise_sqeuclidean
        from escfr.network import tarnet_forward
        from escfr.ot import SolverConfig, sinkhorn_plan

        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=2, hidden_dim=8)
        batch = batch_from(dataset, np.arange(30))
        config = quick_config(gamma=0.0, kappa=math.inf)
        value = escfr_objective(params, batch, config)

        repr_t, _, _ = tarnet_forward(params, batch.x_treated)
        repr_u, _, _ = tarnet_forward(params, batch.x_untreated)
        cost = pairwise_sqeuclidean(repr_t, repr_u)
        n, m = cost.shape
        plan = sinkhorn_plan(
            np.full(n, 1 / n), np.full(m, 1 / m), cost,
            SolverConfig(epsilon=config.epsilon, max_iters=300, tol=1e-6),
        )
        assert value.loss_discrepancy == pytest.approx(plan.cost, rel=1e-12)

    def test_perfect_factual_predictions(self):
        # Zero-weight network predicts 0; outcomes equal to 0 give zero
        # factual loss, so the total reduces to the discrepancy term.
        x = np.random.default_rng(0).normal(size=(12, 2))
        t = np.array([1, 0] * 6)
        dataset = CausalDataset(x, t, np.zeros(12))
        params = init_params(2, seed=0, hidden_dim=4)
        params = params.with_flat(np.zeros(params.n_params))
        batch = batch_from(dataset, np.arange(12))
        config = quick_config(lambda_=0.9, gamma=0.5)
        value = escfr_objective(params, batch, config)
        assert value.loss_factual == 0.0
        assert value.total == config.lambda_ * value.loss_discrepancy


class TestTrainStep:
    def test_zero_gradient_keeps_params(self):
        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=3, hidden_dim=8)
        batch = batch_from(dataset, np.arange(16))
        config = quick_config(learning_rate=0.0, weight_decay=0.0)
        new_params, state, _ = train_step(params, AdamState.zeros(params.n_params), batch, config)
        assert np.array_equal(new_params.flatten(), params.flatten())
        assert state.step == 1

    def test_first_adam_step_magnitude(self):
        # One-parameter quadratic (theta - 1)^2 via a hand-built model:
        # the first Adam step moves theta by ~lr regardless of gradient scale.
        lr = 1e-3
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        grad = -2.0  # d/dtheta (theta - 1)^2 at theta = 0
        m = (1 - beta1) * grad / (1 - beta1)
        v = (1 - beta2) * grad**2 / (1 - beta2)
        step = lr * m / (np.sqrt(v) + eps)
        assert step == pytest.approx(-lr, rel=1e-6)

    def test_step_decreases_factual_loss(self):
        dataset = tiny_dataset(n=40)
        params = init_params(dataset.n_features, seed=4, hidden_dim=8)
        batch = batch_from(dataset, np.arange(40))
        config = quick_config(lambda_=0.0, learning_rate=1e-2, weight_decay=0.0)
        state = AdamState.zeros(params.n_params)
        first = escfr_objective(params, batch, config).loss_factual
        for _ in range(20):
            params, state, _ = train_step(params, state, batch, config)
        last = escfr_objective(params, batch, config).loss_factual
        assert last < first

    def test_weight_decay_enters_gradient(self):
        dataset = tiny_dataset()
        params = init_params(dataset.n_features, seed=5, hidden_dim=8)
        batch = batch_from(dataset, np.arange(16))
        no_decay = quick_config(lambda_=0.0, weight_decay=0.0)
        with_decay = quick_config(lambda_=0.0, weight_decay=0.5)
        p1, _, _ = train_step(params, AdamState.zeros(params.n_params), batch, no_decay)
        p2, _, _ = train_step(params, AdamState.zeros(params.n_params), batch, with_decay)
        assert not np.array_equal(p1.flatten(), p2.flatten())


class TestFit:
    def split(self, n=120, seed=0, bias=1.0):
        dataset = generate_synthetic(
            GenSpec(n=n, d=3, bias_strength=bias, noise_std=0.5, seed=seed)
        )
        train, valid, _ = split_dataset(dataset, seed=seed)
        return train, valid

    def test_reproducible_reports(self):
        train, valid = self.split()
        config = quick_config()
        first = fit(train, valid, config)
        second = fit(train, valid, config)
        assert first.report.to_json_dict() == second.report.to_json_dict()
        assert np.array_equal(first.params.flatten(), second.params.flatten())

    def test_lambda_zero_is_tarnet_bit_for_bit(self):
        train, valid = self.split(seed=1)
        tarnet_like = fit(train, valid, quick_config(lambda_=0.0))
        again = fit(train, valid, quick_config(lambda_=0.0, gamma=0.0, kappa=math.inf))
        assert tarnet_like.report.estimator == "tarnet"
        assert np.array_equal(tarnet_like.params.flatten(), again.params.flatten())

    def test_early_stop_arithmetic(self):
        # patience=1, validating every 2 epochs: first validation at epoch 2
        # sets the best, the next (worse) validation at epoch 4 stops the run.
        train, valid = self.split(seed=2)
        config = quick_config(
            max_epochs=40, patience=1, validate_every=2, selection_metric="factual_rmse",
            learning_rate=0.0, weight_decay=0.0, lambda_=0.0,
        )
        # With lr=0 the model never changes, so every validation ties the
        # first one; ties do not count as improvements.
        result = fit(train, valid, config)
        assert result.report.best_epoch == 2
        assert result.report.stopped_epoch == 4

    def test_early_stop_within_patience_window(self):
        train, valid = self.split(seed=3)
        config = quick_config(max_epochs=30, patience=2, validate_every=2)
        result = fit(train, valid, config)
        report = result.report
        assert (
            report.stopped_epoch - report.best_epoch
            <= config.patience * config.validate_every
        )

    def test_best_metric_is_max_over_validations(self):
        train, valid = self.split(seed=4)
        result = fit(train, valid, quick_config(max_epochs=8))
        metrics = [r.val_metric for r in result.report.epochs if r.val_metric is not None]
        assert result.report.best_metric == max(metrics)

    def test_all_batches_skipped_marks_channel_inactive(self):
        x = np.random.default_rng(6).normal(size=(30, 2))
        t = np.zeros(30, dtype=int)
        t[0] = 1
        y = np.random.default_rng(7).normal(size=30)
        train = CausalDataset(x, t, y)
        config = quick_config(batch_size=30, max_epochs=2, hidden_dim=4)
        result = fit(train, train, config)
        assert not result.report.discrepancy_active
        assert all(r.loss_discrepancy == 0.0 for r in result.report.epochs)

    def test_timings_excluded_from_canonical_json(self):
        train, valid = self.split(seed=5)
        result = fit(train, valid, quick_config(max_epochs=2))
        payload = result.report.to_json_dict()
        assert "epoch_seconds" not in payload
        assert len(result.report.epoch_seconds) == result.report.stopped_epoch
