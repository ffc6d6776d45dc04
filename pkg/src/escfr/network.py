"""Two-headed outcome network with hand-written reverse accumulation.

A shared representation stack feeds two scalar outcome heads (one per
treatment arm). Everything runs in float64 numpy; gradients are produced by
reverse accumulation through the affine layers, elementwise nonlinearities,
squared errors, and the transport inner product with the plan held fixed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LossSpecError, NumericalFailureError, ShapeError
from .geometry import PairedOutcomes, pairwise_sqeuclidean, pfor_cost_matrix
from .validation import as_float_array, as_matrix, check_same_length


def _elu(x):
    return np.where(x > 0, x, np.expm1(x))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(x))


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


_ACTIVATIONS = {"elu": (_elu, _elu_grad), "relu": (_relu, _relu_grad)}


def _check_layer_chain(layers, name, expect_in=None):
    prev = expect_in
    for idx, (w, b) in enumerate(layers):
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ShapeError(f"{name} layer {idx} has inconsistent shapes {w.shape}, {b.shape}")
        if prev is not None and w.shape[0] != prev:
            raise ShapeError(
                f"{name} layer {idx} expects input dim {prev}, weight is {w.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ShapeError(f"{name} layer {idx} contains non-finite values")
        prev = w.shape[1]
    return prev


@dataclass(frozen=True)
class TarnetParams:
    """Weights/biases of the representation stack and the two outcome heads."""

    psi_layers: list
    head0_layers: list
    head1_layers: list
    activation: str = "elu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for name in ("psi_layers", "head0_layers", "head1_layers"):
            layers = [
                (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                for w, b in getattr(self, name)
            ]
            object.__setattr__(self, name, layers)
        repr_dim = _check_layer_chain(self.psi_layers, "psi")
        for name, layers in (("head0", self.head0_layers), ("head1", self.head1_layers)):
            out = _check_layer_chain(layers, name, expect_in=repr_dim)
            if out != 1:
                raise ShapeError(f"{name} must end in a scalar output, got width {out}")

    @property
    def input_dim(self):
        return self.psi_layers[0][0].shape[0]

    @property
    def repr_dim(self):
        return self.psi_layers[-1][0].shape[1]

    def _stacks(self):
        return (self.psi_layers, self.head0_layers, self.head1_layers)

    @property
    def n_params(self):
        return sum(w.size + b.size for stack in self._stacks() for w, b in stack)

    def flatten(self):
        """All parameters as one vector (psi, head0, head1; W before b)."""
        parts = [arr.ravel() for stack in self._stacks() for w, b in stack for arr in (w, b)]
        return np.concatenate(parts)

    def with_flat(self, flat):
        """New parameter set with the same shapes filled from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} values, got shape {flat.shape}")
        stacks = []
        offset = 0
        for stack in self._stacks():
            rebuilt = []
            for w, b in stack:
                new_w = flat[offset : offset + w.size].reshape(w.shape)
                offset += w.size
                new_b = flat[offset : offset + b.size].reshape(b.shape)
                offset += b.size
                rebuilt.append((new_w, new_b))
            stacks.append(rebuilt)
        return TarnetParams(*stacks, activation=self.activation)

    def copy(self):
        return self.with_flat(self.flatten())


def init_params(input_dim, seed, hidden_dim=60, activation="elu"):
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    if hidden_dim < 1:
        raise ConfigError(f"hidden_dim must be >= 1, got {hidden_dim}")
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)

    psi = [layer(input_dim, hidden_dim), layer(hidden_dim, hidden_dim)]
    head0 = [layer(hidden_dim, hidden_dim), layer(hidden_dim, hidden_dim), layer(hidden_dim, 1)]
    head1 = [layer(hidden_dim, hidden_dim), layer(hidden_dim, hidden_dim), layer(hidden_dim, 1)]
    return TarnetParams(psi, head0, head1, activation=activation)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class _StackCache:
    inputs: list
    pre: list
    out: np.ndarray


def _forward_stack(layers, x, act, n_activated):
    inputs, pre = [], []
    h = x
    for idx, (w, b) in enumerate(layers):
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        h = act(a) if idx < n_activated else a
    return _StackCache(inputs, pre, h)


def _backward_stack(layers, cache, d_out, act_grad, n_activated):
    grads = [None] * len(layers)
    d_h = d_out
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        d_a = d_h * act_grad(cache.pre[idx]) if idx < n_activated else d_h
        grads[idx] = (cache.inputs[idx].T @ d_a, d_a.sum(axis=0))
        d_h = d_a @ w.T
    return grads, d_h


@dataclass
class _ModelCache:
    psi: _StackCache
    head0: _StackCache
    head1: _StackCache

    @property
    def repr(self):
        return self.psi.out

    @property
    def yhat0(self):
        return self.head0.out[:, 0]

    @property
    def yhat1(self):
        return self.head1.out[:, 0]


def _forward_model(params, x):
    act, _ = _ACTIVATIONS[params.activation]
    psi = _forward_stack(params.psi_layers, x, act, len(params.psi_layers))
    head0 = _forward_stack(params.head0_layers, psi.out, act, len(params.head0_layers) - 1)
    head1 = _forward_stack(params.head1_layers, psi.out, act, len(params.head1_layers) - 1)
    return _ModelCache(psi, head0, head1)


def _backward_model(params, cache, d_repr, d_yhat0, d_yhat1):
    _, act_grad = _ACTIVATIONS[params.activation]
    grads0, d_r0 = _backward_stack(
        params.head0_layers, cache.head0, d_yhat0[:, None], act_grad,
        len(params.head0_layers) - 1,
    )
    grads1, d_r1 = _backward_stack(
        params.head1_layers, cache.head1, d_yhat1[:, None], act_grad,
        len(params.head1_layers) - 1,
    )
    total_d_repr = d_repr + d_r0 + d_r1
    grads_psi, _ = _backward_stack(
        params.psi_layers, cache.psi, total_d_repr, act_grad, len(params.psi_layers)
    )
    return grads_psi, grads0, grads1


def _zero_grads(layers):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]


def _add_grads(acc, extra):
    return [(aw + ew, ab + eb) for (aw, ab), (ew, eb) in zip(acc, extra)]


def _check_input(params, x):
    x = as_matrix(x, "X")
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"X has {x.shape[1]} columns but the model expects {params.input_dim}"
        )
    return x


def tarnet_forward(params, x):
    """Run both heads on a batch; returns (representations, yhat0, yhat1)."""
    x = _check_input(params, x)
    cache = _forward_model(params, x)
    return cache.repr, cache.yhat0, cache.yhat1


def predict_cate(params, x, outcome_scale=1.0):
    """Treated-minus-untreated head predictions, rescaled to outcome units."""
    _, yhat0, yhat1 = tarnet_forward(params, x)
    return (yhat1 - yhat0) * outcome_scale


# ---------------------------------------------------------------------------
# Loss descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossBreakdown:
    factual: float
    discrepancy: float
    total: float


@dataclass(frozen=True)
class GradientBundle:
    """Per-parameter gradients (same layout as the parameters) plus losses."""

    psi_layers: list
    head0_layers: list
    head1_layers: list
    losses: LossBreakdown

    def flatten(self):
        parts = [
            arr.ravel()
            for stack in (self.psi_layers, self.head0_layers, self.head1_layers)
            for w, b in stack
            for arr in (w, b)
        ]
        return np.concatenate(parts)


@dataclass(frozen=True)
class FactualAndTransportLoss:
    """Closed description of the training objective on one batch.

    Factual squared error per group plus, when ``alignment`` is positive,
    ``alignment * <D, plan>`` where D is the outcome-calibrated cost built
    from the live network outputs and ``plan`` is a frozen coupling. The
    plan is never differentiated through; gradients reach the parameters
    only via the cost matrix.
    """

    x_treated: np.ndarray
    y_treated: np.ndarray
    x_untreated: np.ndarray
    y_untreated: np.ndarray
    alignment: float = 0.0
    calibration: float = 0.0
    plan: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "x_treated", as_matrix(self.x_treated, "x_treated"))
        object.__setattr__(self, "x_untreated", as_matrix(self.x_untreated, "x_untreated"))
        object.__setattr__(self, "y_treated", as_float_array(self.y_treated, "y_treated", ndim=1))
        object.__setattr__(
            self, "y_untreated", as_float_array(self.y_untreated, "y_untreated", ndim=1)
        )
        check_same_length("x_treated", self.x_treated, "y_treated", self.y_treated)
        check_same_length("x_untreated", self.x_untreated, "y_untreated", self.y_untreated)
        if len(self.y_treated) == 0 or len(self.y_untreated) == 0:
            raise ShapeError("both groups need at least one unit")
        if self.alignment < 0 or self.calibration < 0:
            raise ConfigError("alignment and calibration strengths must be nonnegative")
        if self.alignment > 0:
            if self.plan is None:
                raise LossSpecError("a frozen transport plan is required when alignment > 0")
            plan = as_float_array(self.plan, "plan", ndim=2)
            if plan.shape != (len(self.y_treated), len(self.y_untreated)):
                raise ShapeError(
                    f"plan shape {plan.shape} does not match group sizes "
                    f"({len(self.y_treated)}, {len(self.y_untreated)})"
                )
            object.__setattr__(self, "plan", plan)

    def _evaluate(self, params, want_grads):
        cache_t = _forward_model(params, _check_input(params, self.x_treated))
        cache_u = _forward_model(params, _check_input(params, self.x_untreated))
        n, m = len(self.y_treated), len(self.y_untreated)

        res_t = cache_t.yhat1 - self.y_treated
        res_u = cache_u.yhat0 - self.y_untreated
        factual = float(np.mean(res_t**2) + np.mean(res_u**2))

        d_yhat1_t = 2.0 * res_t / n
        d_yhat0_u = 2.0 * res_u / m
        d_yhat0_t = np.zeros(n)
        d_yhat1_u = np.zeros(m)
        d_repr_t = np.zeros_like(cache_t.repr)
        d_repr_u = np.zeros_like(cache_u.repr)

        discrepancy = 0.0
        if self.alignment > 0:
            repr_cost = pairwise_sqeuclidean(cache_t.repr, cache_u.repr)
            calibrated = pfor_cost_matrix(
                repr_cost,
                PairedOutcomes(
                    self.y_treated, self.y_untreated, cache_t.yhat0, cache_u.yhat1
                ),
                self.calibration,
            )
            discrepancy = float(np.sum(self.plan * calibrated))
            if want_grads:
                lam = self.alignment
                row_w = self.plan.sum(axis=1)
                col_w = self.plan.sum(axis=0)
                d_repr_t += 2.0 * lam * (row_w[:, None] * cache_t.repr - self.plan @ cache_u.repr)
                d_repr_u += 2.0 * lam * (col_w[:, None] * cache_u.repr - self.plan.T @ cache_t.repr)
                if self.calibration > 0:
                    gam = self.calibration
                    d_yhat0_t += 2.0 * lam * gam * (row_w * cache_t.yhat0 - self.plan @ self.y_untreated)
                    d_yhat1_u += 2.0 * lam * gam * (col_w * cache_u.yhat1 - self.plan.T @ self.y_treated)

        losses = LossBreakdown(factual, discrepancy, factual + self.alignment * discrepancy)
        if not want_grads:
            return losses, None

        grads_psi_t, grads0_t, grads1_t = _backward_model(
            params, cache_t, d_repr_t, d_yhat0_t, d_yhat1_t
        )
        grads_psi_u, grads0_u, grads1_u = _backward_model(
            params, cache_u, d_repr_u, d_yhat0_u, d_yhat1_u
        )
        bundle = GradientBundle(
            _add_grads(grads_psi_t, grads_psi_u),
            _add_grads(grads0_t, grads0_u),
            _add_grads(grads1_t, grads1_u),
            losses,
        )
        return losses, bundle

    def value(self, params):
        losses, _ = self._evaluate(params, want_grads=False)
        return losses

    def gradients(self, params):
        _, bundle = self._evaluate(params, want_grads=True)
        return bundle


@dataclass(frozen=True)
class ConstantLoss:
    """Loss that ignores the parameters entirely."""

    constant: float = 0.0

    def value(self, params):
        return LossBreakdown(self.constant, 0.0, self.constant)

    def gradients(self, params):
        return GradientBundle(
            _zero_grads(params.psi_layers),
            _zero_grads(params.head0_layers),
            _zero_grads(params.head1_layers),
            self.value(params),
        )


@dataclass(frozen=True)
class SquaredWeightLoss:
    """Sum of squares of a single weight matrix (gradient 2W)."""

    stack: str = "psi"
    layer: int = 0

    def _select(self, params):
        stacks = {
            "psi": params.psi_layers,
            "head0": params.head0_layers,
            "head1": params.head1_layers,
        }
        if self.stack not in stacks:
            raise LossSpecError(f"unknown stack {self.stack!r}")
        return stacks[self.stack][self.layer][0]

    def value(self, params):
        w = self._select(params)
        total = float(np.sum(w**2))
        return LossBreakdown(total, 0.0, total)

    def gradients(self, params):
        grads = {
            "psi": _zero_grads(params.psi_layers),
            "head0": _zero_grads(params.head0_layers),
            "head1": _zero_grads(params.head1_layers),
        }
        w = self._select(params)
        gw, gb = grads[self.stack][self.layer]
        grads[self.stack][self.layer] = (gw + 2.0 * w, gb)
        return GradientBundle(grads["psi"], grads["head0"], grads["head1"], self.value(params))


def grad_eval(params, loss_spec):
    """Exact gradients of a loss description with respect to every parameter."""
    if not (hasattr(loss_spec, "value") and hasattr(loss_spec, "gradients")):
        raise LossSpecError(
            f"{type(loss_spec).__name__} does not describe a supported loss"
        )
    bundle = loss_spec.gradients(params)
    for stack in (bundle.psi_layers, bundle.head0_layers, bundle.head1_layers):
        for w, b in stack:
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalFailureError("gradient evaluation produced non-finite values")
    return bundle


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_sampled: int


def gradcheck(params, loss_spec, n_samples=200, h=1e-5, seed=0):
    """Compare analytic gradients to central finite differences.

    Samples parameter coordinates without replacement (deterministic per
    seed). Relative errors are floored at scale 1e-6 so coordinates whose
    derivative is numerically zero do not dominate the report.
    """
    if not h > 0:
        raise ConfigError(f"h must be > 0, got {h}")
    analytic = grad_eval(params, loss_spec).flatten()
    flat = params.flatten()
    rng = np.random.default_rng(seed)
    n_sampled = min(n_samples, flat.size)
    indices = rng.choice(flat.size, size=n_sampled, replace=False)

    rel_errors = np.empty(n_sampled)
    for pos, idx in enumerate(indices):
        bumped = flat.copy()
        bumped[idx] = flat[idx] + h
        plus = loss_spec.value(params.with_flat(bumped)).total
        bumped[idx] = flat[idx] - h
        minus = loss_spec.value(params.with_flat(bumped)).total
        fd = (plus - minus) / (2.0 * h)
        denom = max(abs(fd), abs(analytic[idx]), 1e-6)
        rel_errors[pos] = abs(fd - analytic[idx]) / denom
    return GradcheckReport(float(rel_errors.max()), float(rel_errors.mean()), n_sampled)
