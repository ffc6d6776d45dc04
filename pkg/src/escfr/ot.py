"""Discrete optimal-transport solvers.

Three routes to a coupling between two weighted point sets:

* :func:`exact_transport` — transportation simplex, the exact small-instance
  reference solver.
* :func:`sinkhorn_plan` — entropic regularization with hard marginal
  constraints, iterated in the log domain.
* :func:`unbalanced_sinkhorn_plan` — KL-relaxed marginals (strength ``kappa``),
  solved by generalized Sinkhorn iterations, also in the log domain.

All solvers are pure functions: identical inputs and configuration produce
bit-identical plans.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleInputError, NumericalFailureError, ShapeError
from .validation import as_float_array

BALANCED = math.inf
"""Sentinel for ``kappa`` meaning hard (non-relaxed) marginal constraints."""

_EXACT_MAX_SIZE = 64
_MASS_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs shared by both Sinkhorn solvers.

    ``tol`` stops the balanced solver on L1 marginal violation and the
    unbalanced solver on max-norm change of the dual potentials.
    """

    epsilon: float
    kappa: float = BALANCED
    max_iters: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0 or the balanced sentinel, got {self.kappa}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")

    @property
    def balanced(self):
        return math.isinf(self.kappa)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set: ``points`` is (n, d), ``mass`` is (n,) nonnegative."""

    points: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        points = as_float_array(self.points, "points", ndim=2)
        mass = as_float_array(self.mass, "mass", ndim=1)
        if len(mass) != len(points):
            raise ShapeError(
                f"mass length {len(mass)} does not match {len(points)} points"
            )
        if np.any(mass < 0):
            raise InfeasibleInputError("mass entries must be nonnegative")
        if not np.any(mass > 0):
            raise InfeasibleInputError("at least one mass entry must be positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def uniform(cls, points):
        """Measure with mass 1/n on each of the n points."""
        points = as_float_array(np.asarray(points, dtype=np.float64), "points", ndim=2)
        n = len(points)
        if n == 0:
            raise InfeasibleInputError("a measure needs at least one point")
        return cls(points, np.full(n, 1.0 / n))

    def __len__(self):
        return len(self.mass)


@dataclass(frozen=True)
class TransportPlan:
    """A coupling together with recomputed summaries of what it achieves."""

    coupling: np.ndarray
    cost: float
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    iterations_used: int
    converged: bool


def plan_cost_and_marginals(coupling, cost_matrix):
    """Recompute ``<D, pi>`` and the row/column sums of a coupling."""
    coupling = as_float_array(coupling, "coupling", ndim=2)
    cost_matrix = as_float_array(cost_matrix, "cost_matrix", ndim=2)
    if coupling.shape != cost_matrix.shape:
        raise ShapeError(
            f"coupling shape {coupling.shape} does not match cost matrix {cost_matrix.shape}"
        )
    cost = float(np.sum(coupling * cost_matrix))
    return cost, coupling.sum(axis=1), coupling.sum(axis=0)


def _finish_plan(coupling, cost_matrix, iterations_used, converged):
    cost, row, col = plan_cost_and_marginals(coupling, cost_matrix)
    return TransportPlan(coupling, cost, row, col, iterations_used, converged)


def _check_masses_and_cost(a, b, cost_matrix):
    a = as_float_array(a, "a", ndim=1)
    b = as_float_array(b, "b", ndim=1)
    cost_matrix = as_float_array(cost_matrix, "cost_matrix", ndim=2)
    if cost_matrix.shape != (len(a), len(b)):
        raise ShapeError(
            f"cost matrix shape {cost_matrix.shape} does not match masses ({len(a)}, {len(b)})"
        )
    if np.any(a < 0) or np.any(b < 0):
        raise InfeasibleInputError("mass entries must be nonnegative")
    if not (np.any(a > 0) and np.any(b > 0)):
        raise InfeasibleInputError("each mass vector needs at least one positive entry")
    return a, b, cost_matrix


# ---------------------------------------------------------------------------
# Exact solver: transportation simplex
# ---------------------------------------------------------------------------


def _northwest_corner(a, b):
    """Initial basic feasible solution; returns exactly n+m-1 basic cells."""
    n, m = len(a), len(b)
    rem_a = a.copy()
    rem_b = b.copy()
    basis = []
    alloc = {}
    i = j = 0
    while True:
        q = min(rem_a[i], rem_b[j])
        basis.append((i, j))
        alloc[(i, j)] = q
        rem_a[i] -= q
        rem_b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        # min() returns one of its arguments, so one remainder is exactly 0.
        if rem_a[i] == 0.0 and i < n - 1:
            i += 1
        else:
            j += 1
    return basis, alloc


def _compute_duals(basis, cost_matrix, n, m):
    """Solve u_i + v_j = D_ij over the basis tree (u_0 anchored at 0)."""
    rows_to_cells = [[] for _ in range(n)]
    cols_to_cells = [[] for _ in range(m)]
    for cell in basis:
        rows_to_cells[cell[0]].append(cell)
        cols_to_cells[cell[1]].append(cell)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    stack = [("row", 0)]
    while stack:
        kind, idx = stack.pop()
        if kind == "row":
            for (i, j) in rows_to_cells[idx]:
                if np.isnan(v[j]):
                    v[j] = cost_matrix[i, j] - u[i]
                    stack.append(("col", j))
        else:
            for (i, j) in cols_to_cells[idx]:
                if np.isnan(u[i]):
                    u[i] = cost_matrix[i, j] - v[j]
                    stack.append(("row", i))
    return u, v


def _find_cycle(basis, entering):
    """Unique alternating cycle closed by ``entering`` in the basis tree.

    Returns the cycle as a list of cells starting with ``entering``; odd
    positions receive -theta during the pivot.
    """
    i0, j0 = entering
    rows_to_cells = {}
    cols_to_cells = {}
    for cell in basis:
        rows_to_cells.setdefault(cell[0], []).append(cell)
        cols_to_cells.setdefault(cell[1], []).append(cell)

    # Depth-first search for a path of basic cells from row i0 to column j0.
    # Nodes alternate row -> col -> row; consecutive path cells share a node.
    def search(node_kind, node, used):
        cells = rows_to_cells.get(node, []) if node_kind == "row" else cols_to_cells.get(node, [])
        for cell in cells:
            if cell in used:
                continue
            nxt_kind = "col" if node_kind == "row" else "row"
            nxt = cell[1] if node_kind == "row" else cell[0]
            if nxt_kind == "col" and nxt == j0:
                return [cell]
            rest = search(nxt_kind, nxt, used | {cell})
            if rest is not None:
                return [cell] + rest
        return None

    path = search("row", i0, frozenset())
    return [entering] + path


def exact_transport(a, b, cost_matrix):
    """Exact minimum-cost coupling under hard marginal constraints.

    Transportation simplex with a northwest-corner start and Bland's rule
    (lowest-index entering and leaving cells), which terminates finitely
    without cycling. Intended for small instances (n, m <= 64).
    """
    a, b, cost_matrix = _check_masses_and_cost(a, b, cost_matrix)
    n, m = cost_matrix.shape
    if n > _EXACT_MAX_SIZE or m > _EXACT_MAX_SIZE:
        raise ConfigError(
            f"exact_transport handles at most {_EXACT_MAX_SIZE} points per side, got {n}x{m}"
        )
    total_a, total_b = float(a.sum()), float(b.sum())
    if abs(total_a - total_b) > _MASS_MATCH_TOL * max(1.0, total_a, total_b):
        raise InfeasibleInputError(
            f"total masses must match: sum(a)={total_a!r}, sum(b)={total_b!r}"
        )

    basis, alloc = _northwest_corner(a, b)
    scale = max(1.0, float(np.max(np.abs(cost_matrix))))
    threshold = -1e-10 * scale
    max_pivots = 20000
    for pivot_count in range(max_pivots + 1):
        u, v = _compute_duals(basis, cost_matrix, n, m)
        reduced = cost_matrix - u[:, None] - v[None, :]
        basis_set = set(basis)
        entering = None
        # Bland's rule: first improving cell in row-major order.
        for i in range(n):
            for j in range(m):
                if (i, j) not in basis_set and reduced[i, j] < threshold:
                    entering = (i, j)
                    break
            if entering is not None:
                break
        if entering is None:
            break
        cycle = _find_cycle(basis, entering)
        minus_cells = cycle[1::2]
        theta = min(alloc[c] for c in minus_cells)
        leaving = min(c for c in minus_cells if alloc[c] == theta)
        for idx, cell in enumerate(cycle):
            if idx == 0:
                alloc[cell] = theta
            elif idx % 2 == 1:
                alloc[cell] -= theta
            else:
                alloc[cell] += theta
        basis[basis.index(leaving)] = entering
        del alloc[leaving]
    else:
        raise NumericalFailureError(
            "transportation simplex did not terminate", iteration=max_pivots
        )

    coupling = np.zeros((n, m))
    for (i, j), value in alloc.items():
        coupling[i, j] = max(value, 0.0)
    return _finish_plan(coupling, cost_matrix, pivot_count, True)


# ---------------------------------------------------------------------------
# Entropic solvers (log domain)
# ---------------------------------------------------------------------------


def _lse(matrix, axis):
    """Log-sum-exp reduction that tolerates -inf rows/columns."""
    shift = matrix.max(axis=axis)
    shift_safe = np.where(np.isfinite(shift), shift, 0.0)
    expanded = shift_safe[:, None] if axis == 1 else shift_safe[None, :]
    out = shift_safe + np.log(np.exp(matrix - expanded).sum(axis=axis))
    return np.where(np.isfinite(shift), out, -np.inf)


def _lse_rows(matrix):
    """Row log-sum-exp for all-finite matrices (no -inf guard)."""
    shift = matrix.max(axis=1)
    return shift + np.log(np.exp(matrix - shift[:, None]).sum(axis=1))


def _lse_cols(matrix):
    shift = matrix.max(axis=0)
    return shift + np.log(np.exp(matrix - shift[None, :]).sum(axis=0))


def _check_potentials(f, g, iteration):
    if np.any(np.isnan(f)) or np.any(np.isnan(g)):
        raise NumericalFailureError(
            "Sinkhorn potentials became non-finite", iteration=iteration
        )


def sinkhorn_plan(a, b, cost_matrix, config):
    """Entropic optimal transport with hard marginals.

    Iterates the dual potentials f, g with log-sum-exp reductions, so small
    ``epsilon`` cannot overflow the Gibbs kernel. ``converged`` reports
    whether the final plan's L1 marginal violation is within ``config.tol``.
    """
    a, b, cost_matrix = _check_masses_and_cost(a, b, cost_matrix)
    total_a, total_b = float(a.sum()), float(b.sum())
    if abs(total_a - total_b) > 1e-6 * max(1.0, total_a, total_b):
        raise InfeasibleInputError(
            f"balanced transport needs matching totals: {total_a!r} vs {total_b!r}"
        )
    eps = config.epsilon
    scaled = -cost_matrix / eps
    has_zero_mass = bool(np.any(a == 0) or np.any(b == 0))
    row_reduce = _lse if has_zero_mass else (lambda m, axis: _lse_rows(m))
    col_reduce = _lse if has_zero_mass else (lambda m, axis: _lse_cols(m))
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)

    f = np.zeros(len(a))
    g = np.zeros(len(b))
    iterations = 0
    for sweep in range(config.max_iters):
        row_lse = row_reduce(scaled + g[None, :] / eps, axis=1)
        if sweep > 0:
            # Column marginals are exact after the previous g-update, so the
            # row residual alone measures the current plan's violation.
            with np.errstate(invalid="ignore"):
                row_sums = np.exp(f / eps + row_lse)
            if has_zero_mass:
                row_sums = np.where(np.isneginf(f), 0.0, row_sums)
            if float(np.abs(row_sums - a).sum()) <= config.tol:
                break
        f = eps * (log_a - row_lse)
        g = eps * (log_b - col_reduce(scaled + f[:, None] / eps, axis=0))
        iterations = sweep + 1
        if sweep % 4 == 0:
            _check_potentials(f, g, iterations)

    coupling = _coupling_from_potentials(f, g, scaled, eps)
    cost, row, col = plan_cost_and_marginals(coupling, cost_matrix)
    violation = max(float(np.abs(row - a).sum()), float(np.abs(col - b).sum()))
    return TransportPlan(coupling, cost, row, col, iterations, violation <= config.tol)


def _coupling_from_potentials(f, g, scaled_cost, eps):
    log_plan = f[:, None] / eps + g[None, :] / eps + scaled_cost
    with np.errstate(invalid="ignore"):
        coupling = np.exp(log_plan)
    return np.where(np.isneginf(log_plan), 0.0, coupling)


def unbalanced_sinkhorn_plan(a, b, cost_matrix, config):
    """Entropic transport with KL-relaxed marginals of strength ``kappa``.

    Alternating dual updates ``f <- (eps*kappa/(eps+kappa)) * (log a - LSE)``
    and the symmetric g-update; with the balanced sentinel this dispatches to
    :func:`sinkhorn_plan`. ``converged`` reports whether the max-norm change
    of (f, g) fell within ``config.tol``.
    """
    if config.balanced:
        return sinkhorn_plan(a, b, cost_matrix, config)
    a, b, cost_matrix = _check_masses_and_cost(a, b, cost_matrix)
    if np.any(a <= 0) or np.any(b <= 0):
        raise InfeasibleInputError(
            "relaxed-marginal transport needs strictly positive masses; "
            "drop zero-mass points instead"
        )
    eps, kappa = config.epsilon, config.kappa
    factor = eps * kappa / (eps + kappa)
    scaled = -cost_matrix / eps
    log_a = np.log(a)
    log_b = np.log(b)

    f = np.zeros(len(a))
    g = np.zeros(len(b))
    converged = False
    iterations = 0
    # The potential-change check costs as much as a half-sweep, so run it
    # every few sweeps; the extra sweeps past the crossing are harmless.
    check_every = 4
    for sweep in range(1, config.max_iters + 1):
        f_new = factor * (log_a - _lse_rows(scaled + g[None, :] / eps))
        g_new = factor * (log_b - _lse_cols(scaled + f_new[:, None] / eps))
        if sweep % check_every == 0 or sweep == config.max_iters:
            delta = max(
                float(np.abs(f_new - f).max()), float(np.abs(g_new - g).max())
            )
            _check_potentials(f_new, g_new, sweep)
            if delta <= config.tol:
                f, g = f_new, g_new
                iterations = sweep
                converged = True
                break
        f, g = f_new, g_new
        iterations = sweep

    coupling = _coupling_from_potentials(f, g, scaled, eps)
    return _finish_plan(coupling, cost_matrix, iterations, converged)
