"""Discrete optimal transport between a uniform and a weighted ensemble.

Plans follow the row-mass convention used by ensemble transform filters:
rows sum to one and column ``q`` sums to ``P * w_q``, so the updated particle
``p`` is ``sum_q rho[p, q] * x[q]``.
"""

import itertools
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

# Keep POT from importing heavyweight deep learning backends.
for _name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

import ot  # noqa: E402

WEIGHT_DROP = 1e-15
ABSORB_LOG = 30.0


class SinkhornDidNotConverge(RuntimeError):
    """Raised when Sinkhorn iterations exhaust ``max_iter``.

    Attributes:
        marginal_error: The last infinity-norm marginal violation.
    """

    def __init__(self, marginal_error, iterations):
        super().__init__(
            f"Sinkhorn did not converge in {iterations} iterations "
            f"(marginal error {marginal_error:.3e})"
        )
        self.marginal_error = marginal_error
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Uniform source, weighted target, and a ``P x P`` cost matrix."""

    weights: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.cost, dtype=float)
        if w.ndim != 1 or c.shape != (w.size, w.size):
            raise ValueError("cost must be P x P for P weights")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"weights sum to {total}, expected 1")
        object.__setattr__(self, "weights", w / total)
        object.__setattr__(self, "cost", c)

    @property
    def size(self):
        return self.weights.size


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Solved coupling.

    Attributes:
        coupling: ``P x P`` plan with rows summing to one.
        objective_value: Transport cost ``sum(coupling * cost)``.
        solver_kind: ``"exact"``, ``"entropic"`` or ``"brute_force"``.
        nonzero_count: Number of strictly positive entries.
        regularized_objective: For entropic plans, the transport cost plus
            ``lambda * sum(rho * (log rho - 1))``; equal to ``objective_value`` otherwise.
        iterations: Sinkhorn sweeps used (zero for other solvers).
    """

    coupling: np.ndarray
    objective_value: float
    solver_kind: str
    nonzero_count: int
    regularized_objective: float
    iterations: int = 0


def _reduce(problem):
    keep = problem.weights >= WEIGHT_DROP
    w = problem.weights[keep]
    return keep, w / w.sum(), problem.cost[:, keep]


def _inflate(coupling, keep):
    full = np.zeros((keep.size, keep.size))
    full[:, keep] = coupling
    return full


def solve_exact(problem):
    """Exact OT plan via the network simplex (POT's ``emd``).

    Columns with negligible weight are dropped before the solve and reinstated
    as zero columns.

    Args:
        problem: The :class:`TransportProblem`.

    Returns:
        The optimal :class:`TransportPlan`.
    """
    P = problem.size
    keep, w, cost = _reduce(problem)
    a = np.full(P, 1.0 / P)
    g, log = ot.emd(a, w, np.ascontiguousarray(cost), numItermax=10_000_000, log=True)
    if log["result_code"] != 1:
        raise RuntimeError(f"network simplex failed: {log['warning']}")
    coupling = _inflate(P * np.asarray(g), keep)
    objective = float(np.sum(coupling * problem.cost))
    return TransportPlan(
        coupling=coupling,
        objective_value=objective,
        solver_kind="exact",
        nonzero_count=int(np.count_nonzero(coupling > 0)),
        regularized_objective=objective,
    )


def _sinkhorn_sweeps(cost, w, lam, tol, max_iter):
    """Stabilised Sinkhorn sweeps.

    Returns the dual potentials (in cost units), the sweep count and the
    final marginal error.
    """
    P = cost.shape[0]
    row_target = np.ones(P)
    col_target = P * w
    kernel = -cost / lam
    g = np.zeros(w.size)
    f = -logsumexp(kernel, axis=1)
    gibbs = np.exp(kernel + f[:, None] + g[None, :])
    u = np.ones(P)
    v = np.ones(w.size)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = row_target / (gibbs @ v)
        v = col_target / (gibbs.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError("Sinkhorn scalings overflowed")
        if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > ABSORB_LOG:
            f += np.log(u)
            g += np.log(v)
            gibbs = np.exp(kernel + f[:, None] + g[None, :])
            u[:] = 1.0
            v[:] = 1.0
        if it % 10 == 0 or it == max_iter:
            err = float(np.abs(u * (gibbs @ v) - row_target).max())
            if err <= tol:
                break
    f += np.log(u)
    g += np.log(v)
    return lam * f, lam * g, it, err


def solve_entropic(problem, lam, tol=1e-9, max_iter=10_000):
    """Entropically regularised plan by log-domain Sinkhorn iterations.

    Solves ``min sum(rho * c) + lam * sum(rho * (log rho - 1))`` over plans with
    the row-mass marginals. ``lam`` is absolute, in the units of the cost.
    The dual potentials are kept in the log domain and the scaling vectors are
    absorbed into them whenever they drift far from one, so small ``lam`` does
    not underflow.

    Args:
        problem: The :class:`TransportProblem`.
        lam: Regularisation strength, positive.
        tol: Infinity-norm tolerance on the marginal violation.
        max_iter: Maximum number of row/column sweeps.

    Returns:
        The :class:`TransportPlan`.

    Raises:
        SinkhornDidNotConverge: If the tolerance is not met within ``max_iter``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    keep, w, cost = _reduce(problem)
    alpha, beta, total, err = _sinkhorn_sweeps(cost, w, lam, tol, max_iter)
    if err > tol:
        raise SinkhornDidNotConverge(err, max_iter)
    rho = np.exp((alpha[:, None] + beta[None, :] - cost) / lam)
    coupling = _inflate(rho, keep)
    transport = float(np.sum(coupling * problem.cost))
    positive = coupling > 0
    entropy_term = float(np.sum(coupling[positive] * (np.log(coupling[positive]) - 1.0)))
    return TransportPlan(
        coupling=coupling,
        objective_value=transport,
        solver_kind="entropic",
        nonzero_count=int(np.count_nonzero(positive)),
        regularized_objective=transport + lam * entropy_term,
        iterations=total,
    )


def brute_force_uniform(cost):
    """Cheapest permutation plan by enumeration, for uniform target weights.

    Args:
        cost: ``P x P`` cost matrix with ``P <= 8``.

    Returns:
        A :class:`TransportPlan` whose rows are unit vectors.
    """
    cost = np.asarray(cost, dtype=float)
    P = cost.shape[0]
    if P > 8:
        raise ValueError("brute force limited to P <= 8")
    rows = np.arange(P)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(P)):
        value = cost[rows, perm].sum()
        if value < best:
            best, best_perm = value, perm
    coupling = np.zeros((P, P))
    coupling[rows, best_perm] = 1.0
    return TransportPlan(
        coupling=coupling,
        objective_value=float(best),
        solver_kind="brute_force",
        nonzero_count=P,
        regularized_objective=float(best),
    )


def validate_plan(plan, weights):
    """Marginal violations of a plan.

    Returns:
        Tuple ``(row_error, column_error)`` of infinity-norm deviations from one
        and from ``P * w`` respectively.
    """
    rho = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan)
    w = np.asarray(weights, dtype=float)
    P = w.size
    row_error = float(np.abs(rho.sum(axis=1) - 1.0).max())
    column_error = float(np.abs(rho.sum(axis=0) - P * w).max())
    return row_error, column_error


def solve(problem, kind="exact", lam=None, **kwargs):
    """Dispatch to :func:`solve_exact` or :func:`solve_entropic`."""
    if kind == "exact":
        return solve_exact(problem)
    if kind == "entropic":
        return solve_entropic(problem, lam, **kwargs)
    raise ValueError(f"unknown OT solver {kind!r}")
