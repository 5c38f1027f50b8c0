"""Exact reference computations for the divergence when the model is discrete.

When the model ``P`` is itself a finite measure the dual objective

    O(g) = sum_i p_i h1(x_i, g)

is a finite sum, Laguerre-cell masses are exact, and both the dual and the
primal (KL-penalised transport) problems can be solved to high accuracy.
These routines are slow and exist to check the stochastic estimator.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from ..errors import ConvergenceError, SizeError, StructuralError
from ..measures import (
    WeightedDiscreteMeasure,
    kl_discrete,
    log_sum_exp,
    softmax_weights,
    sq_dist_matrix,
    w2sq_discrete,
)


def _lse_term(g, lam, n):
    return (log_sum_exp(-lam * g) - math.log(n)) / lam


def exact_dual_objective(p_discrete: WeightedDiscreteMeasure, g, lam: float,
                         data: WeightedDiscreteMeasure):
    """Value and gradient of ``O(g)`` for a discrete model ``p_discrete``.

    The gradient is ``softmax(g) - (mass of each Laguerre cell)``; points on
    a cell boundary go to the lowest index.
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size != data.n:
        raise StructuralError(f"potential has length {g.size}, data has {data.n} atoms")
    if p_discrete.dim != data.dim:
        raise StructuralError("model and data live in different dimensions")
    shifted = sq_dist_matrix(p_discrete.atoms, data.atoms) - g[None, :]
    cell = np.argmin(shifted, axis=1)
    value = float(p_discrete.weights @ shifted[np.arange(cell.size), cell]) - _lse_term(g, lam, data.n)
    masses = np.bincount(cell, weights=p_discrete.weights, minlength=data.n)
    return value, softmax_weights(g, lam) - masses


def _primal_upper_bound(plan, cost, p_weights, n, lam):
    """Objective of a feasible plan after repairing its row marginals."""
    plan = np.clip(plan, 0.0, None)
    rows = plan.sum(axis=1)
    fix = np.where(rows > 0, p_weights / np.where(rows > 0, rows, 1.0), 0.0)
    plan = plan * fix[:, None]
    empty = rows <= 0
    if np.any(empty):
        # rows the solver left empty go to their nearest atom
        plan[empty, np.argmin(cost[empty], axis=1)] = p_weights[empty]
    w = plan.sum(axis=0)
    kl = float(np.sum(w[w > 0] * np.log(n * w[w > 0])))
    return float(np.sum(plan * cost)) + kl / lam


def exact_dual_maximize(p_discrete: WeightedDiscreteMeasure, lam: float,
                        data: WeightedDiscreteMeasure, tol: float = 1e-7,
                        max_atoms: int = 10_000):
    """Maximise ``O(g)`` and return ``(value, g_star)``.

    The dual is solved as a conic program (epigraph of the nearest-atom term
    plus an exponential-cone log-sum-exp). Optimality is certified by the
    gap between ``O(g_star)`` and the cost of a feasible primal plan built
    from the solver's multipliers; a gap above ``tol`` raises
    ``ConvergenceError`` carrying the iterate. ``g_star`` is normalised so
    its last entry is 0.
    """
    import cvxpy as cp

    if p_discrete.n > max_atoms:
        raise SizeError(f"{p_discrete.n} model atoms exceed the oracle cap of {max_atoms}")
    n = data.n
    cost = sq_dist_matrix(p_discrete.atoms, data.atoms)
    p = p_discrete.weights
    if n == 1:
        g = np.zeros(1)
        return exact_dual_objective(p_discrete, g, lam, data)[0], g

    scale = max(float(cost.max()), 1e-12)
    u = cp.Variable(p_discrete.n)
    g = cp.Variable(n)
    cons = [u[:, None] + g[None, :] <= cost / scale, g[n - 1] == 0]
    objective = p @ u - (cp.log_sum_exp(-lam * scale * g) - math.log(n)) / (lam * scale)
    problem = cp.Problem(cp.Maximize(objective), cons)
    # accuracy is certified below, so solver "inaccurate" warnings are moot
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        try:
            problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
        except cp.SolverError:
            problem.solve(solver=cp.SCS, eps=1e-10, max_iters=200_000)
    if g.value is None:
        raise ConvergenceError("conic solver returned no solution", best=np.zeros(n))
    g_star = np.asarray(g.value, dtype=float) * scale
    g_star -= g_star[-1]
    value, _ = exact_dual_objective(p_discrete, g_star, lam, data)
    plan = np.asarray(cons[0].dual_value, dtype=float)
    upper = _primal_upper_bound(plan, cost, p, n, lam)
    gap = upper - value
    if gap > tol * max(1.0, abs(value)):
        raise ConvergenceError(f"duality gap {gap:.3e} above tolerance {tol:.1e}", best=g_star, value=value)
    return value, g_star


def _simplex_grid(n: int, steps: int) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        i = np.arange(steps + 1)
        return np.stack([i, steps - i], axis=1) / steps
    i, j = np.triu_indices(steps + 1)
    # i <= j: weights (i, j - i, steps - j) cover every composition once
    return np.stack([i, j - i, steps - j], axis=1) / steps


def _w2sq_1d_batch(model: WeightedDiscreteMeasure, data_atoms: np.ndarray, weights: np.ndarray,
                   chunk: int = 20_000) -> np.ndarray:
    """Exact 1-D W2^2 between a fixed measure and many reweightings of ``data_atoms``."""
    order = np.argsort(model.atoms[:, 0], kind="stable")
    x = model.atoms[order, 0]
    cx = np.cumsum(model.weights[order])
    cx /= cx[-1]
    lo_x = np.concatenate(([0.0], cx[:-1]))
    dorder = np.argsort(data_atoms, kind="stable")
    y = data_atoms[dorder]
    cost = (x[:, None] - y[None, :]) ** 2
    out = np.empty(weights.shape[0])
    for start in range(0, weights.shape[0], chunk):
        w = weights[start:start + chunk][:, dorder]
        cy = np.cumsum(w, axis=1)
        lo_y = cy - w
        overlap = (np.minimum(cx[None, :, None], cy[:, None, :])
                   - np.maximum(lo_x[None, :, None], lo_y[:, None, :]))
        out[start:start + chunk] = np.einsum("bij,ij->b", np.clip(overlap, 0.0, None), cost)
    return out


def primal_bruteforce(p_discrete: WeightedDiscreteMeasure, lam: float, data: WeightedDiscreteMeasure,
                      grid_step: float = 1e-2) -> float:
    """Minimise ``KL(Q_w, P_n)/lam + W2^2(P, Q_w)`` over a simplex grid of ``w``.

    Only for ``n <= 3`` data atoms. The result is an upper bound on the
    divergence that tightens as ``grid_step`` shrinks.
    """
    n = data.n
    if n > 3:
        raise SizeError(f"primal_bruteforce handles at most 3 data atoms, got {n}")
    if not 0 < grid_step <= 1e-2:
        raise ValueError("grid_step must lie in (0, 1e-2]")
    grid = _simplex_grid(n, int(round(1.0 / grid_step)))
    if data.dim == 1 and p_discrete.dim == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(grid > 0, grid * np.log(n * grid), 0.0).sum(axis=1)
        w2 = _w2sq_1d_batch(p_discrete, data.atoms[:, 0], grid)
        return float(np.min(kl / lam + w2))
    best = np.inf
    for w in grid:
        q = WeightedDiscreteMeasure(data.atoms, w)
        best = min(best, kl_discrete(q, data) / lam + w2sq_discrete(p_discrete, q))
    return float(best)
