"""Log-barrier Newton solver for the fixed-binary subproblems.

Both problems are solved in elastic form over ``z = (x, a)``::

    min  w * f(x, y) + P * sum(a)
    s.t. g_i(x, y) <= a_i,  a_i >= 0,  lb <= x <= ub

With ``w = 0, P = 1`` this is the slack feasibility problem.  With
``w = 1`` and a large ``P`` it is an exact-penalty version of the
subproblem; the elastic rows keep a strict interior even when the true
feasible set is lower dimensional (``y4 = 0`` pins ``x11 = x13 = 0``), which
a plain primal barrier cannot start from.  Row multipliers come out of the
barrier as ``t / (a_i - g_i)`` and are capped by ``P``.

After the barrier the row/bound multipliers are re-selected by a small LP:
the minimum-weight multipliers that keep the KKT conditions at the barrier
point.  Degenerate faces otherwise leave huge central-path multipliers on
the big-U rows, which still give valid but very weak cuts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .problem import (
    N_G,
    N_X,
    ProblemInstance,
    constraint_hessians,
    evaluate_constraints,
    evaluate_objective,
    objective_hessian,
)

TOL_KKT = 1e-7
TOL_COMP = 1e-6
TOL_OBJ = 1e-6
TOL_FEAS = 1e-6

T_START = 1.0
T_FINAL = 1e-8
T_FACTOR = 10.0
MAX_NEWTON = 60
NEWTON_TOL = 1e-11  # on the squared Newton decrement
PENALTY = 1e3
MAX_PENALTY = 1e6


class PreconditionError(ValueError):
    pass


@dataclass
class Phase1Result:
    x_bar: np.ndarray
    slack_sum: float
    duals_mu_bar: np.ndarray
    converged: bool
    iterations: int = 0
    slacks: np.ndarray | None = None


@dataclass
class SubproblemResult:
    x_star: np.ndarray
    z_value: float
    duals_mu: np.ndarray
    bound_duals: np.ndarray  # (6, 2): lower, upper
    converged: bool
    iterations: int
    stationarity: float = 0.0


@dataclass
class _BarrierPoint:
    x: np.ndarray
    a: np.ndarray
    mu: np.ndarray
    nu_lo: np.ndarray
    nu_hi: np.ndarray
    converged: bool
    newton_steps: int


def _bound_masks(inst):
    lb, ub = inst.lb, inst.ub
    return lb, ub, np.isfinite(lb), np.isfinite(ub)


def _barrier_value(inst, y, x, a, t, weight, penalty):
    lb, ub, has_lo, has_hi = _bound_masks(inst)
    try:
        with np.errstate(over="ignore"):
            g, _ = evaluate_constraints(inst, x, y)
    except ValueError:
        return np.inf
    if not np.all(np.isfinite(g)):
        return np.inf
    s = a - g
    if np.any(s <= 0) or np.any(a <= 0):
        return np.inf
    dlo = x[has_lo] - lb[has_lo]
    dhi = ub[has_hi] - x[has_hi]
    if np.any(dlo <= 0) or np.any(dhi <= 0):
        return np.inf
    val = penalty * a.sum() - t * (
        np.log(s).sum() + np.log(a).sum() + np.log(dlo).sum() + np.log(dhi).sum()
    )
    if weight:
        with np.errstate(over="ignore"):
            val += weight * evaluate_objective(inst, x, y)[0]
    return val


def _barrier_derivatives(inst, y, x, a, t, weight, penalty):
    lb, ub, has_lo, has_hi = _bound_masks(inst)
    g, jac = evaluate_constraints(inst, x, y)
    s = a - g
    n = N_X + N_G
    grad = np.zeros(n)
    hess = np.zeros((n, n))

    if weight:
        _, fg = evaluate_objective(inst, x, y)
        grad[:N_X] += weight * fg
        hess[:N_X, :N_X] += weight * objective_hessian(inst, x)

    mu = t / s
    # -t log(a_i - g_i)
    grad[:N_X] += jac.T @ mu
    grad[N_X:] += -mu
    w = t / s**2
    jg = np.hstack([jac, -np.eye(N_G)])
    hess += jg.T @ (w[:, None] * jg)
    hess[:N_X, :N_X] += np.tensordot(mu, constraint_hessians(inst, x), axes=1)
    # P a_i - t log a_i
    grad[N_X:] += penalty - t / a
    hess[N_X:, N_X:] += np.diag(t / a**2)
    # box
    dlo = np.where(has_lo, x - lb, 1.0)
    dhi = np.where(has_hi, ub - x, 1.0)
    grad[:N_X] += np.where(has_lo, -t / dlo, 0.0) + np.where(has_hi, t / dhi, 0.0)
    hess[:N_X, :N_X] += np.diag(np.where(has_lo, t / dlo**2, 0.0) + np.where(has_hi, t / dhi**2, 0.0))
    return grad, hess


def _run_barrier(inst, y, x0, weight, penalty, t_final=T_FINAL) -> _BarrierPoint:
    lb, ub, has_lo, has_hi = _bound_masks(inst)
    x = np.array(x0, dtype=float)
    g, _ = evaluate_constraints(inst, x, y)
    a = np.maximum(0.0, g) + 1.0
    z = np.concatenate([x, a])
    t = T_START
    total = 0
    converged = True
    while True:
        stage_ok = False
        for _ in range(MAX_NEWTON):
            grad, hess = _barrier_derivatives(inst, y, z[:N_X], z[N_X:], t, weight, penalty)
            d = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
            try:
                step = -d * np.linalg.solve(hess * d[:, None] * d[None, :], grad * d)
            except np.linalg.LinAlgError:
                step = -d * np.linalg.lstsq(hess * d[:, None] * d[None, :], grad * d, rcond=None)[0]
            dec = -float(grad @ step)
            total += 1
            if dec <= NEWTON_TOL:
                stage_ok = True
                break
            f0 = _barrier_value(inst, y, z[:N_X], z[N_X:], t, weight, penalty)
            step_len = 1.0
            while step_len > 1e-14:
                cand = z + step_len * step
                fc = _barrier_value(inst, y, cand[:N_X], cand[N_X:], t, weight, penalty)
                if fc <= f0 - 0.25 * step_len * dec:
                    break
                step_len *= 0.5
            else:
                # no descent achievable at working precision
                stage_ok = dec <= 1e3 * NEWTON_TOL
                break
            z = cand
        converged = converged and stage_ok
        if t <= t_final * (1 + 1e-12):
            break
        t = max(t / T_FACTOR, t_final)

    x, a = z[:N_X], z[N_X:]
    g, _ = evaluate_constraints(inst, x, y)
    mu = t / (a - g)
    nu_lo = np.where(has_lo, t / np.where(has_lo, x - lb, 1.0), 0.0)
    nu_hi = np.where(has_hi, t / np.where(has_hi, ub - x, 1.0), 0.0)
    return _BarrierPoint(x, a, mu, nu_lo, nu_hi, converged, total)


def _start_point(inst) -> np.ndarray:
    lb, ub = inst.lb, inst.ub
    return np.where(np.isfinite(ub), 0.5 * (lb + ub), 0.5)


def stationarity_residual(inst, x, y, mu, bound_duals, weight=1.0) -> float:
    _, jac = evaluate_constraints(inst, x, y)
    r = jac.T @ mu - bound_duals[:, 0] + bound_duals[:, 1]
    if weight:
        r = r + weight * evaluate_objective(inst, x, y)[1]
    return float(np.max(np.abs(r)))


def _classify(inst, bp: _BarrierPoint, t: float):
    """Active rows / bounds: barrier multiplier at least sqrt(t)."""
    thr = np.sqrt(t)
    return bp.mu >= thr, bp.nu_lo >= thr, bp.nu_hi >= thr


def _face_newton(inst, y, x, obj, rows, lo, hi, steps=8):
    """Newton on ``{g_rows(x) = 0, active bounds tight}`` for ``obj``.

    The active Jacobian is usually rank deficient, so steps are taken in the
    numerical null space of the constraint Jacobian plus a min-norm
    restoration component.
    """
    lb, ub = inst.lb, inst.ub
    x = x.copy()
    x[lo] = lb[lo]
    x[hi] = ub[hi]
    for _ in range(steps):
        g, jac = evaluate_constraints(inst, x, y)
        c_rows = [g[rows]]
        j_rows = [jac[rows]]
        eye = np.eye(N_X)
        c_rows += [x[lo] - lb[lo], x[hi] - ub[hi]]
        j_rows += [eye[lo], eye[hi]]
        c = np.concatenate(c_rows)
        jmat = np.vstack(j_rows)
        _, grad, hess = obj(x)
        if jmat.shape[0]:
            u, sv, vt = np.linalg.svd(jmat)
            rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
            null = vt[rank:].T
            dx_p = -np.linalg.lstsq(jmat, c, rcond=None)[0]
        else:
            null = np.eye(N_X)
            dx_p = np.zeros(N_X)
        if null.shape[1]:
            red_h = null.T @ hess @ null
            red_g = null.T @ (grad + hess @ dx_p)
            dz = -np.linalg.lstsq(red_h, red_g, rcond=1e-12)[0]
            dx = dx_p + null @ dz
        else:
            dx = dx_p
        x = x + dx
        if np.max(np.abs(dx)) < 1e-14:
            break
    return x


def _select_duals(grad, jac_rows, row_cost, row_cap, lo, hi):
    """Minimum-cost multipliers with ``grad + J^T mu - nu_lo + nu_hi = 0``."""
    n_r = jac_rows.shape[0]
    n_lo, n_hi = int(lo.sum()), int(hi.sum())
    eye = np.eye(N_X)
    a_eq = np.hstack([jac_rows.T, -eye[:, lo], eye[:, hi]])
    cost = np.concatenate([row_cost, np.ones(n_lo + n_hi)])
    bounds = [(0.0, cap) for cap in row_cap] + [(0.0, None)] * (n_lo + n_hi)
    if a_eq.shape[1] == 0:
        return (np.zeros(0), np.zeros(0), np.zeros(0)) if np.max(np.abs(grad)) < TOL_KKT else None
    res = linprog(
        cost, A_eq=a_eq, b_eq=-grad, bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return None
    sol = np.maximum(res.x, 0.0)
    # exact refit on the support so the residual is at rounding level
    support = sol > 1e-12
    if support.any():
        refit = np.linalg.lstsq(a_eq[:, support], -grad, rcond=None)[0]
        caps = np.array([b[1] if b[1] is not None else np.inf for b in bounds])[support]
        if np.all(refit >= 0) and np.all(refit <= caps + 1e-12):
            sol = np.zeros_like(sol)
            sol[support] = np.minimum(refit, caps)
    return sol[:n_r], sol[n_r:n_r + n_lo], sol[n_r + n_lo:]


def _dual_cost(inst, x, y) -> np.ndarray:
    """Rows that couple to y are priced by their y-coefficient magnitude.

    Small multipliers on those rows give the strongest cuts.
    """
    g0, _ = evaluate_constraints(inst, x, np.zeros(len(y)))
    cost = np.ones(N_G)
    for j in range(len(y)):
        e = np.zeros(len(y))
        e[j] = 1.0
        cost += 1e3 * np.abs(evaluate_constraints(inst, x, e)[0] - g0)
    return cost


def _objective_fn(inst, y):
    def obj(x):
        v, g = evaluate_objective(inst, x, y)
        return v, g, objective_hessian(inst, x)
    return obj


def _slack_objective_fn(inst, y, rows):
    def obj(x):
        g, jac = evaluate_constraints(inst, x, y)
        hess = constraint_hessians(inst, x)[rows].sum(axis=0)
        return float(g[rows].sum()), jac[rows].sum(axis=0), hess
    return obj


def _face_ok(inst, y, x, rows, lo, hi) -> bool:
    lb, ub = inst.lb, inst.ub
    try:
        g, _ = evaluate_constraints(inst, x, y)
    except ValueError:
        return False
    if not np.all(np.isfinite(x)):
        return False
    if np.any(x < lb - 1e-12) or np.any(x > ub + 1e-12):
        return False
    if rows.any() and np.max(np.abs(g[rows])) > 1e-10:
        return False
    return True


def solve_phase1(inst: ProblemInstance, y) -> Phase1Result:
    """Minimize the total row violation ``sum(a)`` with ``g(x, y) <= a``."""
    y = np.asarray(y, dtype=float)
    bp = _run_barrier(inst, y, _start_point(inst), 0.0, 1.0)
    fallback = Phase1Result(
        x_bar=bp.x, slack_sum=float(bp.a.sum()), duals_mu_bar=np.clip(bp.mu, 0.0, 1.0),
        converged=bp.converged, iterations=bp.newton_steps, slacks=bp.a.copy(),
    )
    violated = bp.a > TOL_FEAS
    rows, lo, hi = _classify(inst, bp, T_FINAL)
    rows = rows & ~violated
    x = _face_newton(inst, y, bp.x, _slack_objective_fn(inst, y, violated), rows, lo, hi)
    if not _face_ok(inst, y, x, rows, lo, hi):
        return fallback
    g, jac = evaluate_constraints(inst, x, y)
    free = ~(rows | violated)
    if np.any(g[free] > 1e-9) or np.any(g[violated] <= 0):
        return fallback
    slack = np.maximum(g, 0.0)
    slack[rows] = 0.0
    if slack.sum() > fallback.slack_sum + 1e-8:
        return fallback
    grad = jac[violated].sum(axis=0)
    cost = _dual_cost(inst, x, y)[rows]
    duals = _select_duals(grad, jac[rows], cost, np.ones(int(rows.sum())), lo, hi)
    if duals is None:
        return fallback
    mu_bar = np.zeros(N_G)
    mu_bar[violated] = 1.0
    mu_bar[rows] = duals[0]
    nu = np.zeros((N_X, 2))
    nu[lo, 0] = duals[1]
    nu[hi, 1] = duals[2]
    if stationarity_residual(inst, x, y, mu_bar, nu, weight=0.0) > TOL_KKT:
        return fallback
    # a verified KKT point of the convex problem is optimal, whatever the
    # barrier's last stage reported
    return Phase1Result(
        x_bar=x, slack_sum=float(slack.sum()), duals_mu_bar=mu_bar,
        converged=True, iterations=bp.newton_steps, slacks=slack,
    )


def solve_subproblem(inst: ProblemInstance, y, phase1: Phase1Result | None = None) -> SubproblemResult:
    """KKT point of the fixed-y subproblem; requires a feasible phase-1."""
    y = np.asarray(y, dtype=float)
    ph1 = phase1 if phase1 is not None else solve_phase1(inst, y)
    if ph1.slack_sum > TOL_FEAS:
        raise PreconditionError(f"subproblem infeasible at y={y.tolist()} (slack {ph1.slack_sum:.3e})")
    mid = _start_point(inst)
    x0 = 0.9 * np.asarray(ph1.x_bar) + 0.1 * mid
    penalty = PENALTY
    while True:
        bp = _run_barrier(inst, y, x0, 1.0, penalty)
        if np.max(bp.mu) < 0.99 * penalty or penalty >= MAX_PENALTY:
            break
        penalty *= 10.0

    nu_b = np.stack([bp.nu_lo, bp.nu_hi], axis=1)
    fallback = SubproblemResult(
        x_star=bp.x, z_value=evaluate_objective(inst, bp.x, y)[0], duals_mu=bp.mu,
        bound_duals=nu_b, converged=bp.converged, iterations=bp.newton_steps,
        stationarity=stationarity_residual(inst, bp.x, y, bp.mu, nu_b),
    )
    rows, lo, hi = _classify(inst, bp, T_FINAL)
    x = _face_newton(inst, y, bp.x, _objective_fn(inst, y), rows, lo, hi)
    if not _face_ok(inst, y, x, rows, lo, hi):
        return fallback
    g, jac = evaluate_constraints(inst, x, y)
    if np.any(g[~rows] > 1e-9):
        return fallback
    z, grad = evaluate_objective(inst, x, y)
    if z > fallback.z_value + TOL_OBJ:
        return fallback
    cost = _dual_cost(inst, x, y)[rows]
    duals = _select_duals(grad, jac[rows], cost, np.full(int(rows.sum()), np.inf), lo, hi)
    if duals is None:
        return fallback
    mu = np.zeros(N_G)
    mu[rows] = duals[0]
    nu = np.zeros((N_X, 2))
    nu[lo, 0] = duals[1]
    nu[hi, 1] = duals[2]
    stat = stationarity_residual(inst, x, y, mu, nu)
    if stat > TOL_KKT:
        return fallback
    return SubproblemResult(
        x_star=x, z_value=z, duals_mu=mu, bound_duals=nu, converged=True,
        iterations=bp.newton_steps, stationarity=stat,
    )
