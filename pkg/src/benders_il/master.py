"""Master problem: exact enumeration and a node-budgeted branch-and-bound.

The budgeted search stands in for a time-limited MIP solve.  Its node bound
is the interval relaxation of each optimality cut over the free variables,
``alpha + beta_fixed . y_fixed + sum(min(0, beta_free))``, maximized over
cuts, which is a valid lower bound on the max of affine functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cuts import CUT_TOL, CutStore, check_feasible, mu_hat
from .problem import PureBinaryConstraints


class InfeasibleMasterError(RuntimeError):
    """Every admissible assignment is cut off by the feasibility cuts."""


@dataclass
class MasterResult:
    y_best: tuple[int, ...]
    mu_best: float
    best_bound: float
    nodes_used: int
    optimal: bool


def _same(a: float, b: float) -> bool:
    if np.isinf(a) or np.isinf(b):
        return a == b
    return abs(a - b) <= 1e-9


def solve_exact(store: CutStore, admissible: Sequence) -> MasterResult:
    if len(admissible) == 0:
        raise ValueError("empty admissible set")
    best_y, best_v = None, np.inf
    for y in admissible:
        if not check_feasible(store, y):
            continue
        v = mu_hat(store, y)
        if best_y is None or v < best_v or (v == best_v and tuple(y) < best_y):
            best_y, best_v = tuple(int(t) for t in y), v
    if best_y is None:
        raise InfeasibleMasterError("all admissible assignments violate a feasibility cut")
    return MasterResult(best_y, best_v, best_v, len(admissible), True)


class _Relaxation:
    """Interval bounds of cuts and pure binary rows over a partial assignment."""

    def __init__(self, store: CutStore, pbc: PureBinaryConstraints, m: int):
        self.m = m
        self.oa, self.ob = store.optimality_matrix(m)
        self.fa, self.fb = store.feasibility_matrix(m)
        self.le = (pbc.le_matrix, pbc.le_rhs) if pbc.le_matrix.size else None
        self.eq = (pbc.eq_matrix, pbc.eq_rhs) if pbc.eq_matrix.size else None

    @staticmethod
    def _range(alpha, beta, prefix):
        d = len(prefix)
        fixed = alpha + beta[:, :d] @ np.asarray(prefix, dtype=float)
        free = beta[:, d:]
        return fixed + np.minimum(free, 0).sum(axis=1), fixed + np.maximum(free, 0).sum(axis=1)

    def lower_bound(self, prefix) -> float:
        if self.oa.size == 0:
            return -np.inf
        lo, _ = self._range(self.oa, self.ob, prefix)
        return float(lo.max())

    def provably_infeasible(self, prefix) -> bool:
        if self.fa.size:
            lo, _ = self._range(self.fa, self.fb, prefix)
            if np.any(lo > CUT_TOL):
                return True
        if self.le is not None:
            lo, _ = self._range(-self.le[1], self.le[0], prefix)
            if np.any(lo > 1e-9):
                return True
        if self.eq is not None:
            lo, hi = self._range(-self.eq[1], self.eq[0], prefix)
            if np.any(lo > 1e-9) or np.any(hi < -1e-9):
                return True
        return False


def solve_budgeted(
    store: CutStore,
    pbc: PureBinaryConstraints,
    node_budget: int | None,
    warm_start=None,
) -> MasterResult:
    """Depth-first branch-and-bound over ``y1..ym`` (0-branch first).

    ``node_budget=None`` searches to completion.  When the budget runs out,
    ``best_bound`` is the minimum of the incumbent value and the bounds of
    all open nodes.  If the budget runs out before any incumbent exists the
    search continues until the first feasible leaf, so a result always
    carries an assignment.
    """
    m = pbc.m
    if node_budget is not None and node_budget < 1:
        raise ValueError("node_budget must be >= 1")
    rel = _Relaxation(store, pbc, m)

    inc_y, inc_v = None, np.inf
    if warm_start is not None:
        ws = tuple(int(v) for v in warm_start)
        if pbc.is_satisfied(ws) and check_feasible(store, ws):
            inc_y, inc_v = ws, mu_hat(store, ws)

    def dominated(prefix, bound):
        if inc_y is None:
            return False
        if bound > inc_v:
            return True
        # equal bound: only a lexicographically smaller completion could win
        return bound == inc_v and tuple(prefix) + (0,) * (m - len(prefix)) >= inc_y

    stack: list[tuple[tuple[int, ...], float]] = [((), rel.lower_bound(()))]
    used = 0
    while stack:
        if node_budget is not None and used >= node_budget and inc_y is not None:
            break
        prefix, bound = stack.pop()
        used += 1
        if dominated(prefix, bound) or rel.provably_infeasible(prefix):
            continue
        if len(prefix) == m:
            if not (pbc.is_satisfied(prefix) and check_feasible(store, prefix)):
                continue
            v = mu_hat(store, prefix)
            if inc_y is None or v < inc_v or (v == inc_v and prefix < inc_y):
                inc_y, inc_v = prefix, v
            continue
        for bit in (1, 0):
            child = prefix + (bit,)
            stack.append((child, rel.lower_bound(child)))

    if inc_y is None:
        raise InfeasibleMasterError("all assignments violate a feasibility cut")
    if stack:
        best_bound = min([inc_v] + [b for _, b in stack])
    else:
        best_bound = inc_v
    return MasterResult(inc_y, inc_v, best_bound, used, _same(best_bound, inc_v))
