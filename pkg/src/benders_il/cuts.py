"""Affine Benders cuts over the binary variables and the cut store."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barrier import TOL_FEAS, Phase1Result, SubproblemResult
from .problem import ProblemInstance, evaluate_constraints, evaluate_objective

OPTIMALITY = "optimality"
FEASIBILITY = "feasibility"
CUT_TOL = 1e-6
AFFINE_TOL = 1e-8


class NonAffineError(ValueError):
    pass


@dataclass
class AffineCut:
    """``alpha + beta . y``; optimality cuts read ``mu_B >= value``,
    feasibility cuts read ``value <= 0``."""

    kind: str
    alpha: float
    beta: np.ndarray
    origin_iteration: int = 0
    origin_assignment: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in (OPTIMALITY, FEASIBILITY):
            raise ValueError(f"unknown cut kind {self.kind!r}")
        self.alpha = float(self.alpha)
        self.beta = np.asarray(self.beta, dtype=float)

    def value(self, y) -> float:
        return eval_cut(self, y)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "origin_iteration": self.origin_iteration,
        }
        if self.origin_assignment is not None:
            d["origin_assignment"] = list(self.origin_assignment)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AffineCut":
        origin = d.get("origin_assignment")
        return cls(
            kind=d["kind"], alpha=d["alpha"], beta=np.array(d["beta"], dtype=float),
            origin_iteration=int(d.get("origin_iteration", 0)),
            origin_assignment=tuple(origin) if origin is not None else None,
        )


@dataclass
class CutStore:
    optimality: list[AffineCut] = field(default_factory=list)
    feasibility: list[AffineCut] = field(default_factory=list)
    # insertion order across both kinds, as (kind, position) pairs
    order: list[tuple[str, int]] = field(default_factory=list)

    def add(self, cut: AffineCut) -> None:
        target = self.optimality if cut.kind == OPTIMALITY else self.feasibility
        self.order.append((cut.kind, len(target)))
        target.append(cut)

    def __len__(self) -> int:
        return len(self.optimality) + len(self.feasibility)

    def in_order(self) -> list[AffineCut]:
        return [
            (self.optimality if kind == OPTIMALITY else self.feasibility)[i]
            for kind, i in self.order
        ]

    def copy(self) -> "CutStore":
        return CutStore(list(self.optimality), list(self.feasibility), list(self.order))

    @staticmethod
    def _matrix(cuts, m):
        if not cuts:
            return np.zeros(0), np.zeros((0, m))
        return np.array([c.alpha for c in cuts]), np.vstack([c.beta for c in cuts])

    def optimality_matrix(self, m: int = 5):
        return self._matrix(self.optimality, m)

    def feasibility_matrix(self, m: int = 5):
        return self._matrix(self.feasibility, m)

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.in_order()]

    @classmethod
    def from_list(cls, rows: Sequence[dict]) -> "CutStore":
        store = cls()
        for r in rows:
            store.add(AffineCut.from_dict(r))
        return store


def affinize(evaluator: Callable[[np.ndarray], float], m: int, seed: int = 0) -> tuple[float, np.ndarray]:
    """Recover ``(alpha, beta)`` of an affine function on ``{0,1}^m``.

    Uses the origin and unit vectors, then checks one seeded random binary
    point.
    """
    alpha = float(evaluator(np.zeros(m)))
    beta = np.empty(m)
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        beta[i] = float(evaluator(e)) - alpha
    probe = np.random.default_rng(seed).integers(0, 2, size=m).astype(float)
    got = float(evaluator(probe))
    want = alpha + float(beta @ probe)
    if abs(got - want) > AFFINE_TOL * max(1.0, abs(got)):
        raise NonAffineError(f"probe mismatch {got - want:.3e} at {probe.tolist()}")
    return alpha, beta


def make_optimality_cut(inst: ProblemInstance, sub: SubproblemResult, y_k, k: int) -> AffineCut:
    if not sub.converged:
        raise ValueError("optimality cut needs a converged subproblem")
    x, mu = sub.x_star, sub.duals_mu

    def lagrangian(y):
        return evaluate_objective(inst, x, y)[0] + float(mu @ evaluate_constraints(inst, x, y)[0])

    alpha, beta = affinize(lagrangian, len(y_k))
    return AffineCut(OPTIMALITY, alpha, beta, k, tuple(int(v) for v in y_k))


def make_feasibility_cut(inst: ProblemInstance, ph1: Phase1Result, y_k, k: int) -> AffineCut:
    if not ph1.slack_sum > TOL_FEAS:
        raise ValueError("feasibility cut needs an infeasible phase-1 result")
    x, mu = ph1.x_bar, ph1.duals_mu_bar

    def weighted_rows(y):
        return float(mu @ evaluate_constraints(inst, x, y)[0])

    alpha, beta = affinize(weighted_rows, len(y_k))
    return AffineCut(FEASIBILITY, alpha, beta, k, tuple(int(v) for v in y_k))


def eval_cut(cut: AffineCut, y) -> float:
    return cut.alpha + float(cut.beta @ np.asarray(y, dtype=float))


def mu_hat(store: CutStore, y) -> float:
    """Max over optimality cuts at ``y``; ``-inf`` if there are none."""
    if not store.optimality:
        return -np.inf
    alpha, beta = store.optimality_matrix(len(y))
    return float(np.max(alpha + beta @ np.asarray(y, dtype=float)))


def infeasibility_scores(store: CutStore, admissible: Sequence) -> np.ndarray:
    """``s_j = sum_k max(0, phi_f_k(c_j))`` for every admissible ``c_j``."""
    combos = np.asarray(admissible, dtype=float)
    if not store.feasibility:
        return np.zeros(len(combos))
    alpha, beta = store.feasibility_matrix(combos.shape[1])
    return np.maximum(0.0, alpha[None, :] + combos @ beta.T).sum(axis=1)


def scores_from_rows(cut_rows: Sequence[tuple[float, Sequence[float]]], admissible: Sequence) -> np.ndarray:
    """Same as :func:`infeasibility_scores` from serialized ``(alpha, beta)`` rows."""
    combos = np.asarray(admissible, dtype=float)
    if len(cut_rows) == 0:
        return np.zeros(len(combos))
    alpha = np.array([r[0] for r in cut_rows], dtype=float)
    beta = np.array([r[1] for r in cut_rows], dtype=float)
    return np.maximum(0.0, alpha[None, :] + combos @ beta.T).sum(axis=1)


def violated_feasibility_cuts(store: CutStore, y, tol: float = CUT_TOL) -> list[int]:
    if not store.feasibility:
        return []
    alpha, beta = store.feasibility_matrix(len(y))
    return [int(i) for i in np.flatnonzero(alpha + beta @ np.asarray(y, dtype=float) > tol)]


def check_feasible(store: CutStore, y, tol: float = CUT_TOL) -> bool:
    return not violated_feasibility_cuts(store, y, tol)
