"""Parameterized convex MINLP family used throughout the package.

Six continuous variables ``x = (x3, x5, x9, x11, x13, x16)`` and five
binaries ``y = (y1, ..., y5)``.  Constraint rows are kept in a frozen order
(rows E2..E13, indices 0..11); every dual vector and cut refers to it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

N_X = 6
N_Y = 5
N_G = 12
MAX_ENUM_BINARIES = 20

CONSTRAINT_NAMES = (
    "E2", "E3", "E4", "E5", "E6", "E7", "E8",
    "E9", "E10", "E11", "E12", "E13",
)
X_NAMES = ("x3", "x5", "x9", "x11", "x13", "x16")

LOWER_BOUNDS = np.zeros(N_X)
UPPER_BOUNDS = np.array([2.0, 2.0, 2.0, np.inf, np.inf, 3.0])

# Sampling ranges (low, high) for the eight random parameters.
GAMMA_RANGES = ((1.0, 39.0),) * 4 + ((1.0, 7.0),)
U_RANGE = (6.0, 14.0)
RHO_RANGE = (0.0, 2.0)

# Linear part of rows E3..E8 and the x-part of E11..E13.
_LINEAR_ROWS = {
    1: [-1.0, -1.0, -2.0, 1.0, 0.0, 2.0],
    2: [-1.0, -1.0, -0.75, 1.0, 0.0, 2.0],
    3: [0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
    4: [0.0, 0.0, 2.0, -1.0, 0.0, -2.0],
    5: [0.0, 0.0, 0.0, -0.5, 1.0, 0.0],
    6: [0.0, 0.0, 0.0, 0.2, -1.0, 0.0],
    9: [0.0, 0.0, 1.25, 0.0, 0.0, 0.0],
    10: [0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
    11: [0.0, 0.0, -2.0, 0.0, 0.0, 2.0],
}
_OBJ_LINEAR = np.array([-10.0, -15.0, -15.0, 15.0, 5.0, -20.0])
_LINEAR_JAC = np.zeros((12, 6))
for _i, _row in _LINEAR_ROWS.items():
    _LINEAR_JAC[_i] = _row
# binary-coupled rows E9..E13 -> y1..y5
_Y_ROWS = np.arange(7, 12)


class DomainError(ValueError):
    """Raised when ``x11 + x13 + 1 <= 0`` (logarithm undefined)."""


class EmptyActionSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemInstance:
    gamma: tuple[float, ...]
    big_u: float
    rho: tuple[float, float]
    seed: int | None = None
    lower_bounds: tuple[float, ...] = field(default=tuple(LOWER_BOUNDS), repr=False)
    upper_bounds: tuple[float | None, ...] = field(
        default=(2.0, 2.0, 2.0, None, None, 3.0), repr=False
    )

    @cached_property
    def lb(self) -> np.ndarray:
        return np.array(self.lower_bounds, dtype=float)

    @cached_property
    def ub(self) -> np.ndarray:
        return np.array([np.inf if b is None else b for b in self.upper_bounds])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "gamma": list(self.gamma),
            "U": self.big_u,
            "rho": list(self.rho),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        gamma = tuple(float(g) for g in d["gamma"])
        rho = tuple(float(r) for r in d["rho"])
        if len(gamma) != N_Y or len(rho) != 2:
            raise ValueError("instance needs gamma[5] and rho[2]")
        return cls(gamma=gamma, big_u=float(d["U"]), rho=rho, seed=d.get("seed"))


def sample_instance(seed: int) -> ProblemInstance:
    """Draw the eight parameters uniformly and independently.

    Uses ``numpy.random.default_rng(seed)`` (PCG64) and draws in the order
    gamma1..gamma5, U, rho1, rho2.
    """
    rng = np.random.default_rng(seed)
    gamma = tuple(float(rng.uniform(lo, hi)) for lo, hi in GAMMA_RANGES)
    big_u = float(rng.uniform(*U_RANGE))
    rho = (float(rng.uniform(*RHO_RANGE)), float(rng.uniform(*RHO_RANGE)))
    return ProblemInstance(gamma=gamma, big_u=big_u, rho=rho, seed=int(seed))


def _log_arg(x) -> float:
    s = x[3] + x[4] + 1.0
    if not s > 0.0:
        raise DomainError(f"x11 + x13 + 1 = {s} <= 0")
    return s


def evaluate_objective(inst: ProblemInstance, x, y) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = _log_arg(x)
    e3 = np.exp(x[0])
    e5 = np.exp(x[1] / 1.2)
    value = (
        float(np.dot(inst.gamma, y))
        + float(_OBJ_LINEAR @ x)
        + e3 + e5 - 60.0 * np.log(s) + 140.0
    )
    grad = _OBJ_LINEAR.copy()
    grad[0] += e3
    grad[1] += e5 / 1.2
    grad[3] -= 60.0 / s
    grad[4] -= 60.0 / s
    return float(value), grad


def objective_hessian(inst: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s = _log_arg(x)
    h = np.zeros((N_X, N_X))
    h[0, 0] = np.exp(x[0])
    h[1, 1] = np.exp(x[1] / 1.2) / 1.44
    h[3:5, 3:5] = 60.0 / s**2
    return h


def evaluate_constraints(inst: ProblemInstance, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Rows E2..E13 written as ``g(x, y) <= 0`` plus the x-Jacobian."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = _log_arg(x)
    u = inst.big_u
    jac = _LINEAR_JAC.copy()
    g = jac @ x
    g[0] = -np.log(s)
    jac[0, 3] = jac[0, 4] = -1.0 / s
    e3 = np.exp(x[0])
    e5 = np.exp(x[1] / 1.2)
    g[7] = e3 - inst.rho[0]
    jac[7, 0] = e3
    g[8] = e5 - inst.rho[1]
    jac[8, 1] = e5 / 1.2
    g[_Y_ROWS] -= u * y
    return g, jac


def constraint_hessians(inst: ProblemInstance, x) -> np.ndarray:
    """Stack of x-Hessians, shape (12, 6, 6); only E2, E9, E10 are curved."""
    x = np.asarray(x, dtype=float)
    s = _log_arg(x)
    h = np.zeros((N_G, N_X, N_X))
    h[0, 3:5, 3:5] = 1.0 / s**2
    h[7, 0, 0] = np.exp(x[0])
    h[8, 1, 1] = np.exp(x[1] / 1.2) / 1.44
    return h


@dataclass(frozen=True)
class PureBinaryConstraints:
    """``K y - b <= 0`` together with equality rows ``K_eq y = b_eq``."""

    le_matrix: np.ndarray
    le_rhs: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray

    @property
    def m(self) -> int:
        return self.le_matrix.shape[1] if self.le_matrix.size else self.eq_matrix.shape[1]

    @property
    def general_form(self) -> tuple[np.ndarray, np.ndarray]:
        """Single ``(K, b)`` pair with each equality split into two rows."""
        k = np.vstack([self.le_matrix, self.eq_matrix, -self.eq_matrix])
        b = np.concatenate([self.le_rhs, self.eq_rhs, -self.eq_rhs])
        return k, b

    def is_satisfied(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=float)
        if self.le_matrix.size and np.any(self.le_matrix @ y - self.le_rhs > tol):
            return False
        if self.eq_matrix.size and np.any(np.abs(self.eq_matrix @ y - self.eq_rhs) > tol):
            return False
        return True

    def violated_rows(self, y, tol: float = 1e-9) -> list[int]:
        """Indices into ``general_form`` rows that ``y`` violates."""
        k, b = self.general_form
        return [int(i) for i in np.flatnonzero(k @ np.asarray(y, float) - b > tol)]


def family_constraints() -> PureBinaryConstraints:
    """y1 + y2 = 1 and y4 + y5 <= 1."""
    return PureBinaryConstraints(
        le_matrix=np.array([[0.0, 0.0, 0.0, 1.0, 1.0]]),
        le_rhs=np.array([1.0]),
        eq_matrix=np.array([[1.0, 1.0, 0.0, 0.0, 0.0]]),
        eq_rhs=np.array([1.0]),
    )


def enumerate_admissible(pbc: PureBinaryConstraints) -> list[tuple[int, ...]]:
    """All binary vectors satisfying ``pbc`` in lexicographic order.

    The position in this list is the canonical action index used by the
    dataset, the policy output head and the drivers.
    """
    m = pbc.m
    if m > MAX_ENUM_BINARIES:
        raise ValueError(f"exhaustive enumeration limited to m <= {MAX_ENUM_BINARIES}, got {m}")
    out = [y for y in itertools.product((0, 1), repeat=m) if pbc.is_satisfied(y)]
    if not out:
        raise EmptyActionSpaceError("no binary assignment satisfies the pure binary constraints")
    return out


FAMILY_PBC = family_constraints()
ADMISSIBLE = tuple(enumerate_admissible(FAMILY_PBC))
N_ACTIONS = len(ADMISSIBLE)
