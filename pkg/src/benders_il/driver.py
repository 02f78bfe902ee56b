"""Classical and agent-in-the-loop GBD drivers plus the enumeration oracle.

Both drivers share one iteration skeleton: solve phase 1 at ``y_k``, then
either the subproblem (adding an optimality cut and updating the upper
bound) or a feasibility cut.  They differ only in how ``y_{k+1}`` is chosen.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .barrier import TOL_FEAS, Phase1Result, SubproblemResult, solve_phase1, solve_subproblem
from .cuts import (
    CUT_TOL, CutStore, check_feasible, eval_cut, make_feasibility_cut,
    make_optimality_cut, mu_hat, violated_feasibility_cuts,
)
from .graph import SCHEMA, DatasetSample, SchemaError, encode, make_sample
from .master import InfeasibleMasterError, solve_budgeted, solve_exact
from .policy import (
    COMBINATION, THRESHOLDS, PolicyParams, independent_outputs, predict, threshold_assignment,
)
from .problem import ADMISSIBLE, FAMILY_PBC, ProblemInstance, PureBinaryConstraints

AGENT_ACCEPTED = "agent_accepted"
SOLVER_OVERRIDE = "solver_override"
SOLVER_FALLBACK = "solver_fallback"
TAGS = (AGENT_ACCEPTED, SOLVER_OVERRIDE, SOLVER_FALLBACK)

CLASSICAL = "classical"
AGENT = "agent"
AGENT_INDEPENDENT = "agent-independent"


class InfeasibleInstanceError(RuntimeError):
    """No admissible assignment has a feasible subproblem."""


@dataclass
class DriverConfig:
    epsilon: float = 1e-3
    eps_tol: float = 1e-6
    budget_min: int = 4
    budget_max: int = 64
    max_iterations: int = 100

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 1 <= self.budget_min <= self.budget_max:
            raise ValueError("need 1 <= budget_min <= budget_max")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


class InstanceSolver:
    """Memoizes phase-1 and subproblem solves per assignment.

    The convex solves are deterministic, so sharing one cache between the
    classical run, the agent runs and the oracle changes no result.
    """

    def __init__(self, inst: ProblemInstance):
        self.inst = inst
        self._cache: dict[tuple[int, ...], tuple[Phase1Result, SubproblemResult | None]] = {}

    def solve(self, y) -> tuple[Phase1Result, SubproblemResult | None]:
        key = tuple(int(v) for v in y)
        hit = self._cache.get(key)
        if hit is None:
            ph1 = solve_phase1(self.inst, key)
            sub = solve_subproblem(self.inst, key, ph1) if ph1.slack_sum <= TOL_FEAS else None
            hit = self._cache[key] = (ph1, sub)
        return hit


def budget_schedule(gap: float, gap0: float, bmin: int, bmax: int) -> int:
    """Node budget growing linearly as the normalised gap closes."""
    if not (math.isfinite(gap) and math.isfinite(gap0)) or gap0 <= 0:
        return int(bmin)
    raw = bmin + (bmax - bmin) * (1.0 - gap / gap0)
    return int(min(bmax, max(bmin, math.floor(raw + 0.5))))


@dataclass
class Decision:
    """How ``y_{k+1}`` was chosen."""

    y_next: tuple[int, ...]
    tag: str | None = None  # None for classical runs
    y_hat: tuple[int, ...] | None = None
    mu_hat: float | None = None
    mu_bar: float | None = None
    best_bound: float | None = None
    node_budget: int | None = None
    nodes_used: int | None = None
    reason: str | None = None
    witness: dict | None = None


@dataclass
class IterationRecord:
    k: int
    y: tuple[int, ...]
    feasible: bool
    z: float | None
    slack_sum: float
    cut_kind: str
    ubd: float
    lbd: float
    decision: Decision | None = None


@dataclass
class GbdTrace:
    mode: str
    instance: ProblemInstance
    records: list[IterationRecord] = field(default_factory=list)
    cuts: CutStore = field(default_factory=CutStore)
    objective: float = math.inf
    y_star: tuple[int, ...] | None = None
    x_star: list[float] | None = None
    converged: bool = False
    status: str = "running"
    master_solves: int = 0
    exact_master_solves: int = 0
    budgeted_nodes: int = 0
    gap0: float | None = None
    samples: list[DatasetSample] = field(default_factory=list, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def ubd(self) -> float:
        return self.records[-1].ubd if self.records else math.inf

    @property
    def lbd(self) -> float:
        return self.records[-1].lbd if self.records else -math.inf

    def tag_counts(self) -> dict[str, int]:
        counts = {t: 0 for t in TAGS}
        for r in self.records:
            if r.decision is not None and r.decision.tag is not None:
                counts[r.decision.tag] += 1
        return counts

    def to_dict(self) -> dict:
        return _jsonable({
            "schema": SCHEMA,
            "kind": "trace",
            "mode": self.mode,
            "instance": self.instance.to_dict(),
            "status": self.status,
            "converged": self.converged,
            "objective": self.objective,
            "y_star": self.y_star,
            "x_star": self.x_star,
            "iterations": self.iterations,
            "master_solves": self.master_solves,
            "exact_master_solves": self.exact_master_solves,
            "budgeted_nodes": self.budgeted_nodes,
            "gap0": self.gap0,
            "tag_counts": self.tag_counts(),
            "records": [asdict(r) for r in self.records],
            "cuts": self.cuts.to_list(),
        })


def _jsonable(obj):
    """Tuples to lists, non-finite floats to ``"inf"``/``"-inf"``/``"nan"``."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def parse_float(v) -> float | None:
    if v is None:
        return None
    if isinstance(v, str):
        return float(v)  # float() accepts "inf", "-inf", "nan"
    return float(v)


def write_trace(trace: GbdTrace, path) -> None:
    Path(path).write_text(json.dumps(trace.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_trace(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != SCHEMA or doc.get("kind") != "trace":
        raise SchemaError(f"{path}: not a {SCHEMA} trace file")
    return doc


def _initial_assignment(admissible) -> tuple[int, ...]:
    return tuple(min(admissible))


def _run(inst, config, choose, mode, solver=None, admissible=ADMISSIBLE):
    """Shared GBD loop; ``choose(trace, y_k, ubd, lbd)`` returns (Decision, new_lbd)."""
    solver = solver or InstanceSolver(inst)
    trace = GbdTrace(mode, inst)
    store = trace.cuts
    ubd, lbd = math.inf, -math.inf
    y = _initial_assignment(admissible)
    best = None
    for k in range(config.max_iterations):
        ph1, sub = solver.solve(y)
        if sub is not None:
            cut = make_optimality_cut(inst, sub, y, k)
            if sub.z_value < ubd:
                ubd = sub.z_value
                best = (y, sub)
        else:
            cut = make_feasibility_cut(inst, ph1, y, k)
        store.add(cut)
        rec = IterationRecord(
            k, y, sub is not None, None if sub is None else sub.z_value,
            ph1.slack_sum, cut.kind, ubd, lbd,
        )
        trace.records.append(rec)
        if ubd - lbd <= config.epsilon:
            trace.converged = True
            break
        if trace.gap0 is None and math.isfinite(ubd) and math.isfinite(lbd):
            trace.gap0 = ubd - lbd
        try:
            decision, lbd = choose(trace, y, ubd, lbd)
        except InfeasibleMasterError:
            trace.status = "infeasible"
            return trace
        rec.decision = decision
        rec.lbd = lbd
        trace.master_solves += 1
        if ubd - lbd <= config.epsilon:
            trace.converged = True
            break
        y = decision.y_next
    trace.status = "converged" if trace.converged else "iteration_limit"
    if best is not None:
        trace.y_star = tuple(best[0])
        trace.objective = float(best[1].z_value)
        trace.x_star = best[1].x_star.tolist()
    elif trace.converged:
        trace.status = "infeasible"
    return trace


def solve_classical(inst: ProblemInstance, config: DriverConfig | None = None,
                    solver: InstanceSolver | None = None, admissible=ADMISSIBLE,
                    collect_samples: bool = True) -> GbdTrace:
    """GBD with the master solved to optimality each iteration.

    Emits one dataset sample per master solve: the graph of the master state
    before the solve, labelled with the index of the exact optimum.
    """
    config = config or DriverConfig()
    index = {tuple(a): j for j, a in enumerate(admissible)}

    def choose(trace, y, ubd, lbd):
        res = solve_exact(trace.cuts, admissible)
        trace.exact_master_solves += 1
        if collect_samples:
            trace.samples.append(make_sample(
                trace.cuts, y, index[res.y_best], res.y_best,
                instance_seed=inst.seed, iteration=len(trace.records) - 1,
            ))
        return Decision(res.y_best), max(lbd, res.mu_best)

    return _run(inst, config, choose, CLASSICAL, solver, admissible)


def _fallback(trace, admissible, lbd, reason, witness, y_hat=None, mu_hat_v=None):
    res = solve_exact(trace.cuts, admissible)
    trace.exact_master_solves += 1
    return Decision(
        res.y_best, SOLVER_FALLBACK, y_hat=y_hat, mu_hat=mu_hat_v, mu_bar=res.mu_best,
        best_bound=res.best_bound, reason=reason, witness=witness,
    ), max(lbd, res.best_bound)


def _visited_cut(trace, y):
    """Optimality cut generated at ``y`` in an earlier iteration, if any."""
    for i, cut in enumerate(trace.cuts.optimality):
        if cut.origin_assignment == tuple(y):
            return i, cut
    return None


def solve_agent(inst: ProblemInstance, policy: PolicyParams, config: DriverConfig | None = None,
                solver: InstanceSolver | None = None, admissible=ADMISSIBLE,
                pbc: PureBinaryConstraints = FAMILY_PBC) -> GbdTrace:
    """GBD where the policy proposes each master iterate.

    A proposal violating a feasibility cut (or, for the independent head,
    falling in the threshold dead zone or breaking a pure binary row) is
    replaced by the exact master optimum.  Otherwise a node-budgeted search
    warm-started at the proposal certifies a lower bound and may override
    it.  An iterate that was already visited cannot add information, so it
    is replaced by the exact master optimum as well.
    """
    config = config or DriverConfig()
    head = policy.head
    mode = AGENT if head == COMBINATION else AGENT_INDEPENDENT

    def choose(trace, y, ubd, lbd):
        store = trace.cuts
        graph = encode(store, y)
        if head == COMBINATION:
            j, _ = predict(policy, graph, admissible)
            y_hat = tuple(admissible[j])
        else:
            outputs = independent_outputs(policy, graph)
            y_hat = threshold_assignment(outputs)
            if y_hat is None:
                lo, hi = THRESHOLDS
                idx = next(i for i, o in enumerate(outputs) if lo < o < hi)
                return _fallback(trace, admissible, lbd, "reject",
                                 {"output_index": idx, "output": float(outputs[idx])})
            rows = pbc.violated_rows(y_hat)
            if rows:
                return _fallback(trace, admissible, lbd, "pure_binary",
                                 {"row": rows[0]}, y_hat=y_hat)
        violated = violated_feasibility_cuts(store, y_hat)
        if violated:
            i = violated[0]
            return _fallback(
                trace, admissible, lbd, "cut_violation",
                {"feasibility_cut": i, "value": eval_cut(store.feasibility[i], y_hat)}, y_hat=y_hat,
            )
        budget = budget_schedule(ubd - lbd, trace.gap0 if trace.gap0 is not None else math.inf,
                                 config.budget_min, config.budget_max)
        res = solve_budgeted(store, pbc, budget, warm_start=y_hat)
        trace.budgeted_nodes += res.nodes_used
        mh = mu_hat(store, y_hat)
        accept = mh == res.mu_best or mh <= res.mu_best + config.eps_tol
        y_next = y_hat if accept else res.y_best
        new_lbd = max(lbd, res.best_bound)
        seen = _visited_cut(trace, y_next)
        if seen is not None:
            i, cut = seen
            return _fallback(trace, admissible, new_lbd, "revisit",
                             {"optimality_cut": i, "value": eval_cut(cut, y_next), "y": list(y_next)},
                             y_hat=y_hat, mu_hat_v=mh)
        return Decision(
            y_next, AGENT_ACCEPTED if accept else SOLVER_OVERRIDE, y_hat=y_hat, mu_hat=mh,
            mu_bar=res.mu_best, best_bound=res.best_bound, node_budget=budget,
            nodes_used=res.nodes_used,
        ), new_lbd

    return _run(inst, config, choose, mode, solver, admissible)


def oracle_solve(inst: ProblemInstance, solver: InstanceSolver | None = None,
                 admissible=ADMISSIBLE) -> tuple[tuple[int, ...], float]:
    """Minimum of ``Z(y)`` over every admissible ``y`` with a feasible subproblem."""
    solver = solver or InstanceSolver(inst)
    best_y, best_z = None, math.inf
    for y in admissible:
        _, sub = solver.solve(y)
        if sub is not None and sub.z_value < best_z:
            best_y, best_z = tuple(y), float(sub.z_value)
    if best_y is None:
        raise InfeasibleInstanceError(f"instance seed={inst.seed}: every admissible subproblem is infeasible")
    return best_y, best_z


def is_feasible_instance(inst: ProblemInstance, solver: InstanceSolver | None = None,
                         admissible=ADMISSIBLE) -> bool:
    solver = solver or InstanceSolver(inst)
    return any(solver.solve(y)[1] is not None for y in admissible)


def audit_agent_trace(trace: GbdTrace, config: DriverConfig, oracle_z: float | None = None) -> list[str]:
    """Check the acceptance rule, rejection witnesses and bound monotonicity.

    Returns a list of human-readable violations (empty when clean).
    """
    problems = []
    cuts = trace.cuts
    prev_lbd = -math.inf
    for rec in trace.records:
        if rec.lbd < prev_lbd:
            problems.append(f"k={rec.k}: LBD decreased {prev_lbd} -> {rec.lbd}")
        prev_lbd = rec.lbd
        if oracle_z is not None and rec.lbd > oracle_z + CUT_TOL:
            problems.append(f"k={rec.k}: LBD {rec.lbd} exceeds oracle {oracle_z}")
        d = rec.decision
        if d is None:
            continue
        # cuts that existed when the decision was made
        present = CutStore()
        for c in cuts.in_order():
            if c.origin_iteration <= rec.k:
                present.add(c)
        if not check_feasible(present, d.y_next):
            problems.append(f"k={rec.k}: iterate {d.y_next} violates a feasibility cut")
        if d.tag == AGENT_ACCEPTED:
            if d.y_next != d.y_hat:
                problems.append(f"k={rec.k}: accepted iterate differs from the prediction")
            mh = mu_hat(present, d.y_hat)
            if not (mh == d.mu_bar or mh <= d.mu_bar + config.eps_tol):
                problems.append(f"k={rec.k}: accepted with mu_hat {mh} > mu_bar {d.mu_bar}")
        elif d.tag == SOLVER_FALLBACK:
            w = d.witness or {}
            if d.reason == "cut_violation":
                cut = present.feasibility[w["feasibility_cut"]]
                if not eval_cut(cut, d.y_hat) > CUT_TOL:
                    problems.append(f"k={rec.k}: rejection witness does not cut off {d.y_hat}")
            elif d.reason == "revisit":
                cut = present.optimality[w["optimality_cut"]]
                if cut.origin_assignment != tuple(w["y"]) or cut.origin_iteration > rec.k:
                    problems.append(f"k={rec.k}: revisit witness is not an earlier cut at {w['y']}")
            elif d.reason == "pure_binary":
                if not FAMILY_PBC.violated_rows(d.y_hat):
                    problems.append(f"k={rec.k}: pure-binary rejection of an admissible assignment")
            elif d.reason == "reject":
                if not THRESHOLDS[0] < w.get("output", 0.0) < THRESHOLDS[1]:
                    problems.append(f"k={rec.k}: dead-zone rejection with output outside the dead zone")
            else:
                problems.append(f"k={rec.k}: unknown fallback reason {d.reason!r}")
        elif d.tag == SOLVER_OVERRIDE:
            # the certified incumbent beats the proposal on the present cuts
            mh = mu_hat(present, d.y_hat)
            if mh == d.mu_bar or mh <= d.mu_bar + config.eps_tol:
                problems.append(f"k={rec.k}: override of a proposal that passes the acceptance test")
        else:
            problems.append(f"k={rec.k}: missing decision tag")
    return problems
