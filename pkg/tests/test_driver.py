import functools
import json
import math
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from benders_il.cuts import check_feasible
from benders_il.driver import (
    AGENT_ACCEPTED, SOLVER_FALLBACK, DriverConfig, InfeasibleInstanceError, InstanceSolver,
    audit_agent_trace, budget_schedule, is_feasible_instance, oracle_solve, read_trace,
    solve_agent, solve_classical, write_trace,
)
from benders_il.policy import COMBINATION, INDEPENDENT, default_descriptor, init_params, load_params
from benders_il.problem import ADMISSIBLE, FAMILY_PBC, sample_instance

FIXTURES = Path(__file__).parent / "fixtures"


@functools.lru_cache(maxsize=None)
def feasible_seeds(n, start=0):
    out, s = [], start
    while len(out) < n:
        if is_feasible_instance(sample_instance(s)):
            out.append(s)
        s += 1
    return tuple(out)


def constant_policy(index=None, head=COMBINATION, bias=None):
    n_out = 12 if head == COMBINATION else 5
    p = init_params(default_descriptor(n_out=n_out, head=head, hidden=8, dense=(8, 6)), 0)
    p.arrays["out.w"][:] = 0
    p.arrays["out.b"][:] = 0
    if index is not None:
        p.arrays["out.b"][index] = 10.0
    if bias is not None:
        p.arrays["out.b"][:] = bias
    return p


def test_budget_schedule_examples():
    assert budget_schedule(10.0, 10.0, 4, 64) == 4
    assert budget_schedule(0.0, 10.0, 4, 64) == 64
    assert budget_schedule(5.0, 10.0, 4, 64) == 34
    assert budget_schedule(math.inf, 10.0, 4, 64) == 4
    assert budget_schedule(3.0, math.inf, 4, 64) == 4
    assert budget_schedule(20.0, 10.0, 4, 64) == 4


@given(st.floats(0, 100), st.floats(1e-6, 100), st.integers(1, 20), st.integers(0, 50))
def test_budget_schedule_clamped(gap, gap0, bmin, extra):
    b = budget_schedule(gap, gap0, bmin, bmin + extra)
    assert bmin <= b <= bmin + extra


def test_config_validation():
    with pytest.raises(ValueError):
        DriverConfig(epsilon=0)
    with pytest.raises(ValueError):
        DriverConfig(budget_min=10, budget_max=4)


def _check_bounds(trace):
    ubds = [r.ubd for r in trace.records]
    lbds = [r.lbd for r in trace.records]
    assert all(b <= a for a, b in zip(ubds, ubds[1:]))
    assert all(b >= a for a, b in zip(lbds, lbds[1:]))
    assert len(trace.cuts) == trace.iterations
    assert trace.lbd <= trace.ubd + trace_config().epsilon


def trace_config():
    return DriverConfig()


def test_classical_matches_oracle():
    for seed in feasible_seeds(6):
        inst = sample_instance(seed)
        solver = InstanceSolver(inst)
        y, z = oracle_solve(inst, solver)
        assert y in ADMISSIBLE and solver.solve(y)[1] is not None
        trace = solve_classical(inst, solver=solver)
        assert trace.converged and abs(trace.objective - z) <= 1e-3
        assert z <= trace.ubd + 1e-3
        ys = [r.y for r in trace.records]
        assert len(set(ys)) == len(ys)
        assert len(trace.samples) == trace.master_solves == trace.exact_master_solves
        _check_bounds(trace)


def test_infeasible_instance():
    seed = next(s for s in range(50) if not is_feasible_instance(sample_instance(s)))
    inst = sample_instance(seed)
    with pytest.raises(InfeasibleInstanceError):
        oracle_solve(inst)
    trace = solve_classical(inst)
    assert trace.status == "infeasible" and not trace.converged and trace.y_star is None


def test_iteration_cap():
    inst = sample_instance(feasible_seeds(1)[0])
    trace = solve_classical(inst, DriverConfig(max_iterations=1))
    assert not trace.converged and trace.status == "iteration_limit" and trace.iterations == 1


def test_agent_with_trained_fixture_policy_is_audited():
    policy = load_params(FIXTURES / "tiny_model.json", COMBINATION)
    cfg = DriverConfig()
    for seed in feasible_seeds(4, 100):
        inst = sample_instance(seed)
        solver = InstanceSolver(inst)
        _, z = oracle_solve(inst, solver)
        trace = solve_agent(inst, policy, cfg, solver=solver)
        assert trace.converged and abs(trace.objective - z) <= 1e-3
        assert audit_agent_trace(trace, cfg, z) == []
        _check_bounds(trace)
        counts = trace.tag_counts()
        assert sum(counts.values()) == trace.master_solves
        for r in trace.records:
            assert FAMILY_PBC.is_satisfied(r.y)


def test_adversarial_policy_degrades_to_classical():
    # y0 infeasible, so its feasibility cut rejects a policy that always proposes y0
    seed = next(s for s in feasible_seeds(40)
                if InstanceSolver(sample_instance(s)).solve(ADMISSIBLE[0])[1] is None)
    inst = sample_instance(seed)
    solver = InstanceSolver(inst)
    classical = solve_classical(inst, solver=solver)
    trace = solve_agent(inst, constant_policy(0), solver=solver)
    assert trace.converged and [r.y for r in trace.records] == [r.y for r in classical.records]
    assert trace.objective == classical.objective
    for r in trace.records:
        if r.decision is not None:
            assert r.decision.tag == SOLVER_FALLBACK and r.decision.reason == "cut_violation"
            assert r.decision.witness["value"] > 0
    assert audit_agent_trace(trace, DriverConfig()) == []


def test_rejected_independent_predictions_never_reach_subproblem():
    inst = sample_instance(feasible_seeds(1, 200)[0])
    solver = InstanceSolver(inst)
    # sigmoid(0) = 0.5 sits in the dead zone, so every proposal is rejected
    trace = solve_agent(inst, constant_policy(head=INDEPENDENT), solver=solver)
    classical = solve_classical(inst, solver=solver)
    assert trace.converged
    for r in trace.records:
        if r.decision is not None:
            assert r.decision.reason == "reject" and r.decision.y_hat is None
    assert [r.y for r in trace.records] == [r.y for r in classical.records]


def test_independent_pure_binary_rejection():
    inst = sample_instance(feasible_seeds(1, 300)[0])
    # confident (1, 1, 0, 0, 0) breaks y1 + y2 = 1
    trace = solve_agent(inst, constant_policy(head=INDEPENDENT, bias=[6, 6, -6, -6, -6]))
    reasons = {r.decision.reason for r in trace.records if r.decision is not None}
    assert reasons == {"pure_binary"} and trace.converged
    assert audit_agent_trace(trace, DriverConfig()) == []


def test_always_accepting_policy():
    # a policy that proposes the exact optimum is accepted whenever cut-feasible
    inst = sample_instance(feasible_seeds(1, 400)[0])
    trace = solve_agent(inst, constant_policy(5))
    for r in trace.records:
        d = r.decision
        if d is not None and d.tag == AGENT_ACCEPTED:
            assert d.y_next == d.y_hat == ADMISSIBLE[5]
    assert audit_agent_trace(trace, DriverConfig(), oracle_solve(inst)[1]) == []


def test_trace_round_trip(tmp_path):
    # first assignment infeasible, so the first upper bound is still infinite
    seed = next(s for s in feasible_seeds(40)
                if InstanceSolver(sample_instance(s)).solve(ADMISSIBLE[0])[1] is None)
    trace = solve_classical(sample_instance(seed))
    path = tmp_path / "t.json"
    write_trace(trace, path)
    doc = read_trace(path)
    assert doc["records"][0]["ubd"] == "inf"
    assert doc["records"][0]["decision"]["y_next"] == list(trace.records[0].decision.y_next)
    assert doc["iterations"] == trace.iterations and len(doc["cuts"]) == trace.iterations
    assert {"k", "y", "feasible", "z", "slack_sum", "cut_kind", "ubd", "lbd", "decision"} <= set(doc["records"][0])
    path.write_text(json.dumps({**doc, "schema": "v9"}))
    with pytest.raises(ValueError):
        read_trace(path)


def test_iterates_satisfy_cuts_present_when_chosen():
    policy = load_params(FIXTURES / "tiny_model.json")
    inst = sample_instance(feasible_seeds(1, 500)[0])
    trace = solve_agent(inst, policy)
    for r in trace.records:
        if r.decision is None:
            continue
        from benders_il.cuts import CutStore
        present = CutStore()
        for c in trace.cuts.in_order():
            if c.origin_iteration <= r.k:
                present.add(c)
        assert check_feasible(present, r.decision.y_next)
