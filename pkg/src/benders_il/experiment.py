"""End-to-end experiment: data, training, evaluation, solve suite, report.

Every stage writes its artifacts under one output directory.  With
``resume=True`` a stage whose artifacts already exist is skipped, so the
report can be rebuilt from stored files alone.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .driver import (
    AGENT, AGENT_ACCEPTED, AGENT_INDEPENDENT, CLASSICAL, SOLVER_FALLBACK, SOLVER_OVERRIDE,
    DriverConfig, InstanceSolver, is_feasible_instance, oracle_solve, parse_float,
    read_trace, solve_agent, solve_classical, write_trace,
)
from .graph import SCHEMA, SchemaError, read_jsonl, write_jsonl
from .policy import COMBINATION, INDEPENDENT, load_params, save_params
from .problem import sample_instance
from .training import (
    TrainConfig, evaluate_policy, majority_rate, metrics_row, split_by_instance,
    stage1_train, stage2_finetune, write_metrics_csv,
)

log = logging.getLogger(__name__)

SOLUTION_TOL = 1e-3
MODES = (CLASSICAL, AGENT, AGENT_INDEPENDENT)


@dataclass
class ExperimentConfig:
    n_train_instances: int = 50
    n_test_instances: int = 30
    train_seed: int = 0
    test_seed: int = 1_000_000
    train_fraction: float = 0.95
    seed: int = 0
    omega: float = 0.1
    lr1: float = 1e-3
    lr2: float = 1e-4
    batch: int = 8
    epochs1: int = 20
    epochs2: int = 20
    epsilon: float = 1e-3
    eps_tol: float = 1e-6
    budget_min: int = 4
    budget_max: int = 64
    max_iterations: int = 100

    def __post_init__(self):
        if self.n_train_instances < 1 or self.n_test_instances < 1:
            raise ValueError("instance counts must be >= 1")

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr1=self.lr1, batch1=self.batch, epochs1=self.epochs1, lr2=self.lr2,
                           batch2=self.batch, epochs2=self.epochs2, omega=self.omega, seed=self.seed,
                           train_fraction=self.train_fraction)

    def driver_config(self) -> DriverConfig:
        return DriverConfig(epsilon=self.epsilon, eps_tol=self.eps_tol, budget_min=self.budget_min,
                            budget_max=self.budget_max, max_iterations=self.max_iterations)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def generate_dataset(n_instances: int, first_seed: int, config: DriverConfig | None = None):
    """Classical GBD over ``n_instances`` feasible instances from consecutive seeds.

    Returns ``(samples, manifest)``; infeasible draws are skipped and listed.
    """
    if n_instances < 1:
        raise ValueError("need at least one instance")
    config = config or DriverConfig()
    samples, entries, skipped = [], [], []
    seed = first_seed
    while len(entries) < n_instances:
        inst = sample_instance(seed)
        solver = InstanceSolver(inst)
        if not is_feasible_instance(inst, solver):
            skipped.append(seed)
            seed += 1
            continue
        trace = solve_classical(inst, config, solver=solver)
        samples.extend(trace.samples)
        entries.append({
            "seed": seed, "samples": len(trace.samples), "iterations": trace.iterations,
            "master_solves": trace.master_solves, "converged": trace.converged,
            "objective": trace.objective,
        })
        seed += 1
    manifest = {
        "schema": SCHEMA, "kind": "manifest", "first_seed": first_seed,
        "instances": entries, "skipped_infeasible": skipped,
        "total_samples": len(samples),
    }
    return samples, manifest


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def oracle_doc(inst, y, z) -> dict:
    return {"schema": SCHEMA, "kind": "trace", "mode": "oracle", "instance": inst.to_dict(),
            "y_star": list(y), "objective": z, "converged": True, "status": "converged"}


def solve_suite(instances, policies: dict, config: DriverConfig, trace_dir: Path,
                resume: bool = False, solvers: dict | None = None):
    """Write classical, agent, independent and oracle traces per instance.

    Returns the classical-run samples, which form a held-out dataset.
    """
    trace_dir.mkdir(parents=True, exist_ok=True)
    solvers = solvers or {}
    suite_samples = []
    for inst in instances:
        paths = {m: trace_dir / f"{inst.seed}_{m}.json" for m in MODES + ("oracle",)}
        if resume and all(p.exists() for p in paths.values()):
            continue
        solver = solvers.get(inst.seed) or InstanceSolver(inst)
        y, z = oracle_solve(inst, solver)
        write_json(paths["oracle"], oracle_doc(inst, y, z))
        classical = solve_classical(inst, config, solver=solver)
        write_trace(classical, paths[CLASSICAL])
        suite_samples.extend(classical.samples)
        write_trace(solve_agent(inst, policies[COMBINATION], config, solver=solver), paths[AGENT])
        write_trace(solve_agent(inst, policies[INDEPENDENT], config, solver=solver), paths[AGENT_INDEPENDENT])
    return suite_samples


def screen_instances(first_seed: int, count: int) -> list[InstanceSolver]:
    """Solvers for ``count`` feasible instances from consecutive seeds.

    The returned solvers keep the screening solves cached.
    """
    out, seed = [], first_seed
    while len(out) < count:
        solver = InstanceSolver(sample_instance(seed))
        if is_feasible_instance(solver.inst, solver):
            out.append(solver)
        seed += 1
    return out


def summarize_traces(trace_dir: Path, seeds, epsilon: float) -> list[dict]:
    """One summary row per driver mode, computed from stored trace files."""
    oracle = {s: read_trace(trace_dir / f"{s}_oracle.json") for s in seeds}
    rows = []
    classical_exact = None
    for mode in MODES:
        its = exact = nodes = 0
        tags = {AGENT_ACCEPTED: 0, SOLVER_OVERRIDE: 0, SOLVER_FALLBACK: 0}
        match = 0
        for s in seeds:
            t = read_trace(trace_dir / f"{s}_{mode}.json")
            its += t["iterations"]
            exact += t["exact_master_solves"]
            nodes += t["budgeted_nodes"]
            for k, v in t["tag_counts"].items():
                tags[k] += v
            ubd, lbd = parse_float(t["records"][-1]["ubd"]), parse_float(t["records"][-1]["lbd"])
            ok = (t["converged"] and ubd - lbd <= epsilon
                  and abs(parse_float(t["objective"]) - parse_float(oracle[s]["objective"])) <= SOLUTION_TOL)
            match += bool(ok)
        if mode == CLASSICAL:
            classical_exact = exact
        decisions = sum(tags.values())
        n = len(seeds)
        row = {
            "mode": mode,
            "instances": n,
            "avg_iterations": f"{its / n:.4f}",
            "exact_master_solves": exact,
            "exact_solves_avoided": (classical_exact - exact) if classical_exact is not None else 0,
            "budgeted_nodes": nodes,
            "decisions": decisions,
        }
        for k in (AGENT_ACCEPTED, SOLVER_OVERRIDE, SOLVER_FALLBACK):
            row[k] = tags[k]
            row[f"{k}_frac"] = f"{tags[k] / decisions:.4f}" if decisions and mode != CLASSICAL else "n/a"
        row["solution_match"] = match
        rows.append(row)
    return rows


def write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_report(cfg: ExperimentConfig, metrics: dict[str, list[dict]], summary: list[dict],
                  majority: dict[str, float]) -> str:
    lines = ["# Agent-based GBD experiment", ""]
    lines.append(f"Training instances: {cfg.n_train_instances} (seeds from {cfg.train_seed}); "
                 f"test instances: {cfg.n_test_instances} (seeds from {cfg.test_seed}).")
    lines.append("")
    for name, rows in metrics.items():
        lines.append(f"## Policy metrics ({name})")
        lines.append("")
        lines.append(f"Majority-class rate: {majority[name]:.4f}")
        lines.append("")
        lines.append("| model | exact match | feasibility |")
        lines.append("|---|---|---|")
        for r in rows:
            feas = "n/a" if r["feas_den"] in (0, "0") else f"{r['feas_num']}/{r['feas_den']} ({r['feasibility']})"
            lines.append(f"| {r['model']} | {r['exact_match_num']}/{r['exact_match_den']} ({r['exact_match']}) | {feas} |")
        lines.append("")
    lines.append("## Solve suite")
    lines.append("")
    lines.append("| mode | avg iterations | exact master solves | avoided | budgeted nodes "
                 "| agent-accepted | solver-override | solver-fallback | solution match |")
    lines.append("|---|---|---|---|---|---|---|---|---|")
    for r in summary:
        def cell(k):
            return f"{r[k]} ({r[k + '_frac']})" if r[k + "_frac"] != "n/a" else "n/a"
        lines.append(
            f"| {r['mode']} | {r['avg_iterations']} | {r['exact_master_solves']} | {r['exact_solves_avoided']} "
            f"| {r['budgeted_nodes']} | {cell(AGENT_ACCEPTED)} | {cell(SOLVER_OVERRIDE)} "
            f"| {cell(SOLVER_FALLBACK)} | {r['solution_match']}/{r['instances']} |"
        )
    lines.append("")
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig, out_dir, resume: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dcfg = cfg.driver_config()
    tcfg = cfg.train_config()

    cfg_path = out / "config.json"
    cfg_doc = {"schema": SCHEMA, "kind": "experiment_config", **asdict(cfg)}
    if resume and cfg_path.exists():
        stored = json.loads(cfg_path.read_text(encoding="utf-8"))
        if stored != json.loads(json.dumps(cfg_doc)):
            raise SchemaError(f"{cfg_path}: stored configuration differs; refusing to resume")
    write_json(cfg_path, cfg_doc)

    data_path, manifest_path = out / "train.jsonl", out / "train_manifest.json"
    if not (resume and data_path.exists() and manifest_path.exists()):
        log.info("generating expert data on %d instances", cfg.n_train_instances)
        samples, manifest = generate_dataset(cfg.n_train_instances, cfg.train_seed, dcfg)
        write_jsonl(data_path, samples)
        write_json(manifest_path, manifest)
    samples = read_jsonl(data_path)
    train, held = split_by_instance(samples, cfg.train_fraction, cfg.seed)

    model_paths = {
        "stage1": out / "model_stage1.json",
        "proposed": out / "model_proposed.json",
        "independent": out / "model_independent.json",
    }
    if not (resume and all(p.exists() for p in model_paths.values())):
        log.info("training on %d samples", len(train))
        p1 = stage1_train(train, tcfg)
        save_params(p1, model_paths["stage1"])
        save_params(stage2_finetune(p1, train, tcfg), model_paths["proposed"])
        save_params(stage1_train(train, tcfg, head=INDEPENDENT), model_paths["independent"])
    models = {
        "proposed": load_params(model_paths["proposed"], COMBINATION),
        "stage1": load_params(model_paths["stage1"], COMBINATION),
        "independent": load_params(model_paths["independent"], INDEPENDENT),
    }

    seeds_path = out / "test_instances.json"
    solvers = {}
    if resume and seeds_path.exists():
        instances = [sample_instance(s) for s in json.loads(seeds_path.read_text(encoding="utf-8"))["seeds"]]
    else:
        screened = screen_instances(cfg.test_seed, cfg.n_test_instances)
        instances = [sv.inst for sv in screened]
        solvers = {sv.inst.seed: sv for sv in screened}
        write_json(seeds_path, {"schema": SCHEMA, "kind": "instances", "seeds": [i.seed for i in instances]})
    trace_dir = out / "traces"
    suite_path = out / "suite.jsonl"
    suite_samples = solve_suite(
        instances, {COMBINATION: models["proposed"], INDEPENDENT: models["independent"]},
        dcfg, trace_dir, resume=resume and suite_path.exists(), solvers=solvers,
    )
    if not (resume and suite_path.exists()):
        write_jsonl(suite_path, suite_samples)
    suite_samples = read_jsonl(suite_path)

    datasets = {"held-out split": held, "test suite": suite_samples}
    metric_files = {"held-out split": out / "metrics_split.csv", "test suite": out / "metrics_suite.csv"}
    metrics, majority = {}, {}
    for name, data in datasets.items():
        path = metric_files[name]
        if not (resume and path.exists()):
            rows = [metrics_row(m, evaluate_policy(models[m], data)) for m in ("proposed", "stage1", "independent")]
            write_metrics_csv(path, rows)
        metrics[name] = read_rows_csv(path)
        majority[name] = majority_rate(data) if data else math.nan

    summary = summarize_traces(trace_dir, [i.seed for i in instances], cfg.epsilon)
    write_rows_csv(out / "summary.csv", summary)
    report = render_report(cfg, metrics, summary, majority)
    (out / "report.md").write_text(report, encoding="utf-8")
    return {"metrics": metrics, "summary": summary, "majority": majority, "out_dir": str(out)}
