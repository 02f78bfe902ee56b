"""Command-line entry point.

Subcommands: ``gendata``, ``train``, ``evalpolicy``, ``solve`` and
``experiment``.  ``--config FILE`` reads ``key = value`` lines that act as
defaults for the chosen subcommand; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .driver import (
    AGENT, AGENT_INDEPENDENT, CLASSICAL, DriverConfig, InfeasibleInstanceError,
    oracle_solve, solve_agent, solve_classical, write_trace,
)
from .experiment import ExperimentConfig, generate_dataset, oracle_doc, run_experiment, write_json
from .graph import SchemaError, read_jsonl, write_jsonl
from .policy import COMBINATION, INDEPENDENT, load_params, save_params
from .problem import ProblemInstance, sample_instance
from .training import (
    TrainConfig, evaluate_policy, metrics_row, stage1_train, stage2_finetune, write_metrics_csv,
)

log = logging.getLogger("benders_il")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _add_driver_flags(p):
    d = DriverConfig()
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--eps-tol", type=float, default=d.eps_tol)
    p.add_argument("--budget-min", type=_positive_int, default=d.budget_min)
    p.add_argument("--budget-max", type=_positive_int, default=d.budget_max)
    p.add_argument("--max-iterations", type=_positive_int, default=d.max_iterations)


def _driver_config(args) -> DriverConfig:
    return DriverConfig(epsilon=args.epsilon, eps_tol=args.eps_tol, budget_min=args.budget_min,
                        budget_max=args.budget_max, max_iterations=args.max_iterations)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="benders-il", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file supplying defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gendata", help="expert data from classical GBD runs")
    g.add_argument("--instances", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0, help="first instance seed")
    g.add_argument("--out", required=True, help="JSONL dataset path")
    g.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    _add_driver_flags(g)

    t = sub.add_parser("train", help="two-stage policy training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", choices=("1", "2", "both"), default="both")
    t.add_argument("--head", choices=(COMBINATION, INDEPENDENT), default=COMBINATION)
    t.add_argument("--init", help="stage-1 model to fine-tune (required for --stage 2)")
    tc = TrainConfig()
    t.add_argument("--omega", type=float, default=tc.omega)
    t.add_argument("--seed", type=int, default=tc.seed)
    t.add_argument("--lr1", type=float, default=tc.lr1)
    t.add_argument("--lr2", type=float, default=tc.lr2)
    t.add_argument("--batch", type=_positive_int, default=tc.batch1)
    t.add_argument("--epochs1", type=_positive_int, default=tc.epochs1)
    t.add_argument("--epochs2", type=_positive_int, default=tc.epochs2)

    e = sub.add_parser("evalpolicy", help="exact-match and feasibility metrics")
    e.add_argument("--data", required=True)
    e.add_argument("--model", action="append", required=True, metavar="NAME=PATH",
                   help="repeatable; one CSV row per model")
    e.add_argument("--out", required=True, help="CSV path")

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--mode", choices=(CLASSICAL, AGENT, AGENT_INDEPENDENT, "oracle"), default=CLASSICAL)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--seed", type=int, default=None, help="instance seed")
    src.add_argument("--instance", help="instance JSON file {seed, gamma, U, rho}")
    s.add_argument("--model")
    s.add_argument("--out", required=True, help="trace JSON path")
    _add_driver_flags(s)

    x = sub.add_parser("experiment", help="end-to-end run with report")
    defaults = ExperimentConfig()
    for name in ExperimentConfig.field_names():
        val = getattr(defaults, name)
        kind = _positive_int if name.startswith("n_") else type(val)
        x.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=val)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--resume", action="store_true", help="reuse stored artifacts")
    return parser


def _apply_config(parser, argv):
    """Pre-parse ``--config`` so its values become subcommand defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known_args, rest = pre.parse_known_args(argv)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((t for t in rest if t in sub_action.choices), None)
    if not known_args.config or command is None:
        return parser.parse_args(argv)
    cfg = load_config(known_args.config)
    subparser = sub_action.choices[command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        parser.error(f"config {known_args.config}: unknown keys for {command}: {', '.join(unknown)}")
    # argparse runs ``type`` on string defaults, so config values get validated too
    for a in subparser._actions:
        if a.dest in cfg:
            a.default = cfg[a.dest]
            a.required = False
    return parser.parse_args(argv)


def cmd_gendata(args) -> int:
    samples, manifest = generate_dataset(args.instances, args.seed, _driver_config(args))
    write_jsonl(args.out, samples)
    write_json(args.manifest or f"{args.out}.manifest.json", manifest)
    log.info("wrote %d samples from %d instances to %s", len(samples), args.instances, args.out)
    return 0


def _read_dataset(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return read_jsonl(path)


def cmd_train(args) -> int:
    samples = _read_dataset(args.data)
    if not samples:
        raise ValueError(f"{args.data}: empty dataset")
    cfg = TrainConfig(lr1=args.lr1, batch1=args.batch, epochs1=args.epochs1, lr2=args.lr2,
                      batch2=args.batch, epochs2=args.epochs2, omega=args.omega, seed=args.seed)
    if args.head == INDEPENDENT and args.stage != "1":
        raise ValueError("the independent head is trained with --stage 1 only")
    if args.stage == "2":
        if not args.init:
            raise ValueError("--stage 2 needs --init <stage-1 model>")
        params = stage2_finetune(load_params(args.init, COMBINATION), samples, cfg)
    else:
        params = stage1_train(samples, cfg, head=args.head)
        if args.stage == "both":
            params = stage2_finetune(params, samples, cfg)
    save_params(params, args.out)
    return 0


def cmd_evalpolicy(args) -> int:
    samples = _read_dataset(args.data)
    rows = []
    for spec in args.model:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        rows.append(metrics_row(name, evaluate_policy(load_params(path), samples)))
    write_metrics_csv(args.out, rows)
    return 0


def _instance(args) -> ProblemInstance:
    if args.instance:
        return ProblemInstance.from_dict(json.loads(Path(args.instance).read_text(encoding="utf-8")))
    return sample_instance(args.seed if args.seed is not None else 0)


def cmd_solve(args) -> int:
    inst = _instance(args)
    config = _driver_config(args)
    if args.mode == "oracle":
        y, z = oracle_solve(inst)
        write_json(args.out, oracle_doc(inst, y, z))
        return 0
    if args.mode == CLASSICAL:
        trace = solve_classical(inst, config, collect_samples=False)
    else:
        if not args.model:
            raise ValueError(f"--mode {args.mode} needs --model")
        head = COMBINATION if args.mode == AGENT else INDEPENDENT
        trace = solve_agent(inst, load_params(args.model, head), config)
    write_trace(trace, args.out)
    return 0 if trace.converged else 3


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig(**{n: getattr(args, n) for n in ExperimentConfig.field_names()})
    result = run_experiment(cfg, args.out_dir, resume=args.resume)
    log.info("report written to %s", Path(result["out_dir"]) / "report.md")
    return 0


COMMANDS = {
    "gendata": cmd_gendata,
    "train": cmd_train,
    "evalpolicy": cmd_evalpolicy,
    "solve": cmd_solve,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        parser.error(str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, SchemaError, InfeasibleInstanceError) as exc:
        print(f"benders-il {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
