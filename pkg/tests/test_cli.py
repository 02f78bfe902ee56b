import csv
import json
from pathlib import Path

import pytest

from benders_il import cli, experiment
from benders_il.cli import load_config, main
from benders_il.policy import load_params

FIXTURES = Path(__file__).parent / "fixtures"


def run(*argv):
    return main([str(a) for a in argv])


def test_gendata_counts_and_determinism(tmp_path):
    out = tmp_path / "d.jsonl"
    assert run("gendata", "--instances", 2, "--seed", 7, "--out", out) == 0
    manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
    lines = out.read_text().splitlines()
    assert len(lines) == sum(e["master_solves"] for e in manifest["instances"])
    assert len(manifest["instances"]) == 2 and manifest["schema"] == "v1"
    first = out.read_bytes()
    assert run("gendata", "--instances", 2, "--seed", 7, "--out", out) == 0
    assert out.read_bytes() == first


def test_gendata_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("gendata", "--instances", 0, "--out", tmp_path / "x")
    assert exc.value.code == 2


def test_train_and_defaults(tmp_path):
    model = tmp_path / "m.json"
    data = FIXTURES / "tiny.jsonl"
    assert run("train", "--data", data, "--stage", "both", "--epochs1", 2, "--epochs2", 1,
               "--seed", 1, "--out", model) == 0
    params = load_params(model)
    assert params.frozen and all(n.startswith("ecc") for n in params.frozen)
    assert params.meta["omega"] == 0.1
    with pytest.raises(SystemExit):
        run("train", "--data", data, "--stage", "3", "--out", model)
    assert run("train", "--data", tmp_path / "missing.jsonl", "--out", model) == 2
    assert run("train", "--data", data, "--stage", "2", "--out", model) == 2


def test_train_stage2_from_init(tmp_path):
    data = FIXTURES / "tiny.jsonl"
    s1, s2 = tmp_path / "s1.json", tmp_path / "s2.json"
    assert run("train", "--data", data, "--stage", "1", "--epochs1", 1, "--out", s1) == 0
    assert run("train", "--data", data, "--stage", "2", "--init", s1, "--epochs2", 1, "--out", s2) == 0
    a, b = load_params(s1), load_params(s2)
    for name in b.frozen:
        assert (a.arrays[name] == b.arrays[name]).all()


def test_evalpolicy_rows(tmp_path):
    out = tmp_path / "m.csv"
    model = FIXTURES / "tiny_model.json"
    assert run("evalpolicy", "--data", FIXTURES / "tiny.jsonl", "--model", f"a={model}",
               "--model", f"b={model}", "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["model"] for r in rows] == ["a", "b"]
    assert rows[0]["exact_match_den"] == "15" and rows[0]["feas_den"] == "7"
    assert run("evalpolicy", "--data", FIXTURES / "tiny.jsonl", "--model", f"tiny={model}", "--out", out) == 0
    assert out.read_bytes() == (FIXTURES / "tiny_metrics.csv").read_bytes()


def test_evalpolicy_schema_mismatch(tmp_path):
    bad = tmp_path / "bad.json"
    doc = json.loads((FIXTURES / "tiny_model.json").read_text())
    doc["schema"] = "v2"
    bad.write_text(json.dumps(doc))
    assert run("evalpolicy", "--data", FIXTURES / "tiny.jsonl", "--model", f"x={bad}", "--out", tmp_path / "o.csv") == 2


def test_solve_modes(tmp_path):
    o, c, a = tmp_path / "o.json", tmp_path / "c.json", tmp_path / "a.json"
    assert run("solve", "--mode", "oracle", "--seed", 42, "--out", o) == 0
    assert run("solve", "--mode", "classical", "--seed", 42, "--out", c) == 0
    zo = json.loads(o.read_text())["objective"]
    zc = json.loads(c.read_text())["objective"]
    assert abs(zo - zc) <= 1e-3
    assert run("solve", "--mode", "agent", "--seed", 42, "--model", FIXTURES / "tiny_model.json", "--out", a) == 0
    doc = json.loads(a.read_text())
    tags = {r["decision"]["tag"] for r in doc["records"] if r["decision"]}
    assert tags <= {"agent_accepted", "solver_override", "solver_fallback"} and tags
    assert run("solve", "--mode", "agent", "--seed", 42, "--out", a) == 2
    # combination model refused by the independent driver
    assert run("solve", "--mode", "agent-independent", "--seed", 42,
               "--model", FIXTURES / "tiny_model.json", "--out", a) == 2
    with pytest.raises(SystemExit):
        run("solve", "--mode", "quantum", "--seed", 42, "--out", a)


def test_solve_from_instance_file(tmp_path):
    inst = tmp_path / "i.json"
    inst.write_text(json.dumps({"seed": None, "gamma": [5, 6, 7, 8, 2], "U": 10, "rho": [1.5, 1.2]}))
    out = tmp_path / "t.json"
    assert run("solve", "--instance", inst, "--out", out) == 0
    assert json.loads(out.read_text())["converged"] is True


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nepochs1 = 1\nseed = 9\nomega=0.25\n")
    assert load_config(cfg) == {"epochs1": "1", "seed": "9", "omega": "0.25"}
    parser = cli.build_parser()
    args = cli._apply_config(parser, ["--config", str(cfg), "train", "--data", "d", "--out", "m", "--seed", "3"])
    assert args.epochs1 == 1 and args.omega == 0.25 and args.seed == 3
    cfg.write_text("epochz = 1\n")
    with pytest.raises(SystemExit):
        cli._apply_config(parser, ["--config", str(cfg), "train", "--data", "d", "--out", "m"])
    cfg.write_text("not a pair\n")
    with pytest.raises(SystemExit):
        main(["--config", str(cfg), "train", "--data", "d", "--out", "m"])


def test_config_supplies_required_flags(tmp_path):
    cfg = tmp_path / "c.cfg"
    out = tmp_path / "o.json"
    cfg.write_text(f"mode = oracle\nseed = 42\nout = {out}\n")
    assert main(["--config", str(cfg), "solve"]) == 0 and out.exists()


def test_experiment_resume_rebuilds_report_without_solving(tmp_path, monkeypatch):
    args = ["experiment", "--out-dir", tmp_path, "--n-train-instances", 3, "--n-test-instances", 2,
            "--epochs1", 2, "--epochs2", 1, "--train-fraction", 0.7]
    assert run(*args) == 0
    report = (tmp_path / "report.md").read_bytes()
    summary = (tmp_path / "summary.csv").read_bytes()
    (tmp_path / "report.md").unlink()
    (tmp_path / "summary.csv").unlink()

    def boom(*a, **k):
        raise AssertionError("recomputation during resume")

    for name in ("solve_classical", "solve_agent", "oracle_solve", "stage1_train", "stage2_finetune",
                 "generate_dataset", "screen_instances"):
        monkeypatch.setattr(experiment, name, boom)
    assert run(*args, "--resume") == 0
    assert (tmp_path / "report.md").read_bytes() == report
    assert (tmp_path / "summary.csv").read_bytes() == summary
    text = report.decode()
    assert "solution match" in text and "/2 |" in text


def test_experiment_resume_refuses_changed_config(tmp_path):
    base = ["experiment", "--out-dir", tmp_path, "--n-train-instances", 1, "--n-test-instances", 1,
            "--epochs1", 1, "--epochs2", 1, "--train-fraction", 1.0]
    assert run(*base) == 0
    assert run(*base[:-2], "--train-fraction", 0.5, "--resume") == 2
