import csv
import json
import warnings

import numpy as np
import pytest

from tasklab import cli
from tasklab.report import report
from tasklab.workflow import (OUTPUT_ROOT_ENV, TRIAL_COLUMNS, ConfigError, ExperimentConfig, evaluate_checkpoints,
                              load_trials, resolve_output_dir, run_workflow)

from tables import FIXED_BLACKBOX_FINAL


def small_config(**kw) -> ExperimentConfig:
    base = dict(
        name="small",
        grouper={"num_groups": 4},
        placer={"num_groups": 4, "groups_per_evaluation": 2, "aggregation_rounds": 2},
        distribution={"family": "nmt-like", "base_params": {"unroll_length": 2, "batch_size": 32},
                      "held_out_family": "mlp-chain"},
        protocol_class=0, trials=1, budget=6, master_seed=3,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_hash_stable_and_roundtrip(tmp_path):
    cfg = small_config()
    d = json.loads(cfg.to_json())
    reordered = dict(reversed(list(d.items())))
    assert ExperimentConfig.from_dict(reordered).config_hash == cfg.config_hash
    p = tmp_path / "c.json"
    p.write_text(json.dumps(reordered))
    assert ExperimentConfig.load(p) == cfg
    assert small_config(output_dir="elsewhere").config_hash == cfg.config_hash
    assert small_config(master_seed=4).config_hash != cfg.config_hash


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"spec_version": "2.0"})
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    for bad in (dict(schema_devices=["cpu:0", "gpu:0"]), dict(placer={"num_groups": 5}),
                dict(protocol_class=9), dict(schema_variant="recurrent"), dict(trials=0),
                dict(protocol_class=5, distribution={"family": "nmt-like"}), dict(reward_mode="sometimes"),
                dict(task_graph={"nodes": [], "roots": [], "edges": []})):
        with pytest.raises(ConfigError):
            small_config(**bad).validate()
    small_config(schema_devices=["cpu:0", "gpu:0", "gpu:1", "gpu:2", "gpu:3"]).validate()


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_output_dir(small_config(output_dir="runs/x")) == tmp_path / "runs/x"
    assert resolve_output_dir(small_config(), "/abs/y").as_posix() == "/abs/y"


def test_c0_smoke_and_rerun_identical(tmp_path):
    cfg = small_config()
    a = run_workflow(cfg, tmp_path / "a")
    b = run_workflow(cfg, tmp_path / "b")
    for name in ("summary.json", "results.csv", "trials/trial_000.csv", "trials/trial_000.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["record"].startswith("C_0(n=") and summary["config_hash"] == cfg.config_hash
    rows = read_csv(a / "results.csv")
    assert list(rows[0]) == list(TRIAL_COLUMNS)
    assert {r["config_hash"] for r in rows} == {cfg.config_hash}
    assert (a / "checkpoints/trial_000.json").exists()


def test_resume_matches_uninterrupted(tmp_path):
    cfg = small_config(protocol_class=1, trials=2)
    full = run_workflow(cfg, tmp_path / "full")
    part = tmp_path / "part"
    run_workflow(small_config(protocol_class=1, trials=2), part)
    (part / "trials/trial_001.json").unlink()
    (part / "summary.json").unlink()
    run_workflow(cfg, part)
    assert (part / "summary.json").read_bytes() == (full / "summary.json").read_bytes()
    with pytest.raises(ConfigError):
        run_workflow(small_config(protocol_class=1, trials=2, master_seed=9), part)


def test_evaluate_and_report(tmp_path):
    cfg = small_config(protocol_class=2, trials=2)
    exp = run_workflow(cfg, tmp_path / "exp")
    matrix, record, out = evaluate_checkpoints([exp])
    assert matrix.shape == (2, 2) and record.s == 4
    trials = load_trials(exp)
    summary = json.loads((exp / "summary.json").read_text())
    for i, t in enumerate(trials):
        assert f"{matrix[i, i]:.6f}" == summary["trials"][i]["improvement_greedy"]
    assert read_csv(out / "matrix.csv")[0].keys() >= {"model", "n", "graph_0", "graph_1"}

    (exp / "checkpoints/trial_001.json").unlink()
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        m2, r2, _ = evaluate_checkpoints([exp], out_dir=tmp_path / "ev2")
    assert np.isnan(m2[1]).all() and r2.s == 2

    rep = report(exp)
    curves = read_csv(rep / "curves.csv")
    assert len(curves) == len(read_csv(exp / "results.csv"))
    assert {(c["trial"], c["step"]) for c in curves} == {(r["trial"], r["step"]) for r in read_csv(exp / "results.csv")}
    assert (rep / "curves.png").stat().st_size > 0 and (rep / "improvements.png").stat().st_size > 0
    assert len(read_csv(rep / "summary_table.csv")) == 2


def test_report_refuses_mixed_hashes(tmp_path):
    exp = run_workflow(small_config(), tmp_path / "exp")
    other = run_workflow(small_config(master_seed=8), tmp_path / "other")
    (exp / "trials/trial_000.json").write_text((other / "trials/trial_000.json").read_text())
    with pytest.raises(ConfigError, match="mixes"):
        report(exp)


# ------------------------------------------------------------------ CLI

def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_classify_table(tmp_path, capsys):
    p = tmp_path / "finals.csv"
    p.write_text("trial,improvement,n\n" + "".join(f"{i},{v / 100:.2f},1000\n" for i, v in enumerate(FIXED_BLACKBOX_FINAL)))
    code, out, _ = run_cli(["classify", str(p), "--class", "0", "--threshold", "0.30"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "C_0(n=1000,s=10,f=0.80)"
    assert "mean 0.525000" in out


def test_cli_validate_errors(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(small_config(schema_devices=["cpu:0", "gpu:7"]).to_json())
    code, _, err = run_cli(["validate", str(p)], capsys)
    assert code == 1
    e = json.loads(err)
    assert e["error"] == "ConfigError" and e["command"] == "validate"
    p.write_text(small_config().to_json())
    code, out, _ = run_cli(["validate", str(p)], capsys)
    assert code == 0 and out.startswith("ok ")


def test_cli_usage_errors(capsys):
    for argv in (["frobnicate"], ["classify", "x.csv"], ["run"], []):
        with pytest.raises(SystemExit) as e:
            cli.main(argv)
        assert e.value.code == 2
    capsys.readouterr()


def test_cli_run_report_evaluate(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(small_config(protocol_class=1, trials=2).to_json())
    out_dir = tmp_path / "exp"
    code, out, _ = run_cli(["--seed", "5", "run", str(p), "--output", str(out_dir)], capsys)
    assert code == 0 and out.startswith("C_1(n=")
    assert json.loads((out_dir / "config.json").read_text())["config"]["master_seed"] == 5
    code, out, _ = run_cli(["report", str(out_dir)], capsys)
    assert code == 0 and (out_dir / "report/curves.csv").exists()
    code, out, _ = run_cli(["evaluate", str(out_dir), "--out", str(tmp_path / "ev")], capsys)
    assert code == 0 and out.startswith("C_4(n=") and ",s=4," in out
    code, out, _ = run_cli(["classify", str(out_dir / "results.csv"), "--class", "1", "--use", "best"], capsys)
    assert code == 0 and ",s=2," in out
    code, out, _ = run_cli(["classify", str(tmp_path / "ev/matrix.csv"), "--class", "4"], capsys)
    assert code == 0 and ",s=4," in out
    code, _, err = run_cli(["report", str(tmp_path / "nowhere")], capsys)
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"
