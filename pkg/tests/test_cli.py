from __future__ import annotations

import json

import yaml

from jcas_mobsim.cli import main


def test_run_preset_writes_outputs(tmp_path, capsys):
    assert main(["run", "--preset", "tc1", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("tc1: seed=")
    for name in ("trace.jsonl", "metrics.csv"):
        assert (tmp_path / name).is_file()
    first = json.loads((tmp_path / "trace.jsonl").read_text().splitlines()[0])
    assert set(first) == {"t", "node", "kind", "payload"}


def test_seed_and_duration_overrides(tmp_path, capsys):
    assert main(["run", "--preset", "tc5", "--seed", "9", "--duration", "0.2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "seed=9" in out
    last = json.loads((tmp_path / "trace.jsonl").read_text().splitlines()[-1])
    assert last["t"] <= 0.2


def test_parallel_runs_match_serial(tmp_path, capsys):
    par, ser = tmp_path / "par", tmp_path / "ser"
    args = ["run", "--preset", "tc1", "--preset", "tc5"]
    assert main(args + ["--jobs", "2", "--out", str(par)]) == 0
    assert main(args + ["--out", str(ser)]) == 0
    for name in ("tc1", "tc5"):
        assert (par / name / "trace.jsonl").read_bytes() == (ser / name / "trace.jsonl").read_bytes()


def test_preset_prints_yaml(capsys, tmp_path):
    assert main(["preset", "tc3"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert doc["name"] == "tc3"
    dest = tmp_path / "tc3.yaml"
    assert main(["preset", "tc3", "--out", str(dest)]) == 0
    assert main(["run", "--scenario", str(dest), "--duration", "0.3", "--out", str(tmp_path / "o")]) == 0


def test_bad_scenario_returns_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nseed: -1\nduration: 1\nnodes: []\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_trace_check_command(tmp_path, capsys):
    main(["run", "--preset", "tc2", "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["trace-check", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS sync_bounds" in out and "FAIL" not in out
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    (tmp_path / "trace.jsonl").write_text("\n".join(reversed(lines)) + "\n")
    assert main(["trace-check", str(tmp_path)]) == 1
    assert main(["trace-check", str(tmp_path / "nowhere")]) == 2


def test_traceability_command(capsys, tmp_path):
    assert main(["traceability", "--tests", "tests"]) == 0
    out = capsys.readouterr().out
    assert "R26" in out and "MISSING" not in out
    (tmp_path / "tests").mkdir()
    assert main(["traceability", "--tests", str(tmp_path / "tests")]) == 1
    assert "uncovered:" in capsys.readouterr().out
