import json
from pathlib import Path

import pytest

from alleletree.cli import OUT_ENV, main


def run(tmp_path, name, *argv, threads=1):
    out = tmp_path / name
    code = main([*argv, "--out", str(out), "--threads", str(threads), "-q"])
    return code, out


def outputs(out: Path) -> dict:
    doc = json.loads((out / "manifest.json").read_text())
    return {name: (out / name).read_bytes() for name in doc["outputs"]}


SIM = ("simulate", "--base", "binary", "--p", "0.5", "--ancestors", "1", "--replicates", "3", "--seed", "7")


def test_simulate_deterministic(tmp_path):
    c1, a = run(tmp_path, "a", *SIM)
    c2, b = run(tmp_path, "b", *SIM, threads=8)
    assert c1 == c2 == 0
    assert outputs(a) == outputs(b)
    assert set(outputs(a)) == {"trees.csv", "census.csv"}
    text = (a / "trees.csv").read_text()
    assert text.startswith("# schema=1")
    assert "replicate,path,size,degree" in text


def test_simulate_walk_and_json(tmp_path):
    code, out = run(tmp_path, "w", *SIM[:-2], "--seed", "1", "--construction", "walk", "--format", "json", "--trace")
    assert code == 0
    doc = json.loads((out / "trees.json").read_text())
    assert doc["schema"] == 1 and len(doc["trees"]) == 3
    assert (out / "walk_trace.csv").read_text().splitlines()[1] == "step,position,mutant_mark"


def test_replay_reproduces(tmp_path):
    _, a = run(tmp_path, "a", *SIM)
    code = main(["replay", str(a / "manifest.json"), "--out", str(tmp_path / "r"), "--threads", "8"])
    assert code == 0
    assert outputs(a) == outputs(tmp_path / "r")


def test_empty_law_file_exit_2(tmp_path):
    law = tmp_path / "law.yaml"
    law.write_text("")
    code, _ = run(tmp_path, "e", "simulate", "--law", str(law))
    assert code == 2


def test_config_error_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("ancestors: 1\nreplicates: -3\n")
    code, _ = run(tmp_path, "e", "simulate", "--config", str(cfg), "--p", "0.5")
    assert code == 2
    assert "cfg.yaml:2" in capsys.readouterr().err


def test_cap_exit_3(tmp_path):
    code, out = run(tmp_path, "cap", "simulate", "--p", "0", "--ancestors", "200", "--max-individuals", "100")
    assert code == 3
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["status"] == "truncated" and doc["truncated_replicates"] == [0]


def test_exact_with_oracle(tmp_path):
    code, out = run(tmp_path, "x", "exact", "--p", "1/2", "--n-max", "8", "--enumerate")
    assert code == 0
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["oracle_max_abs_diff"] <= 1e-12


def test_exact_rational_prints_fractions(tmp_path):
    code, out = run(tmp_path, "x", "exact", "--p", "1/2", "--n-max", "4", "--rational")
    assert code == 0
    assert "1,0,1/2" in (out / "joint_law.csv").read_text().splitlines()


def test_exact_cap_below_ancestors(tmp_path, capsys):
    code, out = run(tmp_path, "x", "exact", "--p", "1/2", "--ancestors", "3", "--n-max", "2")
    assert code == 0
    assert "warning" in capsys.readouterr().err
    assert (out / "joint_law.csv").read_text().splitlines()[1:] == ["n,l,probability"]


def test_csbp_single_row(tmp_path):
    code, out = run(tmp_path, "c", "csbp", "--depth", "0", "--root", "fixed:1")
    assert code == 0
    rows = (out / "csbp_tree.csv").read_text().splitlines()[2:]
    assert rows == ["0,/,1.0"]


@pytest.mark.parametrize("eps", ["0", "-1e-3"])
def test_csbp_bad_epsilon(tmp_path, eps):
    code, _ = run(tmp_path, "c", "csbp", f"--epsilon={eps}")
    assert code == 2


def test_csbp_subordinator_deterministic(tmp_path):
    argv = ("csbp", "--method", "subordinator", "--root", "tau:1", "--replicates", "4", "--seed", "3")
    _, a = run(tmp_path, "a", *argv)
    _, b = run(tmp_path, "b", *argv, threads=8)
    assert outputs(a) == outputs(b)


def test_unknown_suite_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["verify", "nonsense"])
    assert err.value.code == 2
    assert "csbp-equiv" in capsys.readouterr().err


def test_dry_run(tmp_path, capsys):
    code = main(["verify", "all", "--dry-run", "--out", str(tmp_path)])
    assert code == 0
    text = capsys.readouterr().out
    assert "tail" in text and "est." in text
    assert not (tmp_path / "report.json").exists()


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["exact", "--p", "1/2", "--n-max", "3", "-q"]) == 0
    assert (tmp_path / "env" / "joint_law.csv").exists()


def test_verify_small_suite_writes_report(tmp_path):
    cfg = tmp_path / "v.yaml"
    cfg.write_text("n: 64\nn_list: [32, 64]\nreplicates: 3000\ncollapse_n: 64\n")
    code, out = run(tmp_path, "v", "verify", "root", "--config", str(cfg))
    doc = json.loads((out / "report.json").read_text())
    assert doc["environment"]["python"]
    assert [r["name"] for r in doc["reports"]][-1] == "root-trend"
    assert code in (0, 1)
    assert code == (1 if any(r["passed"] is False for r in doc["reports"]) else 0)
