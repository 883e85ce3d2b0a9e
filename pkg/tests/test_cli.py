import csv
import json
import os

import pytest

from nlsteklov.cli import main
from nlsteklov.config import ConfigError, load_config, parse_config

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

MINIMAL = """
[domain]
curve = circle

[weight]
expr = one

[mesh]
solve_h = 0.05
symmetry = 8

[run]
steps = spectrum
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_spectrum_run(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, MINIMAL), "--out", str(out)]) == 0
    with open(out / "spectrum.csv") as fh:
        rows = list(csv.reader(fh))
    vals = [float(r[1]) for r in rows[1:]]
    assert abs(vals[0]) < 1e-10
    assert vals[1] == pytest.approx(1.0, rel=0.02)
    man = json.loads((out / "manifest.json").read_text())
    assert man["steps"] == {"spectrum": "ok"}
    assert set(man["outputs"]) == {"spectrum.csv", "spectrum.json", "spectrum.svg"}


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"line 10: \[mesh\] unknown key"):
        parse_config(MINIMAL.replace("symmetry = 8", "symetry = 8"))


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError, match=r"line 2: unknown section \[domian\]"):
        parse_config(MINIMAL.replace("[domain]", "[domian]"))


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 9"):
        parse_config(MINIMAL.replace("solve_h = 0.05", "solve_h = small"))


def test_increasing_schedule_rejected(tmp_path, capsys):
    text = MINIMAL + "\n[continue]\nlambda_start = 0.001\nlambda_end = 0.1\n"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) != 0
    assert "schedule" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_ladder_must_halve():
    with pytest.raises(ConfigError, match="halve"):
        parse_config(MINIMAL.replace("solve_h = 0.05", "h = 0.1, 0.04"))


def test_unknown_assert_rejected():
    with pytest.raises(ConfigError, match="unknown check"):
        parse_config(MINIMAL + "\n[assert]\nflux_masss = 0.1\n")


def test_unsafe_weight_rejected():
    with pytest.raises(ConfigError, match="weight"):
        parse_config(MINIMAL.replace("expr = one", "expr = __import__('os').getcwd()"))


def test_failed_assert_exit_1(tmp_path):
    text = MINIMAL + "\n[assert]\nlambda1 = 2.0, 0.02\n"
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 1
    doc = json.loads((out / "asserts.json").read_text())
    assert doc["all_passed"] is False


def test_missing_results_fail_check(tmp_path):
    text = MINIMAL + "\n[assert]\nflux_mass = 0.1\n"
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 1
    (check,) = json.loads((out / "asserts.json").read_text())["checks"]
    assert "not run" in check["detail"]


def test_step_failure_exit_2(tmp_path):
    # a = x1 on the annulus from the two-bubble ansatz: the seed Newton solve does not converge
    text = """
[domain]
center = 2, 0
[weight]
expr = x1
[solve]
lambda = 0.1
max_iter = 6
[continue]
seed = ansatz:3,0:1,0:1.72,0.77
[run]
steps = solve
"""
    out = tmp_path / "out"
    assert main(["solve", "--config", write(tmp_path, text), "--out", str(out)]) == 2
    doc = json.loads((out / "newton.json").read_text())
    assert doc["converged"] is False


def test_solve_subcommand(tmp_path):
    text = MINIMAL.replace("steps = spectrum", "steps = solve").replace("symmetry = 8", "symmetry = 2") + \
        "\n[solve]\nlambda = 0.5\n[continue]\nseed = ansatz:1,0:-1,0:2,2\n"
    out = tmp_path / "out"
    assert main(["solve", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    doc = json.loads((out / "newton.json").read_text())
    assert doc["converged"] and abs(doc["compatibility"]) < 1e-8
    assert (out / "solution.csv").exists()


def _data(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            if f.endswith((".csv", ".json", ".svg")):
                p = os.path.join(root, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, d)] = fh.read()
    return out


def test_rerun_and_manifest_replay_identical(tmp_path):
    cfg = os.path.join(CONFIGS, "disk_blowup.ini")
    a, b, c = (str(tmp_path / n) for n in "abc")
    assert main(["run", "--config", cfg, "--out", a, "--lambda-end", "0.01"]) == 1   # flux_growth needs lambda < 1e-2
    assert main(["run", "--config", cfg, "--out", b, "--lambda-end", "0.01"]) == 1
    assert main(["run", "--config", os.path.join(a, "manifest.json"), "--out", c]) == 1
    da, db, dc = _data(a), _data(b), _data(c)
    assert da == db
    assert da == dc
    man = json.loads(da["manifest.json"])
    assert man["overrides"] == {"lambda_end": 0.01}
    assert len(json.loads(da[os.path.join("branch", "branch.json")])["points"]) == 3


def test_disk_blowup_asserts_pass(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", os.path.join(CONFIGS, "disk_blowup.ini"), "--out", str(out)]) == 0
    checks = json.loads((out / "asserts.json").read_text())["checks"]
    assert {c["name"] for c in checks if c["passed"]} >= {"flux_mass", "converged", "peak_count"}


def test_shipped_configs_parse():
    for name in sorted(os.listdir(CONFIGS)):
        if name.endswith(".ini"):
            load_config(os.path.join(CONFIGS, name))
