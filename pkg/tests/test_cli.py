import csv
import json
import subprocess
import sys
from fractions import Fraction

import pytest

from powerseek.cli import main, parse_gammas
from powerseek.scenario_io import dump_scenario, scenario_to_dict
from powerseek.scenarios import LassoSpec, make_lasso


@pytest.fixture
def lasso_file(tmp_path):
    path = tmp_path / "lasso.json"
    dump_scenario(make_lasso(LassoSpec(2, 3)), path)
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_analyze_reports_threshold(lasso_file, tmp_path, capsys):
    assert main(["analyze", str(lasso_file), "--gamma", "0.9", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "c0           0.682328" in out
    doc = json.loads((tmp_path / "analyze.json").read_text())
    assert abs(float(doc["gamma_star"]["c0"]) - 0.682328) <= 1e-6
    assert doc["qualifying"]["9/10"] == ["c0", "c1", "c2"]


def test_analyze_parse_error_names_triple(lasso_file, tmp_path, capsys):
    doc = json.loads(lasso_file.read_text())
    doc["transitions"][0]["prob"] = "3/2"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["analyze", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert '"state": "s_new"' in err and "3/2" in err


def test_analyze_assumption_violation(tmp_path, capsys):
    doc = scenario_to_dict(make_lasso(LassoSpec(2, 3)))
    doc["training"] = [{"state": "c0", "action": "next"}]
    path = tmp_path / "shift.json"
    path.write_text(json.dumps(doc))
    assert main(["analyze", str(path), "--out", str(tmp_path)]) == 2
    assert "distributional_shift" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path):
    assert main(["analyze", str(tmp_path / "nope.json")]) == 1


def test_orbit_constant_theta(tmp_path, capsys):
    assert main(["orbit", "lasso:2:3", "0,0,0,0,0,0", "--gamma", "0.9", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "orbit.json").read_text())
    assert summary["orbit_size"] == 1 and summary["n_tie"] == 1


def test_orbit_certified(tmp_path):
    theta = tmp_path / "theta.json"
    theta.write_text(json.dumps(["0", "1", "2", "3", "4", "100"]))
    assert main(["orbit", "lasso:2:3", str(theta), "--gamma", "9/10", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "orbit.json").read_text())
    assert summary["status"] == "verified" and summary["certificate"]["valid"]
    assert summary["n_A1_over_A0"] >= 3 * summary["n_A0_over_A1"] > 0
    assert len(read_csv(tmp_path / "orbit.csv")) == 720


def test_orbit_vacuous(tmp_path, capsys):
    assert main(["orbit", "lasso:2:3", "0,0,0,0,0,1", "--gamma", "0.5", "--out", str(tmp_path)]) == 0
    assert "vacuous bound" in capsys.readouterr().out
    assert json.loads((tmp_path / "orbit.json").read_text())["vacuous"]


def test_orbit_cap_points_to_sampled(tmp_path, capsys):
    args = ["orbit", "lasso:2:3", "0,1,2,3,4,5", "--gamma", "0.9", "--cap", "4", "--out", str(tmp_path)]
    assert main(args) == 1
    assert "--sampled" in capsys.readouterr().err
    assert main(args + ["--sampled", "--samples", "300"]) == 0
    assert json.loads((tmp_path / "orbit.json").read_text())["approximate"]


def test_orbit_theta_length_checked(tmp_path):
    assert main(["orbit", "lasso:2:3", "0,1", "--gamma", "0.9", "--out", str(tmp_path)]) == 1


def test_sweep_rows(tmp_path):
    args = ["sweep", "lasso:2:3", "--gamma", "0.5,0.7,0.9", "--samples", "3", "--svg",
            "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [r["gamma"] for r in rows] == ["1/2", "7/10", "9/10"]
    assert [int(r["n"]) for r in rows] == [0, 1, 3]
    assert [r["guaranteed_fraction"] for r in rows] == ["0", "1/2", "3/4"]
    assert (tmp_path / "sweep.svg").read_text().startswith("<svg")


def test_sweep_single_gamma(tmp_path):
    assert main(["sweep", "lasso:1:2", "--gamma", "0.9", "--samples", "2", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "sweep.csv")) == 1


def test_sweep_range_nondecreasing(tmp_path):
    assert main(["sweep", "random:3:6", "--gamma-range", "0.5:0.95:0.15", "--samples", "2",
                 "--out", str(tmp_path)]) == 0
    n = [int(r["n"]) for r in read_csv(tmp_path / "sweep.csv")]
    assert len(n) == 4 and n == sorted(n)


def test_sweep_needs_gamma(tmp_path, capsys):
    assert main(["sweep", "lasso:2:3", "--out", str(tmp_path)]) == 1
    assert "gamma" in capsys.readouterr().err


def test_gamma_outside_unit_interval(tmp_path):
    assert main(["sweep", "lasso:2:3", "--gamma", "1", "--out", str(tmp_path)]) == 1


def test_sweep_is_byte_identical(tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        main(["sweep", "random:4:6", "--gamma", "0.8,0.95", "--samples", "3", "--svg",
              "--seed", "7", "--out", str(out)])
        outputs.append(((out / "sweep.csv").read_bytes(), (out / "sweep.svg").read_bytes()))
    assert outputs[0] == outputs[1]


def test_float_mode(tmp_path):
    assert main(["sweep", "lasso:2:3", "--gamma", "0.9", "--samples", "2", "--mode", "float",
                 "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "sweep.csv")[0]["gamma"] == "0.9"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("POWERSEEK_OUT", str(tmp_path / "env"))
    assert main(["analyze", "lasso:1:1"]) == 0
    assert (tmp_path / "env" / "analyze.json").exists()


def test_sample_goals_coinrun(tmp_path):
    assert main(["sample-goals", "coinrun", "--gamma", "1/4", "--samples", "30",
                 "--attempts", "2000", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "goals.json").read_text())
    assert summary["accepted"] == len(read_csv(tmp_path / "goals.csv"))
    assert sum(summary["goal_kinds"].values()) == summary["accepted"]


def test_malformed_generator_spec(tmp_path):
    assert main(["analyze", "lasso:2", "--out", str(tmp_path)]) == 1


def test_export_round_trip(tmp_path):
    assert main(["export", "random:2:5", str(tmp_path / "r.json")]) == 0
    assert main(["analyze", str(tmp_path / "r.json"), "--out", str(tmp_path)]) == 0


def test_verify_quick(tmp_path):
    assert main(["verify", "--quick", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert all(v["passed"] for v in doc.values())


def test_parse_gamma_range_inclusive():
    got = parse_gammas(None, "1/10:3/10:1/10", "exact")
    assert got == (Fraction(1, 10), Fraction(2, 10), Fraction(3, 10))


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "powerseek", "analyze", "lasso:2:3",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "0.682328" in proc.stdout
