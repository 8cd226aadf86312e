import csv
import io
import json
import os
import subprocess
import sys

import pytest

from mbpath.cli import fmt_float, main

HERE = os.path.dirname(__file__)
sys.path.insert(0, os.path.join(HERE, "fixtures"))
from make_golden import CASES, GOLDEN, toy  # noqa: E402


def run(argv, tmp_path, name="out"):
    out = str(tmp_path / name)
    code = main(argv + ["--out", out])
    text = open(out).read() if os.path.exists(out) else None
    return code, text


def strip_version(text):
    doc = json.loads(text)
    doc.pop("version", None)
    return doc


@pytest.mark.parametrize("name, argv", CASES, ids=[c[0] for c in CASES])
def test_matches_golden(name, argv, tmp_path):
    code, text = run(argv, tmp_path)
    assert code == 0
    expected = open(os.path.join(GOLDEN, name)).read()
    if name.endswith(".json"):
        assert strip_version(text) == strip_version(expected)
    else:
        assert text == expected


def test_screen_parallel_output_identical(tmp_path):
    argv = dict(CASES)["screen.csv"]
    _, serial = run(argv + ["--parallelism", "1"], tmp_path, "a")
    _, par = run(argv + ["--parallelism", "4"], tmp_path, "b")
    assert serial == par


def test_screen_rows_sorted_with_error_row_last(tmp_path):
    _, text = run(dict(CASES)["screen.csv"], tmp_path)
    rows = list(csv.DictReader(io.StringIO(text)))
    ok = [r for r in rows if r["status"] == "ok"]
    pvals = [float(r["p_value"]) for r in ok]
    assert pvals == sorted(pvals)
    assert rows[-1]["metabolite_id"] == "met_4"
    assert rows[-1]["status"] == "error" and "zero variance" in rows[-1]["message"]


def test_screen_json(tmp_path):
    code, text = run(dict(CASES)["screen.csv"] + ["--json"], tmp_path)
    doc = json.loads(text)
    assert code == 0 and len(doc["rows"]) == 5
    assert doc["rows"][-1]["p_value"] is None


def test_degenerate_exit_code(tmp_path, capsys):
    code, text = run(["analyze", "--target-design", toy("target_design.csv"),
                   "--target-outcome", toy("target_outcome.csv"),
                   "--external-design", toy("external_design.csv"),
                   "--external-metabolite", toy("external_noise_metabolite.csv")], tmp_path)
    assert code == 2
    assert "degenerate" in capsys.readouterr().err
    doc = json.loads(text)
    assert doc["status"] == "degenerate_first_stage" and doc["p_value"] == 1.0


def test_missing_column_exit_code(tmp_path, capsys):
    code, _ = run(["analyze", "--target-design", toy("target_design.csv"),
                   "--target-outcome", toy("target_outcome.csv"),
                   "--external-design", toy("external_design.csv"),
                   "--external-metabolite", toy("external_metabolites.csv"),
                   "--metabolite-column", "met_9"], tmp_path)
    assert code == 1
    assert "met_9" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path, capsys):
    code, _ = run(["analyze", "--target-design", toy("nope.csv"),
                   "--target-outcome", toy("target_outcome.csv"),
                   "--external-design", toy("external_design.csv"),
                   "--external-metabolite", toy("external_metabolite.csv")], tmp_path)
    assert code == 1
    assert "mbpath: error:" in capsys.readouterr().err


def test_bad_scenario_names_key(tmp_path, capsys):
    path = tmp_path / "s.json"
    path.write_text('{"rho": 2.0}')
    code, _ = run(["simulate", "--scenario", str(path)], tmp_path)
    assert code == 1
    assert "scenario.rho" in capsys.readouterr().err


def test_sweep_writes_one_row_per_grid_value(tmp_path):
    csv_path = tmp_path / "sweep.csv"
    code, text = run(["simulate", "--scenario", os.path.join(HERE, "fixtures",
                                                              "small_scenario.json"),
                      "--sweep", "theta", "--n-reps", "1", "--csv", str(csv_path)], tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(csv_path)))
    assert len(rows) == 7
    assert [float(r["sweep_value"]) for r in rows] == [0.0, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2]
    assert len(json.loads(text)["summaries"]) == 7


def test_pred_corr_of_identical_cohort_is_one(tmp_path):
    code, text = run(["pred-corr", "--target-design", toy("target_design.csv"),
                      "--target-metabolite", toy("target_metabolite.csv"),
                      "--external-design", toy("target_design.csv"),
                      "--external-metabolite", toy("target_metabolite.csv"), "--json"],
                     tmp_path)
    doc = json.loads(text)
    assert code == 0
    assert doc["predictive_correlation"] == pytest.approx(1.0, abs=1e-12)
    assert doc["verdict"] == "adequate informativeness"


def test_pred_corr_cutoff_changes_verdict(tmp_path):
    argv = dict(CASES)["pred_corr.txt"]
    _, text = run(argv + ["--cutoff", "0.999"], tmp_path)
    assert text.endswith("verdict\tlow informativeness\n")


@pytest.mark.parametrize("fraction, expected", [("0.5", 0), ("0.2", 1)])
def test_sample_split(tmp_path, fraction, expected):
    # 30 rows: halves of 15 are enough, a 6-row external part is not
    code, text = run(["sample-split", "--target-design", toy("target_design.csv"),
                      "--target-outcome", toy("target_outcome.csv"),
                      "--target-metabolite", toy("target_metabolite.csv"),
                      "--split-fraction", fraction, "--folds", "3", "--variance-folds", "3"],
                     tmp_path)
    assert code == expected
    if expected == 0:
        assert json.loads(text)["mode"] == "sample_split"


def test_fmt_float():
    assert fmt_float(1.0) == "1.0"
    assert fmt_float(0.1) == "0.10000000000000001"
    assert fmt_float(1e300) == "1.0000000000000001e+300"
    assert fmt_float(float("nan")) is None


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "mbpath.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("mbpath ")
