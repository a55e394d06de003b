import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fedqr.cli import ExperimentConfig, load_csv, main, run_experiment
from fedqr.errors import ConfigError, ParseError, RaggedRows

DIABETES = str(Path(__file__).parent / "data" / "diabetes.csv")


def _data_block(report: str) -> dict:
    return json.loads(report.split("# data\n", 1)[1])


def _write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- load_csv ---------------------------------------------------------------

def test_load_csv_basic(tmp_path):
    m, resp, names = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n"), True)
    np.testing.assert_array_equal(m, [[1, 2], [3, 4]])
    assert resp is None and names == ["a", "b"]


def test_load_csv_response(tmp_path):
    m, resp, names = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n"), True, "b")
    np.testing.assert_array_equal(m, [[1], [3]])
    np.testing.assert_array_equal(resp, [2, 4])
    assert names == ["a"]


def test_load_csv_parse_error_location(tmp_path):
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, "a,b\n1,2\n3,abc\n"), True)
    assert (info.value.row, info.value.col) == (3, 2)


def test_load_csv_ragged(tmp_path):
    with pytest.raises(RaggedRows):
        load_csv(_write(tmp_path, "a,b\n1,2\n3\n"), True)


def test_load_csv_without_header_and_unknown_response(tmp_path):
    m, _, names = load_csv(_write(tmp_path, "1,2\n3,4\n"), False)
    assert m.shape == (2, 2) and names == ["x0", "x1"]
    with pytest.raises(ConfigError):
        load_csv(_write(tmp_path, "a,b\n1,2\n"), True, "c")


# -- config -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("qr")
    with pytest.raises(ConfigError):
        ExperimentConfig("qr", synthetic=(3, 5))
    with pytest.raises(ConfigError):
        ExperimentConfig("qr", synthetic=(5, 3), clients=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("nope", synthetic=(5, 3))
    with pytest.raises(ConfigError):
        ExperimentConfig("qr", synthetic=(5, 3), seed=2**64)


# -- experiments ------------------------------------------------------------

def test_qr_report_at_attack_scale():
    report = run_experiment(ExperimentConfig("qr", synthetic=(5000, 10), clients=2, seed=7, mode="clear"))
    data = _data_block(report)
    assert data["q_frobenius_delta"] <= 1e-12
    assert data["r_frobenius_delta"] <= 1e-12
    assert report.startswith("# fedqr qr\n# config: ")
    assert '"seed": 7' in report.splitlines()[1]


def test_attack_householder_report():
    data = _data_block(run_experiment(ExperimentConfig("attack-householder", synthetic=(5000, 10), clients=2)))
    assert data["mean_abs_error"] <= 1e-12


def test_attack_givens_report():
    data = _data_block(run_experiment(ExperimentConfig("attack-givens", synthetic=(400, 5), clients=2)))
    assert data["mean_abs_error"] <= 1e-12
    assert data["skipped_zero_sine"] == 0


def test_attack_cascade_report_and_precondition(capsys):
    data = _data_block(run_experiment(ExperimentConfig("attack-cascade", synthetic=(60, 6), clients=3, mode="clear")))
    assert max(r["max_abs_error"] for r in data["reports"]) <= 1e-8
    assert main(["attack-cascade", "--synthetic", "60x6", "--clients", "3"]) == 4
    assert "WrongMode" in capsys.readouterr().err


def test_pca_report():
    data = _data_block(run_experiment(ExperimentConfig("pca", synthetic=(100, 5), clients=4, k=5)))
    assert data["v_delta"] <= 1e-8
    assert data["reconstruction_error"] <= 1e-8


def test_linreg_report_has_regression_metrics():
    report = run_experiment(ExperimentConfig("linreg", input=DIABETES, response="progression"))
    for metric in ("||Q_c - Q_f||_F", "||R_c - R_f||_F", "sum |x_c - x_f|", "sum |p_c - p_f|", "|r2_c - r2_f|"):
        assert metric in report
    data = _data_block(report)
    assert data["coefficient_abs_sum_delta"] <= 1e-9
    assert data["p_value_abs_sum_delta"] <= 0.03
    assert data["features"][0] == "age" and len(data["features"]) == 10


def test_linreg_intercept_report():
    data = _data_block(run_experiment(ExperimentConfig("linreg", input=DIABETES, response="progression",
                                                        intercept=True, mode="clear")))
    assert data["features"][0] == "(intercept)"
    assert data["regression"]["dof"] == 442 - 10 - 1


def test_smpc_demo_report():
    data = _data_block(run_experiment(ExperimentConfig("smpc-demo", synthetic=(50, 3), clients=3)))
    assert data["max_decode_error"] <= 3 * 2.0**-40
    assert data["raw_values_at_aggregator"] == 0


def test_output_and_transcript_files(tmp_path):
    out, trans = tmp_path / "r.txt", tmp_path / "t.jsonl"
    argv = ["qr", "--synthetic", "30x3", "--clients", "3", "--output", str(out), "--transcript", str(trans)]
    assert main(argv) == 0
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first
    lines = trans.read_text().splitlines()
    assert json.loads(lines[0])["header"]["protocol"] == "fed-gs"


# -- exit codes -------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "a,b\n1,x\n")
    assert main(["qr", "--input", bad]) == 2
    assert "ParseError" in capsys.readouterr().err
    dep = _write(tmp_path, "a,b\n1,2\n2,4\n3,6\n4,8\n", "dep.csv")
    assert main(["qr", "--input", dep, "--clients", "2"]) == 3
    assert main(["qr", "--synthetic", "10x2", "--prime-bits", "4"]) == 2
    # a 40-bit field leaves almost no integer range for the encoded values
    assert main(["qr", "--synthetic", "10x2", "--prime-bits", "40"]) == 3
    assert main(["linreg", "--input", DIABETES, "--response", "nope"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["qr", "--synthetic", "banana"])
    assert info.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fedqr", "smpc-demo", "--synthetic", "10x2", "--clients", "2"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("# fedqr smpc-demo")
