"""Command-line behaviour: exit codes, reports and artifacts."""

import dataclasses

import numpy as np
import pytest

from eulalpha import cli, ledger
from eulalpha.io import load_snapshot, read_table


@pytest.fixture
def out(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv("EAF_OUTPUT_DIR", str(d))
    return d


@pytest.fixture
def params_file(out):
    assert cli.main(["suggest-params"]) == 0
    return out / "params.cfg"


class TestUsage:
    def test_no_arguments(self, capsys):
        assert cli.main([]) == 2
        assert "commands:" in capsys.readouterr().err

    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 2

    def test_help(self):
        assert cli.main(["--help"]) == 0

    def test_bad_config_key(self, out, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("resolution = 32\nwibble = 3\n")
        assert cli.main(["glue", "--config", str(cfg)]) == 2

    def test_missing_config(self, out):
        assert cli.main(["glue", "--config", "/nonexistent/x.cfg"]) == 2

    def test_check_params_needs_input(self, out):
        assert cli.main(["check-params"]) == 2


class TestParams:
    def test_suggest_then_check(self, params_file, capsys):
        assert params_file.exists()
        assert cli.main(["check-params", "--config", str(params_file)]) == 0
        text = capsys.readouterr().out
        assert "RESULT: PASS" in text

    def test_beta_two_fails(self, params_file, capsys):
        assert cli.main(["check-params", "--params", str(params_file), "--beta", "2"]) == 1
        assert "RESULT: FAIL" in capsys.readouterr().out

    def test_single_decomposition_fails(self, params_file, tmp_path):
        p = dataclasses.replace(ledger.load_parameters(params_file), N_dec=1)
        bad = tmp_path / "n1.cfg"
        ledger.save_parameters(p, bad)
        assert cli.main(["check-params", "--params", str(bad)]) == 1

    def test_experiment_config_pointing_to_parameters(self, params_file, tmp_path):
        exp = params_file.parent / "exp.cfg"
        exp.write_text(f"resolution = 32\nparameter_file = {params_file.name}\n")
        assert cli.main(["check-params", "--config", str(exp)]) == 0

    def test_report_files(self, params_file, out):
        cli.main(["check-params", "--params", str(params_file)])
        header, rows = read_table(out / "check_params_ledger.csv")
        assert header[0] == "inequality"
        assert len(rows) == 12
        assert (out / "check_params.txt").read_text().rstrip().endswith("RESULT: PASS")


def test_decompose_stress(out):
    assert cli.main(["decompose-stress", "--samples", "200"]) == 0
    _, rows = read_table(out / "decompose_stress_samples.csv")
    assert len(rows) == 200


def test_verify_pipes(out, capsys):
    assert cli.main(["verify-pipes", "--n", "256"]) == 0
    text = capsys.readouterr().out
    assert text.count("xi_") == 9
    assert "strands overlap" in text


def test_glue_writes_snapshots(out):
    assert cli.main(["glue", "--resolution", "64", "--samples", "11"]) == 0
    snap = load_snapshot(out / "glue_R0.eafs")
    assert snap.data.shape == (2, 2, 64, 64)
    assert np.allclose(snap.data, np.swapaxes(snap.data, 0, 1))


def test_conserve(out):
    args = ["conserve", "--init", "taylor-green", "--resolution", "32", "--dt", "0.01", "--t-final", "0.2",
            "--eps", "0.4", "0.2"]
    assert cli.main(args) == 0
    header, rows = read_table(out / "conserve_flux.csv")
    assert header == ["eps", "flux"] and len(rows) == 2


def test_inverse_div_test(out):
    assert cli.main(["inverse-div-test", "--fields", "2", "--n3", "16", "--n2", "32", "--step-n", "128"]) == 0


def test_output_dir_env_overrides_flag(out, tmp_path):
    other = tmp_path / "flag"
    assert cli.main(["decompose-stress", "--samples", "10", "--output-dir", str(other)]) == 0
    assert (out / "decompose_stress.txt").exists()
    assert not other.exists()
