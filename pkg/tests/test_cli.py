import json
import subprocess
import sys

import jsonschema
import pytest

from ecmtumor import cli

FAST = ["--param", "numerics.grid_n=256", "--param", "numerics.n=32",
        "--param", "numerics.T=0.02", "--param", "numerics.cadence=0.01"]


def run(tmp_path, *args):
    return cli.main(["--out", str(tmp_path), *FAST, *args])


def _load(path, schema):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, cli.load_schema(schema))
    return doc


def test_check_writes_valid_report(tmp_path):
    assert run(tmp_path, "check") == 0
    doc = _load(tmp_path / "check_report.json", "check_report")
    assert doc["structural"]["ok"] and doc["m_eq"] == pytest.approx(0.5)


def test_check_mu10_reports_violations(tmp_path):
    assert run(tmp_path, "--param", "mu=10", "check") == 0
    doc = _load(tmp_path / "check_report.json", "check_report")
    assert not doc["structural"]["ok"] and doc["structural"]["violations"]
    assert any(w.startswith("mu=10") for w in doc["warnings"])


def test_stationary_outputs(tmp_path):
    assert run(tmp_path, "stationary") == 0
    meta = _load(tmp_path / "stationary_meta.json", "stationary_meta")
    assert meta["R_star"] == pytest.approx(1.9635, rel=1e-2)
    assert meta["viability"] is True
    assert (tmp_path / "stationary_profile.csv").read_text().splitlines()[1] == "r,sigma,m,E,u"


def test_stationary_csv_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "stationary") == 0 and run(b, "stationary") == 0
    assert (a / "stationary_profile.csv").read_bytes() == (b / "stationary_profile.csv").read_bytes()


def test_simulate_seeded_runs_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "--seed", "18446744073709551615", "simulate") == 0
    for name in ("series.csv", "snapshots.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    s = _load(a / "simulate_summary.json", "simulate_summary")
    assert s["init"]["seed"] == 2**64 - 1
    assert s["final"]["t"] == pytest.approx(0.02)


def test_simulate_T0(tmp_path):
    assert run(tmp_path, "--param", "numerics.T=0", "simulate") == 0
    s = _load(tmp_path / "simulate_summary.json", "simulate_summary")
    assert s["final"]["t"] == 0.0
    assert len((tmp_path / "series.csv").read_text().splitlines()) == 2


def test_invalid_param_exit_2(tmp_path, capsys):
    assert run(tmp_path, "--param", "sigma_bar=1.2", "stationary") == 2
    doc = _load(tmp_path / "error.json", "error")
    assert doc["error"]["kind"] == "InvalidParams"
    assert "InvalidParams" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["mu=abc", "numerics.dt=-1", "init.kind=magic",
                                      "numerics.bogus=1", "sweep.axis=kappa"])
def test_bad_config_exit_2(tmp_path, override):
    assert run(tmp_path, "--param", override, "check") == 2
    _load(tmp_path / "error.json", "error")


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"params": {"mu": 3.0}, "numerics": {"grid_n": 256}}))
    out = tmp_path / "o"
    assert cli.main(["--config", str(cfg), "--out", str(out), "--param", "mu=10", "check"]) == 0
    assert _load(out / "check_report.json", "check_report")["params"]["mu"] == 10.0


def test_unreadable_config_exit_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "missing.json"), "--out", str(tmp_path),
                     "check"]) == 2
    assert _load(tmp_path / "error.json", "error")["error"]["kind"] == "ConfigError"


def test_empty_sweep_exit_2(tmp_path):
    assert run(tmp_path, "sweep", "--values", "") == 2


def test_sweep_rows_and_parallel_agree(tmp_path):
    a, b = tmp_path / "serial", tmp_path / "par"
    assert run(a, "sweep", "--values", "0.5,3") == 0
    assert cli.main(["--out", str(b), "--jobs", "2", *FAST, "sweep", "--values", "0.5,3"]) == 0
    sa = _load(a / "sweep_summary.json", "sweep_summary")
    sb = _load(b / "sweep_summary.json", "sweep_summary")
    assert [r["R_star"] for r in sa["rows"]] == [r["R_star"] for r in sb["rows"]]
    assert sa["rows"][0]["R_star"] < sa["rows"][1]["R_star"]
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "row_001" / "stationary_meta.json").exists()


def test_sweep_row_error_recorded(tmp_path):
    assert run(tmp_path, "sweep", "--axis", "sigma_bar", "--values", "0.5,1.5") == 0
    rows = _load(tmp_path / "sweep_summary.json", "sweep_summary")["rows"]
    assert rows[0]["error"] is None and rows[1]["error"].startswith("InvalidParams")


def test_oracles_exit_codes(tmp_path):
    assert run(tmp_path, "oracles") == 0
    assert _load(tmp_path / "oracles_report.json", "oracles_report")["all_passed"]
    assert run(tmp_path, "oracles", "--theta-shift", "1e-3") == 1
    assert not _load(tmp_path / "oracles_report.json", "oracles_report")["all_passed"]


def test_seed_out_of_range_rejected(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["--out", str(tmp_path), "--seed", "-1", "check"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ecmtumor", "--out", str(tmp_path), "check"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "structural conditions hold" in proc.stdout
