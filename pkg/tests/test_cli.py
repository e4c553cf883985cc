import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from appfkit import __version__
from appfkit.cli import main, resolve_config, build_parser
from appfkit.netmodel import LoadProfile, load_network, save_network

from conftest import fixture_path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_prints_csv(capsys):
    code, out, _ = _run(capsys, "solve", "--network", fixture_path("2bus"), "--eps-newton", "1e-10")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["slot", "phase", "V_pu", "theta_rad"]
    slot, _, vm, va = rows[1]
    v = float(vm) * np.exp(1j * float(va))
    assert slot == "1"
    assert v * np.conj((1 - 10j) * (v - 1)) == pytest.approx(-0.1 - 0.05j, abs=1e-9)


def test_solve_writes_bundle(tmp_path, capsys):
    code, out, _ = _run(capsys, "solve", "--network", fixture_path("threephase6"), "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["converged"]
    doc = json.loads((tmp_path / "solve.json").read_text())
    assert doc["config"]["network"]["path"] == fixture_path("threephase6")
    rows = list(csv.reader(open(tmp_path / "solution.csv")))
    assert len(rows) == 4 and rows[1][1] in ("a", "b", "c")


def test_check_reports_margin(capsys):
    code, out, _ = _run(capsys, "check", "--network", fixture_path("2bus"))
    assert code == 0
    rep = json.loads(out)
    assert rep["margin"] > 1 and rep["state"] == "nominal solution"


def test_check_warns_on_small_margin(tmp_path, capsys):
    net = load_network(fixture_path("2bus")).with_loads(LoadProfile([-2.0], [-1.0]))
    path = tmp_path / "heavy.json"
    save_network(net, path)
    code, out, err = _run(capsys, "check", "--network", path)
    assert code == 0
    assert "warning" in err and json.loads(out)["margin"] < 10


def test_infeasible_solve_exit_code(tmp_path, capsys):
    net = load_network(fixture_path("2bus")).with_loads(LoadProfile([-50.0], [-20.0]))
    path = tmp_path / "bad.json"
    save_network(net, path)
    with np.errstate(all="ignore"):
        code, _, err = _run(capsys, "solve", "--network", path)
    assert code == 2 and "no convergence" in err


def test_infeasible_sample_exit_code(tmp_path, capsys):
    net = load_network(fixture_path("2bus")).with_loads(LoadProfile([-2.0], [-1.0]))
    path = tmp_path / "tight.json"
    save_network(net, path)
    with np.errstate(all="ignore"):
        code, _, err = _run(capsys, "appf", "--network", path, "--samples", 20, "--sigma", 3,
                            "--out", tmp_path / "o")
    assert code == 2 and "sample" in err


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--network", "/nonexistent.json"],
    ["appf", "--network", fixture_path("mesh10"), "--sigma", "-1"],
    ["appf", "--network", fixture_path("mesh10"), "--samples", "many"],
    ["frobnicate"],
    ["stats"],
    ["stats", "--results", "/nonexistent"],
    ["solve", "--network", fixture_path("2bus"), "--config", "/nonexistent.json"],
])
def test_bad_configuration_exit_code(argv, capsys):
    code, _, err = _run(capsys, *argv)
    assert code == 1
    assert "error" in err


def test_malformed_network_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"n_total": 2}')
    code, _, err = _run(capsys, "solve", "--network", path)
    assert code == 1 and "network error" in err


def test_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = _run(capsys, "appf", "--network", fixture_path("mesh10"), "--samples", 2,
                        "--out", blocker)
    assert code == 3 and "I/O" in err


def test_precedence_defaults_file_env_flag(tmp_path, monkeypatch):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"sampling": {"sigma": 0.2, "seed": 5}, "solver": {"k_neumann": 4}}))
    parser = build_parser()
    monkeypatch.setenv("APPF_SIGMA", "0.3")
    monkeypatch.setenv("APPF_K_NEUMANN", "6")
    args = parser.parse_args(["appf", "--config", str(cfg_file), "--sigma", "0.4"])
    cfg = resolve_config(args)
    assert cfg["sampling"]["sigma"] == 0.4
    assert cfg["solver"]["k_neumann"] == 6
    assert cfg["sampling"]["seed"] == 5
    assert cfg["rom"]["n_q"] == 37


def test_bad_env_value(monkeypatch, capsys):
    monkeypatch.setenv("APPF_SAMPLES", "lots")
    code, _, err = _run(capsys, "appf", "--network", fixture_path("mesh10"))
    assert code == 1 and "APPF_SAMPLES" in err


def test_appf_bundle_and_stats(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = _run(capsys, "appf", "--network", fixture_path("mesh10"), "--samples", 12,
                           "--sigma", 0.3, "--top-k", 5, "--seed", 3, "--out", out, "--dump-samples",
                           "--rom-out", tmp_path / "rom.npz")
    assert code == 0
    brief = json.loads(stdout)
    assert brief["samples"] == 12 and sum(brief["paths"].values()) == 12
    for name in ("solutions.csv", "records.jsonl", "config.json", "samples.csv"):
        assert (out / name).exists()
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["config"]["resolved"]["sampling"]["seed"] == 3
    assert cfg["config"]["resolved"]["sampling"]["rng"] == "PCG64"

    code, stdout, _ = _run(capsys, "stats", "--results", out, "--bins", 10, "--count", 4,
                           "--network", fixture_path("mesh10"), "--edge", "0,1")
    assert code == 0
    assert len(json.loads(stdout)["singular_values"]) == 4
    summary = json.loads((out / "uq_summary.json").read_text())
    assert sum(summary["histogram"]["counts"]) == 12 * 9
    assert (out / "current_histogram_0-1.csv").exists()

    code, stdout, _ = _run(capsys, "appf", "--network", fixture_path("mesh10"), "--samples", 4,
                           "--rom-in", tmp_path / "rom.npz", "--out", tmp_path / "again")
    assert code == 0
    assert json.loads(stdout)["rom_final_q"] >= brief["rom_final_q"]


def test_compare_writes_report(tmp_path, capsys):
    code, stdout, _ = _run(capsys, "compare", "--network", fixture_path("mesh10"), "--samples", 10,
                           "--sigma", 0.2, "--eps-newton", 1e-8, "--out", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["max_abs_dv"] < 1e-6
    assert rep["residual_ok_a"] and rep["residual_ok_b"]
    assert (tmp_path / "appf" / "solutions.csv").exists()
    assert (tmp_path / "traditional" / "records.jsonl").exists()
    assert json.loads(stdout)["max_abs_dv"] == rep["max_abs_dv"]


def test_ppf_accepts_csv_network(tmp_path, capsys):
    path = fixture_path("x").replace("x.json", "feeder3_csv/ybus.csv")
    code, stdout, _ = _run(capsys, "ppf", "--network", path, "--samples", 3, "--workers", 2, "--out", tmp_path)
    assert code == 0
    assert json.loads(stdout)["paths"] == {"npfs_only": 3}


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "appfkit.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert __version__ in out.stdout
