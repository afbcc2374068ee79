import json
import math
import struct

import numpy as np
import pytest

from sedlab import io as sio
from sedlab.cli import KEYS, UsageError, build_settings, main, parse_config_text
from sedlab.ensemble import RunConfig
from sedlab.errors import SedlabError


def test_points_csv_roundtrip(tmp_path):
    pts = np.random.default_rng(0).random((7, 3)) * 10
    sio.write_points_csv(tmp_path / "p.csv", pts, 3)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x1,x2,x3"
    assert np.array_equal(sio.read_points_csv(tmp_path / "p.csv"), pts)
    sio.write_points_csv(tmp_path / "e.csv", np.empty((0, 2)), 2)
    assert sio.read_points_csv(tmp_path / "e.csv").shape == (0, 2)


def test_field_roundtrip_and_header(tmp_path):
    vals = np.arange(10, dtype=float) / 3
    sio.write_field(tmp_path / "f.clsf", vals, 2, 3)
    raw = (tmp_path / "f.clsf").read_bytes()
    assert raw[:4] == b"CLSF"
    assert struct.unpack("<IQQQ", raw[4:32]) == (1, 2, 3, 10)
    head, back = sio.read_field(tmp_path / "f.clsf")
    assert head == {"version": 1, "d": 2, "n": 3, "dofs": 10} and np.array_equal(back, vals)
    (tmp_path / "bad.clsf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SedlabError):
        sio.read_field(tmp_path / "bad.clsf")
    (tmp_path / "short.clsf").write_bytes(raw[:-8])
    with pytest.raises(SedlabError):
        sio.read_field(tmp_path / "short.clsf")


def test_json_nan_becomes_null(tmp_path):
    sio.write_json(tmp_path / "m.json", {"a": math.nan, "b": [np.float64(1.5), math.inf]})
    assert json.loads((tmp_path / "m.json").read_text()) == {"a": None, "b": [1.5, None]}


def test_config_parsing(tmp_path):
    text = "# comment\nd = 4\n\nT = 16  # trailing\nlambda = none\n"
    assert parse_config_text(text) == {"d": "4", "T": "16", "lambda": "none"}
    with pytest.raises(UsageError):
        parse_config_text("just words")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    s = build_settings(str(cfg), ["--T", "32", "--mode=linearized"])
    assert s == {"d": 4, "T": 32.0, "lambda": None, "mode": "linearized"}


def test_key_registry_covers_run_config():
    from dataclasses import fields
    names = {f.name for f in fields(RunConfig)} - {"lam"}
    assert names <= set(KEYS) and "lambda" in KEYS


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_solve_zero_inclusions(tmp_path):
    cfg = tmp_path / "zero.cfg"
    cfg.write_text("d = 3\nn = 32\nh = 0.25\nT = 100\nlambda = 0\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    m = _manifest(out)
    assert m["report"]["max_abs_u"] <= 1e-12 and m["report"]["u_bar_box"] is None
    assert [o["file"] for o in m["outputs"]] == ["field.clsf"]
    assert m["outputs"][0]["sha256"] == sio.sha256(out / "field.clsf")


def test_sample_deterministic(tmp_path):
    args = ["sample", "--d", "3", "--rho", "3", "--lambda", "1", "--L", "32", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "points.csv").read_bytes(), (tmp_path / "b" / "points.csv").read_bytes()
    assert a == b
    m = _manifest(tmp_path / "a")
    assert m["report"]["count"] == len(a.splitlines()) - 1 and m["report"]["seed"] == 7


def test_solve_and_green_reports(tmp_path):
    assert main(["solve", "--n", "32", "--T", "30", "--out", str(tmp_path / "s")]) == 0
    r = _manifest(tmp_path / "s")["report"]
    assert {"iterations", "residual", "energy_massive", "energy_dirichlet", "u_bar_box"} <= set(r)
    assert r["u_bar_box"] < 0 and r["identities"]["mean0"] < 1e-8
    head, u = sio.read_field(tmp_path / "s" / "field.clsf")
    assert head["dofs"] == len(u) == 32 ** 3 - round(r["geometry"]["theta_h"] * 32 ** 3) + r["geometry"]["inclusions"]
    assert main(["green", "--n", "48", "--h", "0.5", "--strict_raster", "false", "--T", "50",
                 "--green_r_min", "2", "--green_r_max", "10", "--out", str(tmp_path / "g")]) == 0
    assert -1.6 < _manifest(tmp_path / "g")["report"]["slope"] < -0.6


def test_linearized_ensemble_oracle(tmp_path):
    common = ["--n", "16", "--h", "1", "--lambda", "0.05", "--strict_raster", "false"]
    assert main(["linearized", *common, "--out", str(tmp_path / "l")]) == 0
    assert len(_manifest(tmp_path / "l")["outputs"]) == 2
    assert main(["ensemble", *common, "--mode", "linearized", "--realizations", "3",
                 "--out", str(tmp_path / "e")]) == 0
    rows = sio.read_table(tmp_path / "e" / "ensemble.csv")
    assert len(rows) == 1 and rows[0]["realizations"] == 3
    assert main(["oracle", "--T", "100", "--out", str(tmp_path / "o")]) == 0
    assert _manifest(tmp_path / "o")["report"]["dense_vs_cg"] < 1e-8


def test_sweep_writes_fit(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--mode", "linearized", "--n", "8", "--h", "1", "--lambda", "0.01",
                 "--strict_raster", "false", "--box_rule", "4", "--realizations", "3",
                 "--T_list", "16,64,256", "--out", str(out)]) == 0
    rows = sio.read_table(out / "sweep.csv")
    assert [r["T"] for r in rows] == [16.0, 64.0, 256.0]
    fit = _manifest(out)["report"]["fit"]
    assert 0.2 < fit["exponent"] < 0.8


@pytest.mark.parametrize("argv", [
    ["solve", "--bogus", "1"],
    ["solve", "--T"],
    ["solve", "--d", "three"],
    ["ensemble", "--scaling_claim", "true", "--T", "100"],
    ["sweep", "--T_list", "64,16,256"],
    ["frobnicate"],
    ["solve", "--config", "/nonexistent.cfg"],
])
def test_usage_errors_leave_no_files(tmp_path, capsys, argv):
    out = tmp_path / "out"
    assert main(argv + ["--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "usage" and err["message"]
    assert not out.exists()


def test_runtime_error_record(tmp_path, capsys):
    # too large for the memory budget: a resource error, nonzero exit, no manifest
    out = tmp_path / "out"
    code = main(["ensemble", "--n", "64", "--memory_budget_mb", "1", "--out", str(out)])
    assert code == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ResourceError"
    assert not (out / "manifest.json").exists()
