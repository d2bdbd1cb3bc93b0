import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from asepkit import cli


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------- end to end

def test_fourier_end_to_end(tmp_path):
    cfg = write(tmp_path, "[model]\ndimension = 1\n\n[fourier]\nlambda = 1e-10:1e-4:13\n")
    out = tmp_path / "out"
    assert cli.run_config(cfg, "fourier", str(out)) == 0
    rows = list(csv.DictReader(open(out / "fourier.csv")))
    assert len(rows) == 13
    assert float(rows[0]["lambda"]) == pytest.approx(1e-4)
    summary = json.loads((out / "fourier_summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["results"]["model"] == "power"
    assert abs(summary["results"]["exponent"] + 0.25) <= 0.02
    assert set(summary["versions"]) >= {"python", "numpy", "scipy"}


def test_oracle_end_to_end(tmp_path):
    cfg = write(tmp_path, "[model]\ndensity = 0.5\n[oracle]\nsites = 10\nlambda = 1.0\n")
    out = tmp_path / "o"
    assert cli.run_config(cfg, "oracle", str(out)) == 0
    summary = json.loads((out / "oracle_summary.json").read_text())
    assert summary["results"]["max_rel_gap"] < 1e-6
    assert summary["results"]["stationarity_residual"] < 1e-12


def test_simulate_end_to_end(tmp_path):
    cfg = write(tmp_path, "[sim]\nlattice = 64\nt_obs = 0.5, 1, 2\nreplicas = 20\n"
                          "seed = 3\njobs = 1\n[output]\ndir = %s\n" % (tmp_path / "s"))
    assert cli.run_config(cfg, "simulate") == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "simulate.csv")))
    assert [float(r["t"]) for r in rows] == [0.5, 1.0, 2.0]
    assert set(rows[0]) == {"t", "D11", "D11_err", "spread", "spread_err"}
    summary = json.loads((tmp_path / "s" / "simulate_summary.json").read_text())
    assert summary["config"]["sim.seed"] == 3


def test_simulate_reproducible_from_summary(tmp_path):
    text = "[sim]\nlattice = 32\nt_obs = 1, 2\nreplicas = 10\nseed = 8\njobs = 1\n"
    cfg = write(tmp_path, text)
    cli.run_config(cfg, "simulate", str(tmp_path / "a"))
    cli.run_config(cfg, "simulate", str(tmp_path / "b"))
    assert (tmp_path / "a" / "simulate.csv").read_bytes() == \
        (tmp_path / "b" / "simulate.csv").read_bytes()


def test_resolvent_end_to_end(tmp_path):
    cfg = write(tmp_path, "[resolvent]\nlambda = 0.1\ndegree = 2, 3, 4\nwindow = 8\n")
    out = tmp_path / "r"
    assert cli.run_config(cfg, "resolvent", str(out)) == 0
    rows = list(csv.DictReader(open(out / "resolvent.csv")))
    assert [int(r["degree"]) for r in rows] == [2, 3, 4]
    summary = json.loads((out / "resolvent_summary.json").read_text())
    assert summary["results"]["monotonicity"][0]["monotone"] is True


def test_compute_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise cli.ComputeFailure("monotonicity violated", [], ["lambda"], {})
    monkeypatch.setitem(cli.RUNNERS, "fourier", boom)
    cfg = write(tmp_path, "[fourier]\nlambda = 1e-3\n")
    out = tmp_path / "f"
    assert cli.run_config(cfg, "fourier", str(out)) == 1
    summary = json.loads((out / "fourier_summary.json").read_text())
    assert summary["status"] == "failed"


# ------------------------------------------------------------- config errors

def test_bad_density_exit_two(tmp_path, capsys):
    cfg = write(tmp_path, "[model]\ndensity = 1.2\n")
    assert cli.run_config(cfg, "oracle", str(tmp_path / "x")) == 2
    assert "model.density" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_unknown_key_rejected():
    with pytest.raises(cli.ConfigError, match="model.colour: unknown key"):
        cli.parse_config("[model]\ncolour = red\n", "fourier")


def test_parse_error_reports_line():
    with pytest.raises(cli.ConfigError, match="line 1"):
        cli.parse_config("density = 0.5\n", "fourier")
    with pytest.raises(cli.ConfigError, match="line 3"):
        cli.parse_config("[model]\ndensity = 0.5\ndensity = 0.4\n", "fourier")


def test_unparseable_value_names_key():
    with pytest.raises(cli.ConfigError, match="sim.replicas"):
        cli.parse_config("[sim]\nreplicas = many\n", "simulate")


@pytest.mark.parametrize("text,sub,key", [
    ("[fourier]\nlambda = 10\n", "fourier", "fourier.lambda"),
    ("[resolvent]\ndegree = 5\n", "resolvent", "resolvent.degree"),
    ("[oracle]\nsites = 20\n", "oracle", "oracle.sites"),
    ("[sim]\nt_obs = 2, 1\n", "simulate", "sim.t_obs"),
    ("[model]\njump_law = levy\n", "fourier", "model.jump_law"),
])
def test_validation_names_key(text, sub, key):
    with pytest.raises(cli.ConfigError, match=key):
        cli.parse_config(text, sub)


def test_log_grid_parser():
    assert cli._floats("1e-4:1e-2:3") == pytest.approx([1e-2, 1e-3, 1e-4])
    assert cli._floats("0.5, 1,2") == [0.5, 1.0, 2.0]


def test_missing_config_file(tmp_path):
    assert cli.run_config(tmp_path / "nope.ini", "fourier") == 2


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "[model]\ndensity = 1.2\n")
    r = subprocess.run([sys.executable, "-m", "asepkit", "oracle", str(cfg)],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "model.density" in r.stderr


# --------------------------------------------------------------- emission

def test_emit_empty_is_header_only(tmp_path):
    p = cli.emit_results([], ["a", "b"], tmp_path / "e.csv")
    assert p.read_bytes() == b"a,b\n"


def test_emit_deterministic(tmp_path):
    recs = [{"a": 0.1, "b": 3}, {"a": 1 / 3, "b": -1}]
    cli.emit_results(recs, ["b", "a"], tmp_path / "1.csv")
    cli.emit_results(recs, ["b", "a"], tmp_path / "2.csv")
    data = (tmp_path / "1.csv").read_bytes()
    assert data == (tmp_path / "2.csv").read_bytes()
    assert data == b"b,a\n3,0.10000000000000001\n-1,0.33333333333333331\n"
    assert b"\r" not in data


def test_emit_roundtrips_floats(tmp_path):
    vals = np.random.default_rng(0).standard_normal(20) * 1e-7
    cli.emit_results([{"x": v} for v in vals], ["x"], tmp_path / "f.csv")
    back = [float(r["x"]) for r in csv.DictReader(open(tmp_path / "f.csv"))]
    assert back == list(vals)


def test_emit_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        cli.emit_results([{"a": float("nan")}], ["a"], tmp_path / "n.csv")
    with pytest.raises(ValueError):
        cli.emit_results([{"a": np.inf}], ["a"], tmp_path / "n.csv")


def test_emit_schema_mismatch(tmp_path):
    with pytest.raises(ValueError, match="schema"):
        cli.emit_results([{"a": 1, "c": 2}], ["a", "b"], tmp_path / "m.csv")


def test_emit_quotes_fields(tmp_path):
    cli.emit_results([{"s": 'a,"b"', "t": True}], ["s", "t"], tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_bytes() == b's,t\n"a,""b""",true\n'


def test_emit_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        cli.emit_results([], ["a"], tmp_path / "missing" / "dir" / "x.csv")
