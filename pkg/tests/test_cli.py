import json
import math
import os

import pytest

from nocprep import cli, config
from nocprep.config import ConfigError, load_config, read_csv

DATA = os.path.join(os.path.dirname(__file__), "data")


def run(tmp_path, *argv):
    return cli.run([*argv, "--out", str(tmp_path)])


def report(tmp_path):
    with open(tmp_path / "report.json") as fh:
        return json.load(fh)


def test_nominal_report(tmp_path):
    assert run(tmp_path, "nominal", "--config", "table1.cfg") == 0
    r = report(tmp_path)
    assert r["command"] == "nominal"
    assert r["config"]["run"]["grid_n"] == 16384
    assert 0 < r["result"]["eps0"] < 1e-3
    assert r["result"]["columns"]["00"]["bell"] == "01"
    header, rows = read_csv(tmp_path / "final_state.csv")
    assert header == ["basis", "re", "im", "abs"] and len(rows) == 4
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_rerun_from_report_is_bit_exact(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli.run(["nominal", "--config", "table1.cfg", "--out", str(first)]) == 0
    assert cli.run(["nominal", "--config", str(first / "report.json"), "--out", str(second)]) == 0
    r1, r2 = report(first), report(second)
    assert r1["result"]["eps0"] == r2["result"]["eps0"]
    assert r1["result"]["psi0f"] == r2["result"]["psi0f"]
    assert {k: v for k, v in r1["config"].items() if k != "run"} == \
        {k: v for k, v in r2["config"].items() if k != "run"}
    assert (first / "final_state.csv").read_text() == (second / "final_state.csv").read_text()


def test_empty_field_gives_unit_error(tmp_path):
    assert run(tmp_path, "nominal", "--config", os.path.join(DATA, "empty-field.cfg")) == 0
    assert report(tmp_path)["result"]["eps0"] == pytest.approx(1.0, abs=1e-12)


def test_noc_report(tmp_path):
    assert run(tmp_path, "noc", "--config", "table1.cfg") == 0
    res = report(tmp_path)["result"]
    assert res["eps_noc"] < res["eps0"]
    assert res["riccati_max_dev_from_identity"] <= 1e-8
    assert res["target"]["labels"] == ["01", "00", "10", "11"]
    header, rows = read_csv(tmp_path / "delta_f.csv")
    assert header == ["tau", "dF_x", "dF_y", "dF_z"]
    assert len(rows) == 16385


def test_sweep_csv_round_trip(tmp_path):
    assert run(tmp_path, "sweep", "--param", "d_xy", "--config", "table1.cfg") == 0
    header, rows = read_csv(tmp_path / "sweep_dxy.csv")
    assert header == ["dxy", "eps", "offset"]
    assert [float(r[0]) for r in rows] == [4.330, 4.331, 4.332]
    table = report(tmp_path)["result"]["tables"]["dxy"]
    # CSV text parses back to exactly the floats in the report
    assert [float(r[1]) for r in rows] == [row["eps"] for row in table]
    assert float(rows[1][1]) == report(tmp_path)["result"]["eps_noc"]


def test_jitter_zero_sigma(tmp_path):
    assert run(tmp_path, "jitter", "--sigma-t", "0", "--n", "2", "--config", "table1.cfg") == 0
    res = report(tmp_path)["result"]
    assert res["mean"] == res["eps_noc"] and res["std"] == 0.0
    assert res["model"]["sigma_phi"] == 0.0


def test_bandwidth_and_units(tmp_path):
    assert cli.run(["bandwidth", "--T", "5e-6", "--out", str(tmp_path / "bw")]) == 0
    res = report(tmp_path / "bw")["result"]
    assert res["cutoff_per_second"]["x"] == pytest.approx(res["cutoff"]["x"] * 120 / 5e-6)
    header, rows = read_csv(tmp_path / "bw" / "spectrum_x.csv")
    assert header == ["omega", "magnitude"] and len(rows) == 16384
    assert cli.run(["units", "--T", "5e-6", "--out", str(tmp_path / "u")]) == 0
    res = report(tmp_path / "u")["result"]
    assert res["time_scale"] == pytest.approx(2.4e7)


def test_anneal_command(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("[anneal]\nmax_evals = 5\nseeds = [4, 5]\n")
    assert run(tmp_path, "anneal", "--config", str(cfg), "--jobs", "1") == 0
    res = report(tmp_path)["result"]
    assert sorted(c["seed"] for c in res["chains"]) == [4, 5]
    assert (tmp_path / "anneal_seed4.csv").exists()
    assert load_config(tmp_path / "report.json").anneal_seeds == (4, 5)
    best = config.tomllib.loads((tmp_path / "best_params.toml").read_text())["params"]
    assert best["eta4"] == res["best_params"]["eta4"]


def test_defaults_applied_and_echoed(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[params]\nlambda = 9.579\n")
    loaded = load_config(cfg)
    assert loaded.grid_n == 16384
    assert loaded.to_dict()["run"]["grid_n"] == 16384


def test_negative_lambda_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[params]\nlambda = -1\n")
    assert run(tmp_path, "nominal", "--config", str(cfg)) == 1
    assert "lambda" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="lambda"):
        load_config(cfg)


def test_parse_error_has_line_and_column(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[run]\ngrid_n = 1024\ntol = = 3\n")
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.line == 3
    assert info.value.column is not None
    assert cli.run(["nominal", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_unknown_keys_warn(tmp_path):
    cfg = tmp_path / "w.cfg"
    cfg.write_text("[params]\ncolour = 3\n[extras]\nx = 1\n")
    with pytest.warns(UserWarning) as rec:
        loaded = load_config(cfg)
    messages = " ".join(str(w.message) for w in rec)
    assert "params.colour" in messages and "extras" in messages
    assert loaded.params == config.dynamics.TABLE1


@pytest.mark.parametrize("text, field", [
    ("[run]\ngrid_n = 1000\n", "grid_n"),
    ("[run]\ntol = -1.0\n", "tol"),
    ("[noc]\nr = 0.0\n", "noc"),
    ("[anneal]\ncooling = 1.5\n", "anneal"),
    ("[jitter]\nsigma_t = -1e-12\n", "jitter"),
    ("[params]\nd1 = \"big\"\n", "d1"),
    ("[sweep]\nparams = [\"omega\"]\n", "omega"),
])
def test_validation_errors(tmp_path, text, field):
    cfg = tmp_path / "v.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=field):
        load_config(cfg)


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "nominal", "--config", str(tmp_path / "nope.cfg")) == 1


def test_usage_errors_exit_one(tmp_path, capsys):
    assert cli.run(["bogus"]) == 1
    assert cli.run(["nominal", "--frobnicate"]) == 1
    assert cli.run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_grid_flag(tmp_path):
    assert run(tmp_path, "nominal", "--grid-n", "100") == 1


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.run(["units", "--out", str(blocker / "sub")]) == 1


def test_numerical_failure_exit_two(tmp_path):
    # far too coarse a tolerance for the unitarity guard
    assert run(tmp_path, "nominal", "--tol", "1e-3", "--grid-n", "64") == 2


def test_csv_full_precision(tmp_path):
    path = tmp_path / "x.csv"
    values = [math.pi, 1 / 3, 2.5e-300, -7.0]
    config.write_csv(path, ["v"], [(v,) for v in values])
    _, rows = read_csv(path)
    assert [float(r[0]) for r in rows] == values
