import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from dtcbf import cli, config, sim
from dtcbf.sim import read_csv

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def short_doc(**overrides):
    doc = config.load(CONFIGS / "sim-standard.yaml")
    doc["horizon"] = 0.5
    doc.update(overrides)
    return doc


def test_simulate_full_config(tmp_path, capsys):
    code = cli.main(["simulate", str(CONFIGS / "sim-standard.yaml"), "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "sim-standard.csv").read_text(encoding="utf-8")
    lines = text.split("\n")
    assert lines[0] == "t,x1,x2,u1,u_proposed1,h_min,lg_norm,active,fallback"
    assert len(lines) - 2 == 15001
    report = json.loads((tmp_path / "sim-standard.json").read_text())
    assert report["metrics"]["violated"] is True
    assert Path(report["artifacts"]["csv"]).exists()
    assert report["duration_s"] > 0
    assert "min_h" in capsys.readouterr().out


def test_simulate_strict_violation_exit_code(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", short_doc(horizon=15.0))
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path), "--strict"]) == 2


def test_simulate_strict_passes_safe_run(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", short_doc())
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path), "--strict"]) == 0


def test_outputs_paths_honoured(tmp_path):
    doc = short_doc(outputs={"csv": str(tmp_path / "a" / "t.csv"), "json": str(tmp_path / "b" / "r.json")})
    cfg = write_yaml(tmp_path / "c.yaml", doc)
    assert cli.main(["simulate", str(cfg)]) == 0
    assert (tmp_path / "a" / "t.csv").exists() and (tmp_path / "b" / "r.json").exists()


@pytest.mark.parametrize("dt", [0, -0.1])
def test_nonpositive_dt_is_schema_error(tmp_path, capsys, dt):
    cfg = write_yaml(tmp_path / "c.yaml", short_doc(dt=dt))
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: dt:")
    with pytest.raises(config.ConfigError, match="^dt:"):
        config.load(cfg)


@pytest.mark.parametrize("where", ["root", "cbf", "strategy"])
def test_unknown_keys_rejected(tmp_path, where):
    doc = short_doc()
    target = doc if where == "root" else doc[where]
    target["colour"] = "blue"
    with pytest.raises(config.ConfigError, match="colour"):
        config.load(write_yaml(tmp_path / "c.yaml", doc))


def test_schema_error_names_nested_path(tmp_path):
    doc = short_doc()
    doc["strategy"] = {"type": "penalty", "r": -1}
    with pytest.raises(config.ConfigError, match="^strategy/r:"):
        config.load(write_yaml(tmp_path / "c.yaml", doc))


def test_semantic_error_becomes_config_error(tmp_path):
    doc = short_doc()
    doc["cbf"]["P"] = [[1.0, 0.0], [0.0, -1.0]]
    with pytest.raises(config.ConfigError, match="positive definite"):
        config.build_scenario(config.load(write_yaml(tmp_path / "c.yaml", doc)))


def test_json_config_accepted(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(short_doc()))
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path)]) == 0


def test_yaml_scientific_notation():
    doc = config.load(CONFIGS / "sim-penalty.yaml")
    assert doc["strategy"]["eps"] == 1e-8


def test_reproduce_penalty(tmp_path, capsys):
    assert cli.main(["reproduce", "sim-penalty", "--out", str(tmp_path), "--strict"]) == 0
    report = json.loads((tmp_path / "sim-penalty.json").read_text())
    assert report["metrics"]["violated"] is False
    out = capsys.readouterr().out
    assert "input range" in out and "chatter_count" in out


def test_reproduce_standard_strict(tmp_path):
    assert cli.main(["reproduce", "sim-standard", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "sim-standard.json").read_text())["metrics"]["violated"] is True
    assert cli.main(["reproduce", "sim-standard", "--out", str(tmp_path), "--strict"]) == 2


def test_reproduce_real_standard(tmp_path):
    assert cli.main(["reproduce", "real-standard", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "real-standard.json").read_text())
    assert report["scenario"]["dt"] == 0.167
    assert report["scenario"]["system"]["B"] == [[0.0], [30.30]]


def test_reproduce_unknown_preset(tmp_path, capsys):
    assert cli.main(["reproduce", "nope", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    for name in sim.PRESETS:
        assert name in err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "sim-standard"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "sim-standard", "--dts", "0.1,-1"])
    assert exc.value.code == 1


def test_missing_file_is_error(tmp_path):
    assert cli.main(["simulate", str(tmp_path / "missing.yaml")]) == 1


def run_check(tmp_path, name, *extra):
    out = tmp_path / "diag.json"
    assert cli.main(["check-cbf", str(CONFIGS / name), "--out", str(out), *extra]) == 0
    return json.loads(out.read_text())


def test_check_cbf_ellipse_singular_line(tmp_path):
    d = run_check(tmp_path, "check-ellipse.yaml")
    scan = d["singular_set"]
    assert scan["n_checked"] == 201 * 201
    pts = np.array(scan["singular_points"])
    assert len(pts) == 201
    np.testing.assert_allclose(pts[:, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(np.sort(pts[:, 0]), np.linspace(-1, 1, 201))
    feas = d["condition_feasibility"]
    assert 0 < feas["n_in_set"] <= 201 * 201
    assert feas["fraction_feasible"] == 1.0


def test_check_cbf_affine_first_order(tmp_path):
    d = run_check(tmp_path, "check-affine.yaml", "--grid", "21")
    assert d["singular_set"]["relative_degree"] == 1
    assert d["singular_set"]["n_singular"] == 0


def test_check_cbf_altitude_second_order(tmp_path):
    d = run_check(tmp_path, "check-altitude.yaml", "--grid", "11")
    assert d["singular_set"]["relative_degree"] == 2
    # pB = 0 everywhere, so the whole grid is singular for the first-order condition
    assert d["singular_set"]["n_singular"] == 121


def test_check_cbf_polytope(tmp_path):
    d = run_check(tmp_path, "sim-affine.yaml", "--grid", "101")
    assert d["polytope_inner_check"]["n_violations"] == 0
    assert d["polytope_inner_check"]["n_inside_polytope"] > 0
    assert [s["relative_degree"] for s in d["singular_set"]] == [1] * 7


def test_check_cbf_needs_box(tmp_path):
    doc = short_doc()
    assert cli.main(["check-cbf", str(write_yaml(tmp_path / "c.yaml", doc))]) == 1


def test_check_cbf_stdout(tmp_path, capsys):
    assert cli.main(["check-cbf", str(CONFIGS / "check-affine.yaml"), "--grid", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["singular_set"]["n_checked"] == 9


def test_sweep_rows(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", short_doc())
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", str(cfg), "--dts", "0.01,0.005,0.001", "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].split(",") == ["dt", *cli.SWEEP_COLUMNS]
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.01", "0.005", "0.001"]


def test_sweep_duplicates_repeat_rows(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", short_doc())
    assert cli.main(["sweep", str(cfg), "--dts", "0.01,0.01"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 3 and lines[1] == lines[2]


def test_sweep_preset_name(capsys):
    assert cli.main(["sweep", "real-penalty", "--dts", "0.167"]) == 0
    row = capsys.readouterr().out.strip().split("\n")[1].split(",")
    assert row[2] == "0"  # violated


def test_csv_round_trip(tmp_path):
    scn = sim.preset("sim-penalty")
    traj, _ = sim.run(scn)
    cli.execute(scn, tmp_path / "t.csv", tmp_path / "r.json")
    cols = read_csv((tmp_path / "t.csv").read_text(encoding="utf-8"))
    ref = {
        "t": traj.t, "x1": traj.x[:, 0], "x2": traj.x[:, 1], "u1": traj.u[:, 0],
        "u_proposed1": traj.u_proposed[:, 0], "h_min": traj.h_min, "lg_norm": traj.lg_norm,
        "active": traj.active, "fallback": traj.fallback,
    }
    for name, col in ref.items():
        col = np.asarray(col, float)
        # 9 significant digits: relative error below 5e-9
        assert np.all(np.abs(cols[name] - col) <= 5e-9 * np.abs(col) + 1e-300), name


@pytest.mark.parametrize("name", ["sim-penalty", "sim-transformed", "sim-affine", "real-penalty", "real-affine"])
def test_config_echo_reproduces_run(tmp_path, name):
    scn = sim.preset(name)
    if name.startswith("sim"):
        scn = dataclasses.replace(scn, horizon=2.0)
    report = cli.execute(scn, tmp_path / "a.csv", tmp_path / "a.json")
    echo = json.loads((tmp_path / "a.json").read_text())["scenario"]
    assert echo == report["scenario"]
    cfg = tmp_path / "echo.json"
    cfg.write_text(json.dumps(echo))
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "b")]) == 0
    stem = echo["name"]
    assert (tmp_path / "b" / f"{stem}.csv").read_bytes() == (tmp_path / "a.csv").read_bytes()


def test_cli_module_entry(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "dtcbf", "reproduce", "real-transformed", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "real-transformed.csv").exists()
