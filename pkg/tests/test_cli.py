import json
import os
import subprocess
import sys
from importlib import resources

import pytest

from gammacell import cli
from gammacell.io import read_csv, read_json, strip_timestamp


def config(name):
    return str(resources.files("gammacell").joinpath("data/configs", name))


def run(args, tmp_path, capsys=None):
    return cli.main(list(args) + ["--output-dir", str(tmp_path)])


def test_e1_golden(tmp_path):
    assert run(["e1", config("e1_modica_mortola.toml")], tmp_path) == cli.EXIT_OK
    doc = read_json(tmp_path / "e1.json")
    assert doc["schema"] == 1 and "timestamp" in doc
    assert abs(doc["result"]["value"] - 8.0 / 3.0) <= 1e-3
    header, rows = read_csv(tmp_path / "e1_profile.csv")
    assert header == ["t", "theta0"] and len(rows) == 2049
    assert rows[0][1] == -1.0 and rows[-1][1] == 1.0
    header, _ = read_csv(tmp_path / "e1_lscan.csv")
    assert header[:2] == ["L", "value"]


def test_unconverged_exit_code(tmp_path):
    code = run(["e1", config("e1_modica_mortola.toml"), "--set", "solver.maxiter=2",
                "--set", "solver.grid_n=256"], tmp_path)
    assert code == cli.EXIT_UNCONVERGED
    assert read_json(tmp_path / "e1.json")["result"]["converged"] is False


def test_configuration_errors(tmp_path, capsys):
    assert run(["e1", str(tmp_path / "missing.toml")], tmp_path) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text('[density]\nname = "nope"\nN = 1\n[jump]\nnu=[1.0]\nv_minus=[-1.0]\nv_plus=[1.0]\n')
    assert run(["e1", str(bad)], tmp_path) == cli.EXIT_CONFIG
    assert run(["e1", config("e1_modica_mortola.toml"), "--set", "novalue"], tmp_path) == cli.EXIT_CONFIG
    assert run(["e1", config("e1_modica_mortola.toml"), "--set", "solver.grid_n=16"], tmp_path) == cli.EXIT_CONFIG
    incompatible = tmp_path / "incompatible.toml"
    incompatible.write_text('[jump]\ncatalog = "mm2_step"\nnu = [0.0, 1.0]\nv_minus = [-1.0, 0.0]\n'
                            'v_plus = [1.0]\n')
    assert run(["e1", str(incompatible)], tmp_path) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.toml"
    path.write_text('[run]\nseed = 3\n[solver]\ngrid_n = 512\n')
    monkeypatch.setenv("GAMMACELL_WORKERS", "3")
    cfg = cli.load_config(path)
    assert cfg["run"]["workers"] == 3 and cfg["run"]["seed"] == 3 and cfg["solver"]["grid_n"] == 512
    cfg = cli.load_config(path, ["solver.grid_n=1024", "solver.ramp=\"kernel\""], workers=2, seed=5)
    assert cfg["run"]["workers"] == 2 and cfg["run"]["seed"] == 5
    assert cfg["solver"]["grid_n"] == 1024 and cfg["solver"]["ramp"] == "kernel"
    monkeypatch.setenv("GAMMACELL_WORKERS", "x")
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)
    monkeypatch.delenv("GAMMACELL_WORKERS")
    assert cli.load_config(path)["run"]["workers"] == 1


def test_echo_excludes_run_environment(tmp_path):
    cfg = cli.load_config(config("e1_modica_mortola.toml"), output_dir=str(tmp_path), workers=2)
    echo = cli._echo(cfg)
    assert "workers" not in echo["run"] and "output_dir" not in echo["run"] and "_base" not in echo


def test_limit_density(tmp_path):
    assert run(["limit-density", config("limit_density_modica_mortola.toml")], tmp_path) == cli.EXIT_OK
    header, rows = read_csv(tmp_path / "kernel_profile.csv")
    assert header == ["t", "p", "P"]
    assert rows[0][2] == 0.0 and rows[-1][2] == 1.0
    doc = read_json(tmp_path / "limit_density.json")
    assert doc["value"] > 8.0 / 3.0


def test_eper_and_scan(tmp_path):
    assert run(["eper", config("eper_div_custom.toml")], tmp_path) == cli.EXIT_OK
    doc = read_json(tmp_path / "eper.json")
    assert doc["result"]["value"] <= doc["result"]["e1_value"] + 1e-6
    assert run(["scan", config("scan_modica_mortola.toml")], tmp_path) == cli.EXIT_OK


def test_recover_empty(tmp_path):
    assert run(["recover", config("recover_empty.toml")], tmp_path) == cli.EXIT_OK
    doc = read_json(tmp_path / "recover.json")
    assert all(r["energy"] == 0.0 for r in doc["traces"]["primary"]["rows"])
    _, rows = read_csv(tmp_path / "trace_primary.csv")
    assert all(r[1] == 0.0 for r in rows)


def test_recover_1d(tmp_path):
    assert run(["recover", config("recover_modica_mortola_1d.toml")], tmp_path) == cli.EXIT_OK
    doc = read_json(tmp_path / "recover.json")
    assert doc["traces"]["primary"]["relative_gap"] <= 0.02
    assert doc["traces"]["modified"]["extrapolated"] <= doc["traces"]["primary"]["extrapolated"] + 1e-3


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["scan", config("scan_modica_mortola.toml")], out) == cli.EXIT_OK
    assert strip_timestamp(read_json(a / "scan.json")) == strip_timestamp(read_json(b / "scan.json"))
    for name in os.listdir(a):
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gammacell.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "gammacell" in out.stdout
    out = subprocess.run([sys.executable, "-m", "gammacell.cli", "bogus"], capture_output=True, text=True)
    assert out.returncode == 2


def test_catalog_configs_parse():
    for entry in cli.load_catalog():
        cfg = cli.load_config(overrides=[f'jump.catalog="{entry["id"]}"'])
        d = cli.build_density(cfg)
        j = cli.build_jump(cfg, d)
        assert j.layout == d.layout
    with pytest.raises(cli.ConfigError):
        cli.catalog_entry("nope")
    assert json.dumps(cli.DEFAULTS)
