import json
import subprocess
import sys

import numpy as np
import pytest

from fracmet import ConfigError, SymTensorField
from fracmet.cli import main
from fracmet.generators import make_metric
from fracmet.report import config_hash, provenance, write_csv

from helpers import grid2, rand_sym


def run_cli(args):
    return main(list(args))


@pytest.fixture()
def base_config(tmp_path):
    cfg = {
        "grid": {"dim": 2, "n": 8, "stencil_order": 4},
        "metric": {"tag": "random_smooth", "amplitude": 0.2},
        "bundle": "S2T*M",
        "p": {"p": 1.5, "route": "spectral"},
        "output": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return cfg, path, tmp_path


# --- generators ---------------------------------------------------------------

def test_generators_deterministic_and_spd():
    grid = grid2()
    a = make_metric(grid, "random_smooth", seed=3, amplitude=0.3)
    b = make_metric(grid, "random_smooth", seed=3, amplitude=0.3)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    assert np.linalg.eigvalsh(a.coeffs).min() >= 0.5 - 1e-12
    c = make_metric(grid, "random_smooth", seed=4, amplitude=0.3)
    assert np.abs(a.coeffs - c.coeffs).max() > 1e-3


def test_generator_unknown_tag_and_extras():
    grid = grid2()
    with pytest.raises(ConfigError, match="unknown metric generator"):
        make_metric(grid, "bumpy")
    with pytest.raises(ConfigError, match="wavelength"):
        make_metric(grid, "conformal", wavelength=2)


def test_generator_from_file_roundtrip(tmp_path):
    grid = grid2()
    g = make_metric(grid, "conformal", amplitude=0.2)
    path = tmp_path / "metric.json"
    path.write_text(json.dumps(SymTensorField(grid, g.coeffs).to_json_dict()))
    back = make_metric(grid, "from_file", path=str(path))
    np.testing.assert_allclose(back.coeffs, g.coeffs, atol=1e-15)


# --- report provenance --------------------------------------------------------

def test_config_hash_stable_and_sensitive():
    cfg = {"a": 1, "b": {"c": [1, 2]}}
    assert config_hash(cfg) == config_hash({"b": {"c": [1, 2]}, "a": 1})
    assert config_hash(cfg) != config_hash({"a": 2, "b": {"c": [1, 2]}})


def test_write_csv_embeds_provenance(tmp_path):
    cfg = {"x": 1}
    path = tmp_path / "t.csv"
    write_csv(path, ["a"], [(1.0,)], cfg)
    text = path.read_text()
    assert config_hash(cfg) in text
    assert provenance(cfg)["version"] in text


# --- command-line interface ---------------------------------------------------

def test_cli_config_errors_name_field(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"grid": {"dim": 2, "n": 7}}))
    code = run_cli(["spectrum", "--config", str(path)])
    assert code == 2
    assert "grid" in capsys.readouterr().err
    path.write_text(json.dumps({"p": {"route": "sideways"}}))
    code = run_cli(["geodesic", "--config", str(path),
                    "--out", str(tmp_path / "o")])
    assert code == 2
    assert "p.route" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path, capsys):
    code = run_cli(["spectrum", "--config", str(tmp_path / "nope.json")])
    assert code == 2


def test_cli_spectrum_deterministic(base_config):
    cfg, path, tmp = base_config
    out1, out2 = tmp / "r1", tmp / "r2"
    assert run_cli(["spectrum", "--config", str(path), "--out", str(out1)]) == 0
    assert run_cli(["spectrum", "--config", str(path), "--out", str(out2)]) == 0
    assert (out1 / "spectrum.csv").read_bytes() == (out2 / "spectrum.csv").read_bytes()
    report = json.loads((out1 / "spectrum_report.json").read_text())
    assert report["config_sha256"] == config_hash(cfg)
    assert report["count"] == 192


def test_cli_calc_routes_agree(base_config):
    cfg, path, tmp = base_config
    cfg["calc"] = {"exponent": -1.0, "route": "both"}
    path.write_text(json.dumps(cfg))
    out = tmp / "calc"
    assert run_cli(["calc", "--config", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "calc_report.json").read_text())
    assert report["route_disagreement"] < 1e-6
    assert (out / "contour.png").exists()
    assert (out / "contour_nodes.csv").exists()


def test_cli_dcheck_passes(base_config):
    cfg, path, tmp = base_config
    out = tmp / "dcheck"
    assert run_cli(["dcheck", "--config", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "dcheck_report.json").read_text())
    assert report["passed"]
    assert all(o >= 1.9 for o in report["orders"].values())


def test_cli_geodesic_runs(base_config):
    cfg, path, tmp = base_config
    cfg["run"] = {"dt": 0.005, "t_end": 0.02, "variant": "FULL",
                  "velocity": {"tag": "random", "amplitude": 0.05}}
    path.write_text(json.dumps(cfg))
    out = tmp / "geo"
    assert run_cli(["geodesic", "--config", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "geodesic_report.json").read_text())
    assert report["energy_drift"] < 1e-10
    assert (out / "trace.csv").exists()
    assert (out / "trace.png").exists()


def test_cli_entry_point_subprocess(base_config):
    # the installed console script resolves and reports config errors with
    # the documented exit code
    cfg, path, tmp = base_config
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"metric": {"tag": "nope"}}))
    proc = subprocess.run([sys.executable, "-m", "fracmet.cli", "spectrum",
                           "--config", str(bad)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "metric" in proc.stderr
