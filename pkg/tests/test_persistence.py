import json

import numpy as np
import pytest

from hlcurrents.currents import GridSpec, smooth_vertical
from hlcurrents.domain_maps import Bidisk, HenonLikeMap
from hlcurrents.persistence import (ConfigError, RunManifest, fmt, load_config, load_manifest,
                                   read_grid, read_map, sha256_file, write_csv, write_grid,
                                   write_map)


def test_grid_round_trip_is_exact(tmp_path, D):
    u = smooth_vertical(0.3, D, 1.0, 16)
    digest = write_grid(tmp_path / "u.grid", u)
    assert digest == sha256_file(tmp_path / "u.grid")
    assert (tmp_path / "u.grid").stat().st_size == 64 + 8 * 16**4
    v = read_grid(tmp_path / "u.grid")
    assert np.array_equal(v.values, u.values)
    assert v.orientation == u.orientation and v.grid == u.grid
    assert write_grid(tmp_path / "v.grid", v) == digest


def test_grid_rejects_foreign_file(tmp_path):
    (tmp_path / "x.grid").write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(ConfigError):
        read_grid(tmp_path / "x.grid")


def test_grid_rejects_truncated_payload(tmp_path, D):
    write_grid(tmp_path / "u.grid", smooth_vertical(0.0, D, 1.0, 16))
    data = (tmp_path / "u.grid").read_bytes()
    (tmp_path / "u.grid").write_bytes(data[:-8])
    with pytest.raises(ConfigError, match="expected"):
        read_grid(tmp_path / "u.grid")


def test_fmt_is_round_trippable():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert complex(fmt(complex(1.5, -2.25))) == complex(1.5, -2.25)


def test_csv_is_deterministic(tmp_path):
    rows = [(1, 0.1, 2j), (2, 1 / 3, -1.0)]
    assert write_csv(tmp_path / "a.csv", ["k", "x", "y"], rows) == write_csv(tmp_path / "b.csv", ["k", "x", "y"], rows)


def test_config_defaults_and_overrides(tmp_path, monkeypatch):
    monkeypatch.delenv("HLCURRENTS_OUT", raising=False)
    cfg = load_config(None, {"run.seed": 7})
    assert cfg.seed == 7 and cfg.resolution == 32
    assert cfg.tolerances["slice_mass"] == 1e-3
    monkeypatch.setenv("HLCURRENTS_OUT", str(tmp_path))
    assert load_config().output_dir == str(tmp_path)


@pytest.mark.parametrize("body, field", [
    ("[run]\nresolution = many\n", "resolution"),
    ("[tolerances]\nslice_mass = -1\n", "slice_mass"),
    ("[run]\nresolution = 4\n", "resolution"),
])
def test_config_errors_name_the_field(tmp_path, body, field):
    p = tmp_path / "bad.ini"
    p.write_text(body)
    with pytest.raises(ConfigError, match=field):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.ini")


def test_map_file_round_trip(tmp_path):
    f = HenonLikeMap([1.0 - 0.5j, 0.2, 1.0], 0.3 + 0.1j)
    write_map(tmp_path / "m.ini", f, Bidisk(4.0, 3.5))
    g, D = read_map(tmp_path / "m.ini")
    np.testing.assert_array_equal(g.coeffs, f.coeffs)
    assert g.twist == f.twist
    assert (D.m_radius, D.n_radius) == (4.0, 3.5)


@pytest.mark.parametrize("body", [
    "[other]\n",
    "[map]\ntwist = 0.1 0\n",
    "[map]\npoly_coeffs = 1 0, x 0\ntwist = 0.1 0\n",
    "[map]\npoly_coeffs = -2 0, 0 0, 1 0\ntwist = 0 0\n",
])
def test_bad_map_files(tmp_path, body):
    p = tmp_path / "m.ini"
    p.write_text(body)
    with pytest.raises(ConfigError):
        read_map(p)


def test_manifest_records_outputs_and_checks(tmp_path):
    out = tmp_path / "x.csv"
    write_csv(out, ["a"], [(1,)])
    m = RunManifest("green", {"resolution": 16}, 3)
    m.add_output("x.csv", out)
    m.add_check("mass", 0.5, False, fatal=False)
    assert not m.failed
    m.add_check("ratio", 1.5, False)
    assert m.failed
    m.complete = True
    m.write(tmp_path)
    data = load_manifest(tmp_path)
    assert data["complete"] and data["outputs"]["x.csv"] == sha256_file(out)
    assert {"numpy", "scipy", "python"} <= set(data["versions"])
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 3
