import json

import pytest

from hlcurrents.cli import main
from hlcurrents.persistence import read_grid, sha256_file


@pytest.fixture
def run_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HLCURRENTS_OUT", str(tmp_path / "out"))
    return tmp_path


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_verify_map_passes_for_standard_map(run_dir):
    assert main(["--run-dir", str(run_dir / "v"), "verify-map", "--samples", "128", "--trials", "10"]) == 0
    m = _manifest(run_dir / "v")
    assert m["complete"]
    assert all(c["passed"] for c in m["checks"])


def test_green_zero_stages_writes_seed_and_round_trips(run_dir):
    first = run_dir / "g0"
    assert main(["--resolution", "16", "--run-dir", str(first), "green", "--n", "0"]) == 0
    seed = first / "green.grid"
    second = run_dir / "g1"
    assert main(["--resolution", "16", "--run-dir", str(second), "green", "--n", "0",
                 "--seed", f"grid:{seed}"]) == 0
    assert sha256_file(second / "green.grid") == sha256_file(seed)


def test_green_stages_contract(run_dir):
    d = run_dir / "g"
    assert main(["--resolution", "16", "--run-dir", str(d), "green", "--n", "3"]) == 0
    m = _manifest(d)
    assert int(m["scalars"]["stages"]) == 3
    assert read_grid(d / "green.grid").grid.resolution == 16


def test_missing_seed_grid_is_usage_error(run_dir):
    assert main(["--run-dir", str(run_dir / "g"), "green", "--seed", "grid:/nonexistent.grid"]) == 2


@pytest.mark.parametrize("n", [3, 4])
def test_equilibrium_points_have_unit_mass(run_dir, n):
    d = run_dir / f"e{n}"
    assert main(["--run-dir", str(d), "equilibrium", "--n", str(n), "--a", "0.1", "--b", "0.2j"]) == 0
    m = _manifest(d)
    assert float(m["scalars"]["mass"]) == 1.0
    lines = (d / f"mu_points_n{n}.csv").read_text().splitlines()
    assert lines[0] == "re_z,im_z,re_w,im_w,weight"
    assert len(lines) == 1 + 4**n


def test_rejected_input_is_usage_error(run_dir):
    d = run_dir / "v"
    assert main(["--run-dir", str(d), "verify-map", "--samples", "10"]) == 2
    assert not _manifest(d)["complete"]


def test_unknown_flag_is_usage_error(run_dir):
    assert main(["green", "--bogus"]) == 2


def test_bad_map_value_is_usage_error(run_dir):
    p = run_dir / "m.ini"
    p.write_text("[map]\npoly_coeffs = a b\ntwist = 0.1 0\n")
    assert main(["--run-dir", str(run_dir / "x"), "verify-map", "--map", str(p)]) == 2


def test_report_empty_directory(run_dir):
    (run_dir / "empty").mkdir()
    assert main(["report", str(run_dir / "empty")]) == 0


def test_report_flags_tampered_output(run_dir):
    d = run_dir / "runs" / "g"
    assert main(["--resolution", "16", "--run-dir", str(d), "green", "--n", "0"]) == 0
    assert main(["report", str(run_dir / "runs")]) == 0
    with open(d / "green.grid", "ab") as fh:
        fh.write(b"\0")
    assert main(["report", str(run_dir / "runs")]) == 1
    assert "checksum mismatch" in (run_dir / "runs" / "report.csv").read_text()


def test_report_marks_incomplete_runs(run_dir):
    d = run_dir / "runs" / "half"
    d.mkdir(parents=True)
    (d / "manifest.json").write_text(json.dumps({"subcommand": "green", "complete": False,
                                                 "checks": [], "outputs": {}}))
    main(["report", str(run_dir / "runs")])
    assert "incomplete" in (run_dir / "runs" / "report.csv").read_text()
