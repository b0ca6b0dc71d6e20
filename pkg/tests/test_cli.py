import json
import subprocess
import sys

import numpy as np
import pytest

from nvensemble.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, EXIT_OK, main

D = 2870.685

ZERO_FIELD = f"""
[simulation]
freq_start_mhz = {D - 20}
freq_stop_mhz = {D + 20}
n_points = 401
n_samples = 10000

[noise]
gamma_mhz = 0.5
db_mhz = 1.2
de_mhz = 3.0
"""

IN_FIELD = f"""
[simulation]
freq_start_mhz = {D - 100}
freq_stop_mhz = {D + 100}
n_points = 801
n_samples = 10000

[noise]
gamma_mhz = 0.5
db_mhz = 1.2
de_mhz = 3.0

[field]
magnitude_mt = 5.0
direction = 0, 0, 1
"""

FIT = """
[fit]
init_gamma_mhz = 1.0
init_db_mhz = 1.0
init_de_mhz = 3.0

[field]
bz_mt = 5.0
"""


def write(path, text):
    path.write_text(text)
    return path


def outputs(directory):
    return sorted(p.name for p in directory.iterdir() if not p.name.endswith(".ini"))


def test_simulate_writes_csv_and_metadata(tmp_path):
    cfg = write(tmp_path / "zf.ini", ZERO_FIELD)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a.csv")]) == EXIT_OK
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "freq_mhz,signal" and len(lines) == 402
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["seed"] == 20190101 and meta["command"] == "simulate" and len(meta["config_hash"]) == 16
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.meta.json").read_bytes() == (tmp_path / "b.csv.meta.json").read_bytes()
    assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "c.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_simulate_validation_error_names_fields(tmp_path, capsys):
    cfg = write(tmp_path / "bad.ini", ZERO_FIELD.replace(f"freq_stop_mhz = {D + 20}", "freq_stop_mhz = 2800")
                + "colour = red\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "simulation.freq_start_mhz" in err and "simulation.freq_stop_mhz" in err
    assert "noise.colour: unknown key" in err
    assert outputs(tmp_path) == []


def test_simulate_missing_config_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "x.csv")]) == EXIT_IO
    assert outputs(tmp_path) == []


def test_project_field(tmp_path):
    cfg = write(tmp_path / "f.ini", "[field]\nmagnitude_mt = 1\ndirection = 1 1 1\n")
    assert main(["project-field", "--config", str(cfg), "--out", str(tmp_path / "p.csv")]) == EXIT_OK
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "axis,ux,uy,uz,zeeman_mhz"
    np.testing.assert_allclose([float(r.split(",")[-1]) for r in rows[1:]], [28.7, -28.7 / 3, -28.7 / 3, -28.7 / 3])


def test_field_config_conflict(tmp_path, capsys):
    cfg = write(tmp_path / "f.ini", "[field]\nbz_mt = 1\nmagnitude_mt = 2\ndirection = 1 0 0\n")
    assert main(["project-field", "--config", str(cfg)]) == EXIT_CONFIG
    assert "field.bx_mt" in capsys.readouterr().err


@pytest.fixture(scope="module")
def spectra(tmp_path_factory):
    d = tmp_path_factory.mktemp("spectra")
    for name, text in (("zf", ZERO_FIELD), ("inf", IN_FIELD)):
        assert main(["simulate", "--config", str(write(d / f"{name}.ini", text)), "--seed", "11",
                     "--out", str(d / f"{name}.csv")]) == EXIT_OK
    write(d / "fit.ini", FIT)
    return d


def test_fit_round_trip(spectra, tmp_path):
    out = tmp_path / "fit.kv"
    argv = ["fit", "--config", str(spectra / "fit.ini"), "--zero-field", str(spectra / "zf.csv"),
            "--in-field", str(spectra / "inf.csv"), "--out", str(out)]
    assert main(argv) == EXIT_OK
    kv = dict(line.split("=", 1) for line in out.read_text().splitlines())
    assert float(kv["gamma_mhz"]) == pytest.approx(0.5, rel=0.1)
    assert float(kv["db_mhz"]) == pytest.approx(1.2, rel=0.1)
    assert float(kv["de_mhz"]) == pytest.approx(3.0, rel=0.1)
    assert outputs(tmp_path) == ["fit.kv", "fit.kv.in_field.csv", "fit.kv.meta.json", "fit.kv.report.txt",
                                 "fit.kv.zero_field.csv"]
    curve = (tmp_path / "fit.kv.zero_field.csv").read_text().splitlines()
    assert curve[0] == "freq_mhz,data,model" and len(curve) == 402


def test_fit_input_errors(spectra, tmp_path, capsys):
    base = ["fit", "--config", str(spectra / "fit.ini"), "--in-field", str(spectra / "inf.csv"),
            "--out", str(tmp_path / "f.kv")]
    assert main(base + ["--zero-field", str(tmp_path / "missing.csv")]) == EXIT_IO
    lines = (spectra / "zf.csv").read_text().splitlines()
    # a file cut off in the middle of row 41
    truncated = write(tmp_path / "t.csv", "\n".join(lines[:40] + [lines[40].split(",")[0] + ","]) + "\n")
    capsys.readouterr()
    assert main(base + ["--zero-field", str(truncated)]) == EXIT_IO
    assert "t.csv:41:" in capsys.readouterr().err
    assert main(["fit", "--config", str(spectra / "fit.ini"), "--out", str(tmp_path / "f.kv")]) == EXIT_CONFIG
    assert outputs(tmp_path) == ["t.csv"]


def test_fit_failure_leaves_no_outputs(spectra, tmp_path, capsys):
    flat = write(tmp_path / "flat.csv", "freq_mhz,intensity\n" + "\n".join(
        f"{D - 20 + 0.1 * i!r},1.0" for i in range(401)) + "\n")
    argv = ["fit", "--config", str(spectra / "fit.ini"), "--zero-field", str(flat),
            "--in-field", str(spectra / "inf.csv"), "--out", str(tmp_path / "f.kv")]
    assert main(argv) == EXIT_FIT
    assert "stage 'scan'" in capsys.readouterr().err
    assert outputs(tmp_path) == ["flat.csv"]


def test_sweep(tmp_path):
    cfg = write(tmp_path / "s.ini", "[sweep]\nconcentrations_1e17_cm3 = 1, 5, 20\nn_samples = 512\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == EXIT_OK
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("# argmin mode=dip")
    meta = json.loads((tmp_path / "s.csv.meta.json").read_text())
    assert meta["calibration"] == "default"


def test_sweep_empty_concentrations(tmp_path, capsys):
    cfg = write(tmp_path / "s.ini", "[sweep]\nconcentrations_1e17_cm3 =\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == EXIT_CONFIG
    assert "sweep.concentrations_1e17_cm3: must not be empty" in capsys.readouterr().err
    assert outputs(tmp_path) == []


def test_sweep_bad_calibration_lists_every_problem(tmp_path, capsys):
    cal = write(tmp_path / "cal.txt", "sigma_per_sqrt_hz=0\nod_nd=x\n")
    assert main(["sweep", "--calibration", str(cal), "--out", str(tmp_path / "s.csv")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "sigma_per_sqrt_hz out of range" in err and "od_nd is not a number" in err
    assert err.count("missing key") == 8


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "nvensemble.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "fit", "sweep", "project-field"):
        assert cmd in res.stdout
