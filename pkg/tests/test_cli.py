import csv
import io
import json

import pytest

from si_workbench.cli import (EXIT_CONFIG, EXIT_DEGENERATE, EXIT_OK, EXIT_SINGULAR,
                              POTENTIAL_COLUMNS, SWEEP_COLUMNS, run)
from si_workbench.model import catalog, make_case

OSC = ["--case", "1-1", "--set", "a0=0.5", "--set", "b1=-2", "--set", "b0=0"]


def call(*argv):
    buf = io.StringIO()
    code = run(list(argv), stdout=buf)
    return code, buf.getvalue()


def report(*argv):
    code, text = call(*argv)
    return code, json.loads(text)


def test_catalog_text_and_json():
    code, text = call("catalog")
    assert code == EXIT_OK and len(text.strip().splitlines()) == 1 + len(catalog())
    code, rows = report("catalog", "--json")
    assert rows == [c.to_dict() for c in catalog()]


def test_verify_oscillator():
    code, rep = report("verify", *OSC)
    assert code == EXIT_OK
    r = rep["result"]
    assert r["verdict"] == "reducible" and r["match"]
    assert r["si"]["estimated_R2"] == pytest.approx(4.0, abs=1e-12)


def test_verify_off_constraint():
    a1 = make_case("1-4").shape_dict["a1"]
    code, rep = report("verify", "--case", "1-4", "--set", f"b0={2 * a1 + 0.5}")
    assert code == EXIT_OK
    assert rep["result"]["verdict"] == "not-SI (constraint violated)"


def test_verify_centered_log_quad_is_irreducible():
    code, rep = report("verify", "--case", "2-3dep")
    assert code == EXIT_OK and rep["result"]["verdict"] == "irreducible"


def test_verify_with_row_classification():
    code, rep = report("verify", "--case", "2-1", "--samples", "3", "--seed", "4")
    assert code == EXIT_OK and rep["result"]["row_classification"]["matches"]


@pytest.mark.parametrize("argv", [
    ["verify"],
    ["verify", "--case", "9-9"],
    ["verify", "--case", "1-1", "--set", "zz=1"],
    ["verify", "--case", "1-1", "--set", "a0"],
    ["verify", "--case", "1-1", "--grid", "100"],
    ["verify", "--case", "1-1", "--tol", "-1"],
    ["spectrum", "--case", "1-1", "--interval", "3,1"],
    ["sweep", "--case", "1-4"],
    ["frobnicate"],
])
def test_bad_configuration(argv):
    assert call(*argv)[0] == EXIT_CONFIG


def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# oscillator\ncase = 1-1\na0 = 0.5\nb1 = -2\nb0 = 0\n")
    assert report("verify", "--config", str(p))[1]["result"]["verdict"] == "reducible"
    p.write_text("case = 1-1\nnot an assignment\n")
    assert call("verify", "--config", str(p))[0] == EXIT_CONFIG


def test_ladder_oscillator():
    code, rep = report("ladder", *OSC, "--levels", "2")
    assert code == EXIT_OK
    assert rep["result"]["accumulation_levels"] == [-1.0, 1.0, 3.0, 5.0]


def test_ladder_degenerate_without_closed_form():
    code, rep = report("ladder", "--case", "2-2", "--levels", "3")
    assert code == EXIT_DEGENERATE
    notes = rep["result"]["notes"]
    assert any("flag-degenerate" in n for n in notes)
    assert any("no closed form" in n for n in notes)
    assert rep["result"]["zmap"]["kind"] == "numeric"


def test_spectrum_exponential():
    code, rep = report("spectrum", "--case", "3", "--set", "a0=0", "--levels", "4",
                       "--grid", "1024")
    assert code == EXIT_OK and rep["result"]["passed"]


def test_spectrum_writes_potentials(tmp_path):
    p = tmp_path / "pot.csv"
    code, _ = report("spectrum", *OSC, "--grid", "512", "--levels", "4", "--csv", str(p))
    assert code == EXIT_OK
    rows = list(csv.reader(open(p)))
    assert rows[0] == list(POTENTIAL_COLUMNS)
    # b0 = 0 puts the pole of Vi2 on the middle grid point
    assert sum(r[5] == "" for r in rows[1:]) == 1


def test_parasusy_oscillator():
    code, rep = report("parasusy", *OSC, "--interval=-6,6", "--grid", "1024")
    r = rep["result"]
    assert code == EXIT_OK and r["passed"]
    assert r["exact"]["Q-^3"] and r["exact"]["Q+^3"]


def test_parasusy_hatted_pole_is_a_config_error():
    code, _ = call("parasusy", *OSC, "--interval=-6,6", "--grid", "256",
                   "--intermediate", "i2")
    assert code == EXIT_CONFIG


def test_numeric_turning_point_on_explicit_interval():
    # the numeric z(x) of 2-2 reaches a zero of A near x = -1.9
    code, _ = call("spectrum", "--case", "2-2", "--interval=-3,3", "--grid", "256")
    assert code == EXIT_SINGULAR


def test_sweep_finds_the_constraint(tmp_path):
    a1 = make_case("1-4").shape_dict["a1"]
    p = tmp_path / "sweep.csv"
    code, rep = report("sweep", "--case", "1-4", "--sweep", f"b0={2 * a1 - 1}:{2 * a1 + 1}:21",
                       "--csv", str(p))
    assert code == EXIT_OK
    rows = list(csv.reader(open(p)))
    assert rows[0] == list(SWEEP_COLUMNS) and len(rows) == 22
    assert rep["result"]["minimum"]["param"] == pytest.approx(2 * a1)
    assert rep["result"]["minimum"]["max_residual"] <= 1e-9


def test_sweep_text_output():
    code, text = call("sweep", "--case", "1-1", "--sweep", "b0=-1:1:3")
    lines = text.strip().splitlines()
    assert code == EXIT_OK and lines[0] == ",".join(SWEEP_COLUMNS) and len(lines) == 4


def test_potentials_csv(tmp_path):
    p = tmp_path / "pot.csv"
    code, rep = report("potentials", "--case", "3", "--set", "a0=0", "--grid", "64",
                       "--csv", str(p))
    assert code == EXIT_OK
    rows = list(csv.reader(open(p)))
    assert rows[0] == list(POTENTIAL_COLUMNS) and len(rows) == 65
    assert call("potentials", "--case", "3")[0] == EXIT_CONFIG


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert call("verify", "--case", "2-1", "--samples", "2", "--out", str(p))[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert call("ladder", *OSC)[1] == call("ladder", *OSC)[1]


def test_timing_is_opt_in():
    _, rep = report("verify", *OSC)
    assert "timing_seconds" not in rep
    _, rep = report("verify", *OSC, "--timing")
    assert rep["timing_seconds"] >= 0
