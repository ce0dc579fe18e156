import csv
import math

import numpy as np
import pytest

from configs import case_label, closed_form_cases
from si_workbench import symexpr as se
from si_workbench.changevar import (ClosedForm, TurningPointError, closed_z, numeric_like,
                                    numeric_z, x_potential)
from si_workbench.model import Poly, closed_z_available, make_case

CASES = closed_form_cases()
IDS = [case_label(c) for c in CASES]


def _interior(zmap, n=100):
    return np.linspace(*zmap.interval, n + 2)[1:-1]


@pytest.mark.parametrize("case", CASES, ids=IDS)
def test_closed_form_defect(case):
    assert closed_z_available(case)
    zm = closed_z(case)
    assert isinstance(zm, ClosedForm)
    assert zm.residual(case.family, _interior(zm)) <= 1e-10


@pytest.mark.parametrize("case", CASES, ids=IDS)
def test_numeric_matches_closed_form(case):
    zm = closed_z(case)
    nm = numeric_like(case, zm)
    xs = _interior(zm)
    assert not nm.truncated
    assert np.max(np.abs(nm.z(xs) - zm.z(xs))) <= 1e-8
    assert nm.residual(case.family, xs) <= 1e-8


@pytest.mark.parametrize("case", CASES, ids=IDS)
def test_closed_form_is_monotone(case):
    zm = closed_z(case)
    slope = zm.dzdx(_interior(zm, 400))
    assert np.all(np.sign(slope) == zm.branch)


def test_oscillator_map():
    zm = closed_z(make_case("1-1", a0=0.5))
    xs = np.linspace(-5, 5, 11)
    assert np.allclose(zm.z(xs), xs, atol=1e-15)


def test_pure_cubic_map():
    a3 = 0.7
    zm = closed_z(make_case("1-4", a3=a3, a2=0.0, a1=0.0))
    xs = _interior(zm)
    assert np.allclose(zm.z(xs), 2.0 / (a3 * xs ** 2), rtol=1e-14)


def test_exponential_map_with_zero_a0():
    c, nu = 1.3, 0.8
    zm = closed_z(make_case("3", a0=0.0, c=c, nu=nu))
    xs = _interior(zm)
    assert np.allclose(c * np.exp(nu * zm.z(xs)), 2.0 / (nu ** 2 * xs ** 2), rtol=1e-12)


@pytest.mark.parametrize("cid,shape", [
    ("2-1", {"a1": 0.5}),
    ("2-2", {}),
    ("2-3", {"a1": 0.5}),
    ("1-4", {"a1": 0.5}),
    ("1-5", {"a1": 0.5}),
])
def test_no_closed_form(cid, shape):
    assert closed_z(make_case(cid, **shape)) is None


def test_constant_a_numeric_map():
    nm = numeric_z(Poly(a0=0.5), (-3.0, 3.0), 0.0, x_init=0.0)
    xs = np.linspace(-3, 3, 61)
    assert np.max(np.abs(nm.z(xs) - xs)) <= 1e-10


def test_negative_branch():
    nm = numeric_z(Poly(a0=0.5), (-3.0, 3.0), 0.0, x_init=0.0, branch=-1)
    xs = np.linspace(-3, 3, 61)
    assert nm.branch == -1
    assert np.max(np.abs(nm.z(xs) + xs)) <= 1e-10


def test_numeric_map_without_closed_form():
    case = make_case("2-2")
    nm = numeric_z(case.family, (-1.0, 1.0), 1.5, x_init=0.0)
    xs = np.linspace(*nm.interval, 102)[1:-1]
    assert nm.residual(case.family, xs) <= 1e-8
    assert nm.defect(case.family) <= 1e-9
    assert np.all(np.diff(nm.xs) > 0) and np.all(np.diff(nm.zs) > 0)


def test_turning_point_truncates():
    # A = 1 - z vanishes at z = 1, reached at x = sqrt(2)
    nm = numeric_z(Poly(a0=1.0, a1=-1.0), (0.0, 5.0), 0.0, x_init=0.0)
    assert nm.truncated
    # the table ends on the last output point before the turning point
    step = 5.0 / 2000
    assert math.sqrt(2.0) - step <= nm.interval[1] <= math.sqrt(2.0)
    with pytest.raises(TurningPointError):
        nm.z(np.array([3.0]))
    with pytest.raises(TurningPointError):
        numeric_z(Poly(a0=1.0, a1=-1.0), (0.0, 5.0), 2.0)


def test_x_potential_composes():
    case = make_case("1-1", a0=0.5)
    zm = closed_z(case)
    v = x_potential(se.z ** 2, zm)
    xs = np.linspace(-2, 2, 9)
    assert np.allclose(v(xs), xs ** 2)


def test_csv_export(tmp_path):
    zm = closed_z(make_case("1-3"))
    p = tmp_path / "z.csv"
    zm.to_csv(p, n=21)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["x", "z"] and len(rows) == 22
    xs = np.array([float(r[0]) for r in rows[1:]])
    zs = np.array([float(r[1]) for r in rows[1:]])
    assert np.allclose(zs, zm.z(xs), rtol=1e-15)


def test_explicit_interval_is_honoured():
    zm = closed_z(make_case("1-1"), interval=(-2.0, 3.0))
    assert zm.interval == (-2.0, 3.0)
