import csv

import numpy as np
import pytest

from si_workbench import symexpr as se
from si_workbench.changevar import closed_z
from si_workbench.model import (CASE_IDS, LogQuadCentered, ParamSet, Poly, PowerTail,
                                a_derivatives, make_case, probe_grid, sample_case)
from si_workbench.potentials import (ADerivCache, gauge_route, gauge_weight, gauged_ops, hatted,
                                     identity_residuals, intermediate_potentials,
                                     potential_pair, potential_set, superpotentials,
                                     susy_potential)

ZS = probe_grid(50)
A11 = Poly(a0=0.5)
C11 = ParamSet(-2.0, 0.0)


def ev(e, zs=ZS):
    return se.evaluate(e, zs)


def test_oscillator_pair():
    vm, vp = potential_pair(A11, C11)
    assert np.allclose(ev(vm), 2 * ZS ** 2 - 2, atol=1e-13)
    assert np.allclose(ev(vp), 2 * ZS ** 2 + 2, atol=1e-13)


def test_pair_without_q():
    fam = Poly(a0=0.4, a1=0.3, a2=0.2, a3=0.5)
    vm, vp = potential_pair(fam, ParamSet(0.0, 0.0))
    A, A1, A2 = (ev(d) for d in a_derivatives(fam, 2))
    want = -(A * A2 - 0.75 * A1 ** 2) / (4 * A)
    assert np.allclose(ev(vm), want, rtol=1e-13)
    assert np.allclose(ev(vp), want, rtol=1e-13)


def test_power_tail_mu3_is_the_cubic():
    a3, a2, a1 = 0.8, 1.1, 0.5
    c = ParamSet(2.5, 2 * a1)
    pt = potential_set(PowerTail(a2=a2, a1=a1, c0=a3, mu=3.0), c).values(ZS)
    cubic = potential_set(make_case("1-4", a3=a3, a2=a2, a1=a1).family, c).values(ZS)
    for k in ("Vm", "Vp", "Vi1", "Vi2"):
        assert np.allclose(pt[k], cubic[k], rtol=1e-12)


def test_intermediate_examples():
    a0, b1, b0 = 0.7, 1.5, -0.3
    vi1, vi2 = intermediate_potentials(Poly(a0=a0), ParamSet(b1, b0))
    assert np.allclose(ev(vi1), (b1 * ZS + b0) ** 2 / (4 * a0), rtol=1e-13)
    assert vi2 is not None
    assert intermediate_potentials(Poly(a0=a0), ParamSet(0.0, b0))[1] is None


def test_centered_log_quad_intermediates_differ_by_constant():
    fam = LogQuadCentered(a2=1.0, a1=0.5, c0=1.0, d1=0.5)
    c = make_case("2-3dep").default_params
    vi1, vi2 = intermediate_potentials(fam, c)
    assert np.allclose(ev(vi2) - ev(vi1), -0.5, atol=1e-12)


def test_factorization_constants():
    g = gauged_ops(A11, ParamSet(4.0, 0.0))
    assert (g.C22, g.C21) == (2.0, -2.0)
    g = gauged_ops(A11, ParamSet(2.0, 6.0, 0.5))
    assert g.z0 == 3.0
    assert g.C22 == (2.0 - 1.0) / 2 and g.C21 == (-2.0 - 1.0) / 2


def test_kernel_is_preserved():
    fam = Poly(a0=0.3, a1=0.2, a2=0.6, a3=0.4, a4=0.1)
    b1, b0, R = 1.7, -0.6, 0.25
    g = gauged_ops(fam, ParamSet(b1, b0, R))
    one = ev(g.tH_minus(se.Const(1.0)))
    assert np.allclose(one, b1 / 2 - R, atol=1e-13)
    img = ev(g.tH_minus(se.z))
    assert np.allclose(img, (-b1 / 2 - R) * ZS - b0, atol=1e-12)
    assert np.allclose(ev(g.tP2_minus(se.z)), 0.0) and np.allclose(ev(g.tP2_minus(1.0)), 0.0)


def test_second_intermediate_formula():
    fam = Poly(a1=0.5, a2=1.0, a3=1.0)
    c = ParamSet(2.0, 0.7)
    g = gauged_ops(fam, c)
    A, A1 = (ev(d) for d in a_derivatives(fam, 1))
    Q = c.b1 * ZS + c.b0
    want = ev(g.tH_i1.c0) - c.b1 * A1 / Q + 2 * c.b1 ** 2 * A / Q ** 2
    assert np.allclose(ev(g.tH_i2.c0), want, rtol=1e-13)


def test_hatted_needs_b1():
    g = gauged_ops(A11, ParamSet(0.0, 1.0))
    assert not g.has_hatted and g.tH_i2 is None
    with pytest.raises(ValueError):
        hatted(g)
    assert gauged_ops(A11, ParamSet(0.5, 1.0)).has_hatted


@pytest.mark.parametrize("cid", CASE_IDS)
def test_operator_identities(cid):
    rng = np.random.default_rng(17)
    for _ in range(3):
        case, c0 = sample_case(cid, rng)
        c0 = ParamSet(c0.b1, c0.b0, float(rng.uniform(-0.5, 0.5)))
        res = identity_residuals(case.family, c0, ZS)
        assert max(res.values()) <= 1e-9, res
        assert ("hat_P2-_factorization" in res) == (c0.b1 != 0.0)


@pytest.mark.parametrize("cid", CASE_IDS)
def test_gauge_route(cid):
    rng = np.random.default_rng(23)
    case, c0 = sample_case(cid, rng)
    route = gauge_route(case.family, c0)
    ps = potential_set(case.family, c0).values(ZS)
    for k in ("Vm", "Vp", "Vi1"):
        v = ps[k]
        assert np.max(np.abs(ev(route[k]) - v)) <= 1e-9 * (1 + np.max(np.abs(v)))
        assert np.max(np.abs(ev(route[k + "_first_order_defect"]))) <= 1e-12


def test_gauge_weight_closed_forms():
    a0, b1, b0 = 0.8, 1.2, -0.4
    w = gauge_weight(Poly(a0=a0), ParamSet(b1, b0))
    want = -(b1 * ZS ** 2 / 2 + b0 * ZS) / (2 * a0)
    got = w.value(ZS)
    assert np.allclose(got - got[0], want - want[0], atol=1e-13)
    fam = Poly(a0=0.4, a1=0.3, a2=0.2)
    w = gauge_weight(fam, ParamSet(0.0, 0.0))
    A = ev(a_derivatives(fam, 0)[0])
    got = w.value(ZS)
    assert np.allclose(got - got[0], 0.25 * np.log(A / A[0]), atol=1e-13)


def test_gauge_weight_quadrature_matches_derivative():
    case = make_case("2-2")
    c = case.default_params
    w = gauge_weight(case.family, c)
    assert w.expr is None
    vals = w.value(ZS)
    deriv = ev(w.derivative)
    fd = np.gradient(vals, ZS, edge_order=2)
    assert np.allclose(fd[2:-2], deriv[2:-2], atol=1e-3)


def test_oscillator_superpotentials():
    W0, W1 = superpotentials(A11, C11)
    assert np.allclose(ev(W0), 2 * ZS, atol=1e-13)
    g = gauged_ops(A11, C11)
    vm = ev(susy_potential(A11, W0, g.C22))
    assert np.allclose(vm, 2 * ZS ** 2 - 2, atol=1e-12)
    W0q, _ = superpotentials(A11, ParamSet(0.0, 0.0))
    assert np.allclose(ev(W0q), 0.0)


@pytest.mark.parametrize("cid", CASE_IDS)
def test_superpotentials_reproduce_potentials(cid):
    rng = np.random.default_rng(29)
    case, c0 = sample_case(cid, rng)
    g = gauged_ops(case.family, c0)
    W0, W1 = superpotentials(case.family, c0)
    ps = potential_set(case.family, c0).values(ZS)
    for W, C, key in ((W0, g.C22, "Vm"), (W1, g.C21, "Vi1")):
        got = ev(susy_potential(case.family, W, C))
        assert np.max(np.abs(got - ps[key])) <= 1e-9 * (1 + np.max(np.abs(ps[key])))


def test_cache_matches_expressions():
    case = make_case("3")
    c = case.default_params
    cached = ADerivCache(case.family, ZS).potentials(c)
    direct = potential_set(case.family, c).values(ZS)
    for k in ("Vm", "Vp", "Vi1"):
        assert np.allclose(cached[k], direct[k], rtol=1e-13)
    assert cached["Vi2"] is None and direct["Vi2"] is None


def test_potentials_csv(tmp_path):
    case = make_case("3", a0=0.0)
    zmap = closed_z(case)
    p = tmp_path / "pot.csv"
    xs = np.linspace(*zmap.interval, 11)
    potential_set(case.family, case.default_params).to_csv(p, zmap, xs)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["x", "z", "Vm", "Vp", "Vi1", "Vi2"]
    assert len(rows) == 12 and all(r[5] == "" for r in rows[1:])
