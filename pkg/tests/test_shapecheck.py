import numpy as np
import pytest

from si_workbench.model import (CASE_IDS, CONDITIONAL, FAMILY_KINDS, IRREDUCIBLE, NOT_SI,
                                REDUCIBLE, ParamSet, make_case, probe_grid, random_family,
                                sample_case)
from si_workbench.shapecheck import (classify, conditional_probe, ordinary_si_probe,
                                     reflective_residual, two_step_residual, verify_case)

CONDITIONAL_ROWS = [c for c in CASE_IDS if make_case(c).is_conditional]


@pytest.mark.parametrize("kind", FAMILY_KINDS, ids=lambda k: k.kind)
def test_reflective_si_is_universal(kind):
    rng = np.random.default_rng(41)
    grid = probe_grid()
    for _ in range(20):
        fam = random_family(kind, rng, grid)
        c = ParamSet(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)))
        assert reflective_residual(fam, c, grid) <= 1e-10


def test_oscillator_two_step():
    v = two_step_residual(make_case("1-1", a0=0.5), ParamSet(-2.0, 0.0))
    assert v.is_two_step
    assert v.estimated_R2 == pytest.approx(4.0, abs=1e-12)
    assert v.shift_matches


def test_cubic_constraint_in_both_directions():
    case = make_case("1-4")
    a1 = case.shape_dict["a1"]
    on = two_step_residual(case, ParamSet(3.0, 2 * a1))
    assert on.is_two_step and on.shift_matches
    off = two_step_residual(case, ParamSet(3.0, 2 * a1 + 0.5))
    assert not off.is_two_step and off.max_residual > 1e-3


@pytest.mark.parametrize("cid", CASE_IDS)
def test_catalog_rows_are_two_step_si(cid):
    rng = np.random.default_rng(43)
    for _ in range(20):
        case, c0 = sample_case(cid, rng)
        v = two_step_residual(case, c0)
        assert v.max_residual <= 1e-9
        assert v.shift_matches


@pytest.mark.parametrize("cid", CONDITIONAL_ROWS)
def test_conditional_iff(cid):
    rng = np.random.default_rng(47)
    for _ in range(20):
        case, c0 = sample_case(cid, rng)
        assert conditional_probe(case, c0)
        assert two_step_residual(case, c0).is_two_step
        case, c0 = sample_case(cid, rng, on_constraint=False)
        assert not conditional_probe(case, c0)
        v = two_step_residual(case, c0)
        assert not v.is_two_step and v.max_residual >= 1e-3


def test_conditional_probe_examples():
    case = make_case("1-5", a4=0.5, a2=0.5, a1=0.4)
    assert conditional_probe(case, ParamSet(3.0, 1.2))
    case = make_case("2-2", a2=1.0, c0=1.0, d0=0.7)
    assert conditional_probe(case, ParamSet(2.0, -0.7))
    case = make_case("2-3", c0=1.0, a1=0.5, d1=0.5)
    assert not conditional_probe(case, ParamSet(2.0, 1.5))
    with pytest.raises(ValueError):
        conditional_probe(make_case("1-3"), ParamSet(1.0, 0.0))


def test_ordinary_linear_case():
    case = make_case("1-2", a1=0.8, a0=0.4)
    c0 = ParamSet(-2.0, 0.3)
    o = ordinary_si_probe(case, c0)
    assert o.found and o.route == "Vi1"
    assert o.c1.b1 == pytest.approx(-2.0) and o.c1.b0 == pytest.approx(0.3 + 0.8)
    assert o.R1 == pytest.approx(2.0, abs=1e-9)


def test_ordinary_quartic_runs_through_second_intermediate():
    case = make_case("1-5dep")
    o = ordinary_si_probe(case, case.default_params)
    assert o.found and o.route == "Vi2"


def test_exponential_case_is_not_ordinary():
    case = make_case("3")
    assert not ordinary_si_probe(case, case.default_params).found


def test_centered_log_quad_is_not_ordinary():
    # Vi1 - V-(b1 + d1) and V+ - Vi1(b1 + d1) are constant but with opposite
    # shifts, so no single R1 links the sequence
    case = make_case("2-3dep")
    v = verify_case(case, case.default_params)
    assert v.is_two_step and not v.is_ordinary
    assert v.classification == IRREDUCIBLE


@pytest.mark.parametrize("cid", ["1-1", "1-2", "1-3", "1-5dep"])
def test_reducible_shift_decomposes(cid):
    rng = np.random.default_rng(53)
    for _ in range(10):
        case, c0 = sample_case(cid, rng)
        v = verify_case(case, c0)
        assert v.is_ordinary
        assert v.ordinary_R1 + v.ordinary_R1_next == pytest.approx(v.estimated_R2, abs=1e-9)


def test_verify_case_labels():
    case = make_case("1-4")
    assert verify_case(case, case.default_params).classification == CONDITIONAL
    off = ParamSet(case.default_params.b1, case.default_params.b0 + 0.3)
    v = verify_case(case, off)
    assert v.classification == NOT_SI
    assert v.conditional_required["holds"] is False
    assert verify_case(make_case("1-1"), make_case("1-1").default_params).classification \
        == REDUCIBLE


@pytest.mark.parametrize("cid", CASE_IDS)
def test_classify_matches_catalog(cid):
    c = classify(cid, samples=5, seed=0)
    assert c.label == c.expected, c.details


def test_classify_is_deterministic():
    a, b = classify("2-1", 4, seed=9), classify("2-1", 4, seed=9)
    assert a.to_dict() == b.to_dict()


def test_verdict_serializes():
    d = verify_case(make_case("1-1"), ParamSet(-2.0, 0.0)).to_dict()
    for k in ("is_two_step", "estimated_R2", "max_residual", "is_ordinary", "ordinary_R1",
              "conditional_required", "classification", "shift_matches"):
        assert k in d


def test_ordinary_probe_unpacks():
    found, link = ordinary_si_probe(make_case("1-2", a1=0.8, a0=0.4), ParamSet(-2.0, 0.3))
    assert found and link[1] == pytest.approx(2.0, abs=1e-9)
    found, link = ordinary_si_probe(make_case("3"), make_case("3").default_params)
    assert not found and link is None
