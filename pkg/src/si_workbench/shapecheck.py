"""Shape-invariance probes and the Table-1 style classification.

All residuals are taken in z on a grid: both members of every relation share
A(z), so no change of variable is needed. A difference ``r(z)`` counts as
constant when ``max|r - mean r| <= tol * (1 + max|V|)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import symexpr as se
from .model import (CONDITIONAL, IRREDUCIBLE, NOT_SI, REDUCIBLE, CaseSpec, ParamSet,
                    a_expr, make_case, probe_grid, reflective_step, sample_case)
from .potentials import ADerivCache

TOL_CLOSED = 1e-9
TOL_NUMERIC = 1e-6


def _constancy(r, scale):
    m = float(np.mean(r))
    return m, float(np.max(np.abs(r - m)) / (1.0 + scale))


def _scale(*arrs):
    return max(float(np.max(np.abs(a))) for a in arrs)


@dataclass
class SIVerdict:
    is_two_step: bool
    estimated_R2: float
    expected_R2: float
    max_residual: float
    tolerance: float
    is_ordinary: Optional[bool] = None
    ordinary_c1: Optional[dict] = None
    ordinary_R1: Optional[float] = None
    ordinary_R1_next: Optional[float] = None
    ordinary_route: Optional[str] = None
    conditional_required: Optional[dict] = None
    classification: Optional[str] = None

    @property
    def shift_matches(self) -> bool:
        return abs(self.estimated_R2 - self.expected_R2) <= 1e-9 * max(1.0, abs(self.expected_R2))

    def to_dict(self):
        d = asdict(self)
        d["shift_matches"] = self.shift_matches
        return d


def _check_grid(case: CaseSpec, grid):
    grid = probe_grid() if grid is None else np.asarray(grid, dtype=float)
    return grid


def two_step_residual(case: CaseSpec, c0: ParamSet, grid=None, tol: float = TOL_CLOSED,
                      cache: Optional[ADerivCache] = None) -> SIVerdict:
    """Constancy of V+(z; c0) - V-(z; c2) and the estimated shift."""
    grid = _check_grid(case, grid)
    cache = cache or ADerivCache(case.family, grid)
    c2 = case.param_map(c0)
    vp = cache.potentials(c0)["Vp"]
    vm2 = cache.potentials(c2)["Vm"]
    r = vp - vm2
    if not np.all(np.isfinite(r)):
        raise se.SingularPointError(a_expr(case.family), "non-finite potential on grid")
    est, dev = _constancy(r, _scale(vp, vm2))
    return SIVerdict(dev <= tol, est, case.shift(c0), dev, tol)


def reflective_residual(family, c: ParamSet, grid=None) -> float:
    """max |V+(z; b) - V-(z; -b)| on the grid."""
    grid = probe_grid() if grid is None else grid
    cache = ADerivCache(family, grid)
    cr, _ = reflective_step(c)
    return float(np.max(np.abs(cache.potentials(c)["Vp"] - cache.potentials(cr)["Vm"])))


def _lattice(units, mults=(-2, -1, 0, 1, 2)):
    vals = {0.0}
    for u in units:
        if u == 0.0 or not np.isfinite(u):
            continue
        for m in mults:
            vals.add(round(m * u / 2.0, 12))
    return sorted(vals)


@dataclass
class OrdinaryResult:
    found: bool
    c1: Optional[ParamSet] = None
    R1: Optional[float] = None
    R1_next: Optional[float] = None
    route: Optional[str] = None
    tried: int = 0

    def __iter__(self):
        # unpacks as (found, (c1, R1) or None)
        yield self.found
        yield (self.c1, self.R1) if self.found else None


def ordinary_si_probe(case: CaseSpec, c0: ParamSet, grid=None, tol: float = TOL_CLOSED,
                      cache: Optional[ADerivCache] = None) -> OrdinaryResult:
    """Search translational one-step maps c0 -> c1 = c0 + delta.

    A map is accepted when V^i(c0) - V-(c1) and V+(c0) - V^i(c1) are both
    equal to one constant R1(c0), with V^i either intermediate potential.
    The delta lattice is built from half-multiples of the two-step shifts
    and the shape constants.
    """
    grid = _check_grid(case, grid)
    cache = cache or ADerivCache(case.family, grid)
    c2 = case.param_map(c0)
    shape_vals = [v for v in case.shape_dict.values()]
    row = case._row
    if row.b1_zero:
        d1s = [0.0]
    else:
        d1s = _lattice([c2.b1 - c0.b1] + shape_vals)
    if row.lock is not None:
        d0s = [None]
    else:
        d0s = _lattice([c2.b0 - c0.b0] + shape_vals)
    p0 = cache.potentials(c0)
    tried = 0
    for route in ("Vi1", "Vi2"):
        vi0 = p0[route]
        if vi0 is None:
            continue
        for d1 in d1s:
            for d0 in d0s:
                b1 = c0.b1 + d1
                b0 = case.lock_b0(b1) if d0 is None else c0.b0 + d0
                c1 = ParamSet(b1, b0, c0.R)
                with np.errstate(all="ignore"):
                    try:
                        p1 = cache.potentials(c1)
                    except se.SingularPointError:
                        continue
                vi1 = p1[route]
                if vi1 is None:
                    continue
                tried += 1
                ra = vi0 - p1["Vm"]
                rb = p0["Vp"] - vi1
                if not (np.all(np.isfinite(ra)) and np.all(np.isfinite(rb))):
                    continue
                sa, da = _constancy(ra, _scale(vi0, p1["Vm"]))
                if da > tol:
                    continue
                sb, db = _constancy(rb, _scale(p0["Vp"], vi1))
                if db > tol:
                    continue
                # both links of the sequence carry the same shift R1(c0)
                if abs(sa - sb) > tol * (1.0 + _scale(vi0, p0["Vp"])):
                    continue
                # shift of the next one-step link, c1 -> c1 + delta
                c1n = ParamSet(b1 + d1, case.lock_b0(b1 + d1) if d0 is None else b0 + d0, c0.R)
                with np.errstate(all="ignore"):
                    try:
                        nxt = cache.potentials(c1n)["Vm"]
                        s_next, _ = _constancy(vi1 - nxt, _scale(vi1, nxt))
                    except se.SingularPointError:
                        s_next = None
                return OrdinaryResult(True, c1, sa, s_next, route, tried)
    return OrdinaryResult(False, tried=tried)


def conditional_probe(case: CaseSpec, c: ParamSet, tol: float = 1e-9) -> bool:
    """Whether the row's conditional constraint holds at c."""
    if not case.is_conditional:
        raise ValueError(f"case {case.case_id} has no conditional constraint")
    return case.constraint_holds(c, tol)


def verify_case(case: CaseSpec, c0: ParamSet, grid=None, tol: float = TOL_CLOSED) -> SIVerdict:
    """All probes at one parameter point, with a per-point classification."""
    grid = _check_grid(case, grid)
    cache = ADerivCache(case.family, grid)
    v = two_step_residual(case, c0, grid, tol, cache)
    if case.is_conditional:
        v.conditional_required = {"constraint": case.constraint_text,
                                  "holds": conditional_probe(case, c0),
                                  "residual": case.constraint_residual(c0)}
    if not v.is_two_step:
        v.classification = NOT_SI
        return v
    o = ordinary_si_probe(case, c0, grid, tol, cache)
    v.is_ordinary = o.found
    if o.found:
        v.ordinary_c1 = o.c1.to_dict()
        v.ordinary_R1 = o.R1
        v.ordinary_R1_next = o.R1_next
        v.ordinary_route = o.route
        v.classification = REDUCIBLE
    else:
        v.classification = CONDITIONAL if case.is_conditional else IRREDUCIBLE
    return v


@dataclass
class Classification:
    case_id: str
    label: str
    expected: str
    samples: int
    details: list = field(default_factory=list)

    @property
    def matches(self) -> bool:
        return self.label == self.expected

    def to_dict(self):
        return {"case_id": self.case_id, "label": self.label, "expected": self.expected,
                "matches": self.matches, "samples": self.samples, "details": self.details}


def classify(case, samples: int = 5, seed: int = 0, grid=None) -> Classification:
    """Classify a row from random parameter draws.

    Two-step failure gives not-SI; ordinary SI at every draw gives reducible.
    For rows whose b0 is a free parameter, b0 is then displaced at each draw:
    if that breaks two-step SI the row is conditional, otherwise irreducible.
    The displacement is random and does not use the catalog's constraint.
    """
    case_id = case.case_id if isinstance(case, CaseSpec) else str(case)
    expected = make_case(case_id).classification
    rng = np.random.default_rng(seed)
    grid = probe_grid() if grid is None else grid
    details = []
    all_ordinary = True
    conditional = False
    for _ in range(samples):
        spec, c0 = sample_case(case_id, rng, grid=grid)
        cache = ADerivCache(spec.family, grid)
        v = two_step_residual(spec, c0, grid, cache=cache)
        if not v.is_two_step:
            details.append({"two_step": False, "residual": v.max_residual})
            return Classification(case_id, NOT_SI, expected, samples, details)
        o = ordinary_si_probe(spec, c0, grid, cache=cache)
        all_ordinary &= o.found
        entry = {"two_step": True, "residual": v.max_residual, "ordinary": o.found}
        if not spec.is_dependent:
            moved = ParamSet(c0.b1, c0.b0 + float(rng.choice([-1, 1]) * rng.uniform(0.3, 1.0)),
                             c0.R)
            try:
                vm = two_step_residual(spec, moved, grid, cache=cache)
                entry["displaced_b0_two_step"] = vm.is_two_step
                conditional |= not vm.is_two_step
            except se.SingularPointError:
                pass
        details.append(entry)
    if all_ordinary:
        label = REDUCIBLE
    elif conditional:
        label = CONDITIONAL
    else:
        label = IRREDUCIBLE
    return Classification(case_id, label, expected, samples, details)


def table1(samples: int = 5, seed: int = 0) -> list:
    from .model import CASE_IDS
    return [classify(cid, samples, seed) for cid in CASE_IDS]


__all__ = ["SIVerdict", "two_step_residual", "reflective_residual", "ordinary_si_probe",
           "OrdinaryResult", "conditional_probe", "verify_case", "classify",
           "Classification", "table1", "TOL_CLOSED", "TOL_NUMERIC"]
