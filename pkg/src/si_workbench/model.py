"""Parameters, admissible A(z) families and the two-step SI case catalog.

The gauged system is fixed by ``Q(z) = b1*z + b0`` and an energy offset ``R``.
Every catalog row couples an A(z) family with a translational parameter map
``c0 -> c2`` and the constant shift ``R2(c0)`` such that
``V+(z; c0) = V-(z; c2) + R2(c0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import symexpr as se

REDUCIBLE = "reducible"
IRREDUCIBLE = "irreducible"
CONDITIONAL = "irreducible-conditional"
NOT_SI = "not-SI"

# z-window used for parameter sampling and z-space residual checks
PROBE_WINDOW = (0.6, 2.4)


class FamilyError(ValueError):
    """A family or case was built with parameters violating its invariants."""


@dataclass(frozen=True)
class ParamSet:
    b1: float
    b0: float
    R: float = 0.0

    def to_dict(self):
        return {"b1": self.b1, "b0": self.b0, "R": self.R}


@dataclass(frozen=True)
class StepDeltas:
    """Sums and differences of the b-parameters across one two-step map."""

    b1_plus: float
    b1_minus: float
    b0_plus: float
    b0_minus: float
    R_bar: float

    @classmethod
    def from_step(cls, c0: ParamSet, c2: ParamSet, R2: float) -> "StepDeltas":
        b1p = c2.b1 + c0.b1
        return cls(b1p, c2.b1 - c0.b1, c2.b0 + c0.b0, c2.b0 - c0.b0, R2 + b1p)


# ---------------------------------------------------------------- families

@dataclass(frozen=True)
class AFamily:
    kind = "abstract"

    def validate(self):
        pass

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_dict(self):
        return {"kind": self.kind, **self.params()}


@dataclass(frozen=True)
class Poly(AFamily):
    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0
    kind = "Poly"

    @property
    def degree(self) -> int:
        cs = [self.a0, self.a1, self.a2, self.a3, self.a4]
        nz = [i for i, c in enumerate(cs) if c != 0.0]
        return nz[-1] if nz else -1

    def validate(self):
        if self.degree < 0:
            raise FamilyError("A(z) vanishes identically")


@dataclass(frozen=True)
class PowerTail(AFamily):
    a2: float
    a1: float
    c0: float
    mu: float
    kind = "PowerTail"

    def validate(self):
        if self.mu in (1.0, 2.0):
            raise FamilyError("PowerTail needs mu not in {1, 2}")
        if self.c0 == 0.0:
            raise FamilyError("PowerTail needs c0 != 0")


@dataclass(frozen=True)
class PowerTailCentered(AFamily):
    a2: float
    a1: float
    c0: float
    mu: float
    kind = "PowerTailCentered"

    @property
    def center(self):
        return self.a1 / (2.0 * self.a2)

    def validate(self):
        if self.mu in (1.0, 2.0):
            raise FamilyError("PowerTailCentered needs mu not in {1, 2}")
        if self.c0 == 0.0 or self.a2 == 0.0:
            raise FamilyError("PowerTailCentered needs c0 != 0 and a2 != 0")


@dataclass(frozen=True)
class LogLinear(AFamily):
    a2: float
    c0: float
    d0: float
    kind = "LogLinear"

    def validate(self):
        if self.d0 == 0.0:
            raise FamilyError("LogLinear needs d0 != 0")


@dataclass(frozen=True)
class LogQuad(AFamily):
    c0: float
    a1: float
    d1: float
    kind = "LogQuad"

    def validate(self):
        if self.d1 == 0.0:
            raise FamilyError("LogQuad needs d1 != 0")


@dataclass(frozen=True)
class LogQuadCentered(AFamily):
    a2: float
    a1: float
    c0: float
    d1: float
    kind = "LogQuadCentered"

    @property
    def center(self):
        return self.a1 / (2.0 * self.a2)

    def validate(self):
        if self.d1 == 0.0 or self.a2 == 0.0:
            raise FamilyError("LogQuadCentered needs d1 != 0 and a2 != 0")


@dataclass(frozen=True)
class ExpTail(AFamily):
    a0: float
    c: float
    nu: float
    kind = "ExpTail"

    def validate(self):
        if self.nu == 0.0 or self.c == 0.0:
            raise FamilyError("ExpTail needs nu != 0 and c != 0")


FAMILY_KINDS = (Poly, PowerTail, PowerTailCentered, LogLinear, LogQuad,
                LogQuadCentered, ExpTail)


@lru_cache(maxsize=512)
def a_expr(f: AFamily) -> se.Expr:
    """Exact expression of A(z) for a family."""
    f.validate()
    z = se.z
    if isinstance(f, Poly):
        return se.make_add([f.a0, f.a1 * z, f.a2 * z ** 2, f.a3 * z ** 3,
                            f.a4 * z ** 4])
    if isinstance(f, PowerTail):
        return f.a2 * z ** 2 + f.a1 * z + f.c0 * z ** f.mu
    if isinstance(f, PowerTailCentered):
        u = z + f.center
        return f.a2 * u ** 2 + f.c0 * u ** f.mu
    if isinstance(f, LogLinear):
        return f.a2 * z ** 2 + f.c0 * z + f.d0 * z * se.logabs(z)
    if isinstance(f, LogQuad):
        return f.c0 * z ** 2 + f.a1 * z + f.d1 * z ** 2 * se.logabs(z)
    if isinstance(f, LogQuadCentered):
        u = z + f.center
        return u ** 2 * (f.c0 + f.d1 * se.logabs(u))
    if isinstance(f, ExpTail):
        return f.a0 + f.c * se.exp(f.nu * z)
    raise FamilyError(f"unknown family {f!r}")


@lru_cache(maxsize=512)
def a_derivatives(f: AFamily, order: int = 4) -> tuple:
    """A, A', A'', ... up to ``order`` as exact expressions."""
    out = [a_expr(f)]
    for _ in range(order):
        out.append(se.diff(out[-1]))
    return tuple(out)


def family_from_dict(d: dict) -> AFamily:
    d = dict(d)
    kind = d.pop("kind")
    for cls in FAMILY_KINDS:
        if cls.kind == kind:
            return cls(**{k: float(v) for k, v in d.items()})
    raise FamilyError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------- catalog

@dataclass(frozen=True)
class _Row:
    case_id: str
    shape_names: tuple
    defaults: dict
    default_b: tuple
    family: Callable
    step: Callable           # (shape, b1, b0) -> (b1', b0')
    shift: Callable          # (shape, b1, b0) -> R2
    classification: str
    map_text: str
    shift_text: str
    constraint: Optional[Callable] = None      # (shape, b1, b0) -> residual
    constraint_text: Optional[str] = None
    lock: Optional[Callable] = None            # (shape, b1) -> locked b0
    lock_text: Optional[str] = None
    b1_zero: bool = False
    note: str = ""


def _p14(s):
    return (s["a2"] + s["d1"]) / (3 * s["a3"]), (s["a2"] - 2 * s["d1"]) / (3 * s["a3"])


def _fam14dep(s):
    p, q = _p14(s)
    a3 = s["a3"]
    # a3 (z+p)^2 (z+q) expanded
    return Poly(a0=a3 * p * p * q, a1=a3 * (p * p + 2 * p * q),
                a2=a3 * (2 * p + q), a3=a3)


def _fam15dep(s):
    a4, a3, a2 = s["a4"], s["a3"], s["a2"]
    a1 = a3 * a2 / (2 * a4) - a3 ** 3 / (8 * a4 ** 2)
    a0 = a3 ** 2 * a2 / (16 * a4 ** 2) - 5 * a3 ** 4 / (256 * a4 ** 3)
    return Poly(a0=a0, a1=a1, a2=a2, a3=a3, a4=a4)


def _k15(s):
    return -4 * s["a2"] + 3 * s["a3"] ** 2 / (2 * s["a4"])


_ROWS = [
    _Row("1-1", ("a0",), {"a0": 0.5}, (-2.0, 0.0),
         lambda s: Poly(a0=s["a0"]),
         lambda s, b1, b0: (b1, b0),
         lambda s, b1, b0: -2 * b1,
         REDUCIBLE, "b1 -> b1, b0 -> b0", "-2*b1"),
    _Row("1-2", ("a1", "a0"), {"a1": 1.0, "a0": 0.5}, (-2.0, 0.0),
         lambda s: Poly(a0=s["a0"], a1=s["a1"]),
         lambda s, b1, b0: (b1, b0 + 2 * s["a1"]),
         lambda s, b1, b0: -2 * b1,
         REDUCIBLE, "b1 -> b1, b0 -> b0 + 2*a1", "-2*b1"),
    _Row("1-3", ("a2", "a1", "a0"), {"a2": 0.5, "a1": 0.0, "a0": 0.0}, (-5.0, 1.0),
         lambda s: Poly(a0=s["a0"], a1=s["a1"], a2=s["a2"]),
         lambda s, b1, b0: (b1 + 4 * s["a2"], b0 + 2 * s["a1"]),
         lambda s, b1, b0: -2 * (b1 + 2 * s["a2"]),
         REDUCIBLE, "b1 -> b1 + 4*a2, b0 -> b0 + 2*a1", "-2*(b1 + 2*a2)"),
    _Row("1-4", ("a3", "a2", "a1"), {"a3": 1.0, "a2": 1.0, "a1": 0.5}, (3.0, 1.0),
         lambda s: Poly(a1=s["a1"], a2=s["a2"], a3=s["a3"]),
         lambda s, b1, b0: (b1 - 2 * s["a2"], -b0),
         lambda s, b1, b0: b1 - s["a2"],
         CONDITIONAL, "b1 -> b1 - 2*a2, b0 -> -b0", "b1 - a2",
         constraint=lambda s, b1, b0: b0 - 2 * s["a1"], constraint_text="b0 = 2*a1",
         note="branch b1(2) - b1(0) = -2*a2"),
    _Row("1-4dep", ("a3", "a2", "d1"), {"a3": 1.0, "a2": 1.0, "d1": -0.5}, (2.0, 0.0),
         _fam14dep,
         lambda s, b1, b0: (b1 + 2 * s["d1"], _p14(s)[0] * (b1 + 2 * s["d1"])),
         lambda s, b1, b0: b1 + s["d1"],
         IRREDUCIBLE, "b1 -> b1 + 2*d1, b0 -> p*b1(2)", "b1 + d1",
         lock=lambda s, b1: _p14(s)[0] * b1, lock_text="b0 = p*b1, p = (a2 + d1)/(3*a3)",
         note="A = a3 (z+p)^2 (z+q), q = (a2 - 2*d1)/(3*a3)"),
    _Row("1-5", ("a4", "a2", "a1"), {"a4": 0.5, "a2": 0.5, "a1": 0.5}, (3.0, 1.5),
         lambda s: Poly(a1=s["a1"], a2=s["a2"], a4=s["a4"]),
         lambda s, b1, b0: (b1 - 4 * s["a2"], -b0),
         lambda s, b1, b0: 2 * (b1 - 2 * s["a2"]),
         CONDITIONAL, "b1 -> b1 - 4*a2, b0 -> -b0", "2*(b1 - 2*a2)",
         constraint=lambda s, b1, b0: b0 - 3 * s["a1"], constraint_text="b0 = 3*a1",
         note="branch a3 = 0"),
    _Row("1-5dep", ("a4", "a3", "a2"), {"a4": 0.5, "a3": 0.4, "a2": 1.0}, (3.0, 0.0),
         _fam15dep,
         lambda s, b1, b0: (b1 + _k15(s), s["a3"] / (4 * s["a4"]) * (b1 + _k15(s))),
         lambda s, b1, b0: 2 * (b1 - 2 * s["a2"] + 3 * s["a3"] ** 2 / (4 * s["a4"])),
         REDUCIBLE, "b1 -> b1 - 4*a2 + 3*a3^2/(2*a4), b0 -> a3/(4*a4)*b1(2)",
         "2*(b1 - 2*a2 + 3*a3^2/(4*a4))",
         lock=lambda s, b1: s["a3"] / (4 * s["a4"]) * b1, lock_text="b0 = a3/(4*a4)*b1",
         note="branch a3 != 0; ordinary SI runs through the second intermediate"),
    _Row("2-1", ("a2", "a1", "c0", "mu"), {"a2": 1.0, "a1": 0.5, "c0": 1.0, "mu": 2.5},
         (3.0, 0.75),
         lambda s: PowerTail(a2=s["a2"], a1=s["a1"], c0=s["c0"], mu=s["mu"]),
         lambda s, b1, b0: (b1 - 2 * (s["mu"] - 2) * s["a2"], -b0),
         lambda s, b1, b0: (s["mu"] - 2) * (b1 - (s["mu"] - 2) * s["a2"]),
         CONDITIONAL, "b1 -> b1 - 2*(mu-2)*a2, b0 -> -b0", "(mu-2)*(b1 - (mu-2)*a2)",
         constraint=lambda s, b1, b0: b0 - (s["mu"] - 1) * s["a1"],
         constraint_text="b0 = (mu-1)*a1", note="2 independent parameters"),
    _Row("2-1dep", ("a2", "a1", "c0", "mu"), {"a2": 1.0, "a1": 0.5, "c0": 1.0, "mu": 3.5},
         (3.0, 0.75),
         lambda s: PowerTailCentered(a2=s["a2"], a1=s["a1"], c0=s["c0"], mu=s["mu"]),
         lambda s, b1, b0: (b1 - 2 * (s["mu"] - 2) * s["a2"],
                            s["a1"] / (2 * s["a2"]) * (b1 - 2 * (s["mu"] - 2) * s["a2"])),
         lambda s, b1, b0: (s["mu"] - 2) * (b1 - (s["mu"] - 2) * s["a2"]),
         IRREDUCIBLE, "b1 -> b1 - 2*(mu-2)*a2, b0 -> a1/(2*a2)*b1(2)",
         "(mu-2)*(b1 - (mu-2)*a2)",
         lock=lambda s, b1: s["a1"] / (2 * s["a2"]) * b1, lock_text="b0 = a1/(2*a2)*b1",
         note="1 independent parameter, mu != 4"),
    _Row("2-2", ("a2", "c0", "d0"), {"a2": 1.0, "c0": 1.0, "d0": 0.5}, (2.0, -0.5),
         lambda s: LogLinear(a2=s["a2"], c0=s["c0"], d0=s["d0"]),
         lambda s, b1, b0: (b1 + 2 * s["a2"], -b0),
         lambda s, b1, b0: -b1 - s["a2"],
         CONDITIONAL, "b1 -> b1 + 2*a2, b0 -> -b0", "-b1 - a2",
         constraint=lambda s, b1, b0: b0 + s["d0"], constraint_text="b0 = -d0"),
    _Row("2-3", ("c0", "a1", "d1"), {"c0": 1.0, "a1": 0.5, "d1": 0.5}, (2.0, 0.5),
         lambda s: LogQuad(c0=s["c0"], a1=s["a1"], d1=s["d1"]),
         lambda s, b1, b0: (b1 + 2 * s["d1"], -b0),
         lambda s, b1, b0: 0.0,
         CONDITIONAL, "b1 -> b1 + 2*d1, b0 -> -b0", "0",
         constraint=lambda s, b1, b0: b0 - s["a1"], constraint_text="b0 = a1",
         note="2 independent parameters"),
    _Row("2-3dep", ("a2", "a1", "c0", "d1"),
         {"a2": 1.0, "a1": 0.5, "c0": 1.0, "d1": 0.5}, (2.0, 0.5),
         lambda s: LogQuadCentered(a2=s["a2"], a1=s["a1"], c0=s["c0"], d1=s["d1"]),
         lambda s, b1, b0: (b1 + 2 * s["d1"], s["a1"] / (2 * s["a2"]) * (b1 + 2 * s["d1"])),
         lambda s, b1, b0: 0.0,
         IRREDUCIBLE, "b1 -> b1 + 2*d1, b0 -> a1/(2*a2)*b1(2)", "0",
         lock=lambda s, b1: s["a1"] / (2 * s["a2"]) * b1, lock_text="b0 = a1/(2*a2)*b1",
         note="1 independent parameter"),
    _Row("3", ("a0", "c", "nu"), {"a0": 0.5, "c": 1.0, "nu": 1.0}, (0.0, 1.0),
         lambda s: ExpTail(a0=s["a0"], c=s["c"], nu=s["nu"]),
         lambda s, b1, b0: (0.0, b0 - 2 * s["a0"] * s["nu"]),
         lambda s, b1, b0: (b0 - s["a0"] * s["nu"]) * s["nu"],
         IRREDUCIBLE, "b1 = 0, b0 -> b0 - 2*a0*nu", "(b0 - a0*nu)*nu",
         b1_zero=True, lock_text="b1 = 0"),
]

_ROW_BY_ID = {r.case_id: r for r in _ROWS}
CASE_IDS = tuple(r.case_id for r in _ROWS)


@dataclass(frozen=True)
class CaseSpec:
    """One catalog row instantiated with concrete shape parameters."""

    case_id: str
    shape: tuple = field(default=())

    def __post_init__(self):
        if self.case_id not in _ROW_BY_ID:
            raise FamilyError(f"unknown case id {self.case_id!r}")
        row = _ROW_BY_ID[self.case_id]
        given = dict(self.shape)
        unknown = set(given) - set(row.shape_names)
        if unknown:
            raise FamilyError(f"case {self.case_id} has no parameter(s) {sorted(unknown)}")
        full = {k: float(given.get(k, row.defaults[k])) for k in row.shape_names}
        object.__setattr__(self, "shape", tuple(full.items()))
        self.family.validate()

    @property
    def _row(self) -> _Row:
        return _ROW_BY_ID[self.case_id]

    @property
    def shape_dict(self) -> dict:
        return dict(self.shape)

    @property
    def family(self) -> AFamily:
        return self._row.family(self.shape_dict)

    @property
    def classification(self) -> str:
        return self._row.classification

    @property
    def is_conditional(self) -> bool:
        return self._row.constraint is not None

    @property
    def constraint_text(self) -> Optional[str]:
        return self._row.constraint_text

    @property
    def is_dependent(self) -> bool:
        return self._row.lock is not None or self._row.b1_zero

    @property
    def default_params(self) -> ParamSet:
        b1, b0 = self._row.default_b
        if self._row.lock is not None:
            b0 = self._row.lock(self.shape_dict, b1)
        if self._row.constraint is not None:
            b0 = b0 - self._row.constraint(self.shape_dict, b1, b0)
        return ParamSet(b1, b0, 0.0)

    def param_map(self, c: ParamSet) -> ParamSet:
        b1, b0 = self._row.step(self.shape_dict, c.b1, c.b0)
        return ParamSet(float(b1), float(b0), c.R)

    def shift(self, c: ParamSet) -> float:
        return float(self._row.shift(self.shape_dict, c.b1, c.b0))

    def constraint_residual(self, c: ParamSet) -> Optional[float]:
        if self._row.constraint is None:
            return None
        return float(self._row.constraint(self.shape_dict, c.b1, c.b0))

    def constraint_holds(self, c: ParamSet, tol: float = 1e-9) -> bool:
        r = self.constraint_residual(c)
        return True if r is None else abs(r) <= tol * (1.0 + abs(c.b0))

    def lock_b0(self, b1: float) -> Optional[float]:
        if self._row.lock is None:
            return None
        return float(self._row.lock(self.shape_dict, b1))

    def admissible(self, c: ParamSet, tol: float = 1e-9) -> bool:
        """Dependent rows need their parameter lock (b0 tied to b1, or b1 = 0)."""
        if self._row.b1_zero:
            return c.b1 == 0.0
        lk = self.lock_b0(c.b1)
        return lk is None or abs(c.b0 - lk) <= tol * (1.0 + abs(lk))

    def with_shape(self, **kw) -> "CaseSpec":
        s = self.shape_dict
        s.update(kw)
        return CaseSpec(self.case_id, tuple(s.items()))

    def to_dict(self) -> dict:
        row = self._row
        return {
            "case_id": self.case_id,
            "family": self.family.to_dict(),
            "shape": self.shape_dict,
            "param_map": row.map_text,
            "shift_R2": row.shift_text,
            "conditional_constraint": row.constraint_text,
            "parameter_lock": row.lock_text,
            "classification": row.classification,
            "closed_z": closed_z_available(self),
            "note": row.note,
        }


def make_case(case_id: str, **shape) -> CaseSpec:
    return CaseSpec(case_id, tuple(shape.items()))


def catalog() -> list:
    """All catalog rows with their default shape parameters."""
    return [CaseSpec(cid) for cid in CASE_IDS]


def param_step(case: CaseSpec, c0: ParamSet) -> tuple:
    """Total two-step map: returns (c2, R2(c0)); constraints are not checked."""
    return case.param_map(c0), case.shift(c0)


def reflective_step(c0: ParamSet) -> tuple:
    """The universal map (b1, b0) -> (-b1, -b0) with zero shift."""
    return ParamSet(-c0.b1, -c0.b0, c0.R), 0.0


def closed_z_available(case: CaseSpec) -> bool:
    """Whether z(x) has a closed form for this row and shape."""
    s = case.shape_dict
    cid = case.case_id
    if cid in ("1-1", "1-2"):
        return True
    if cid == "1-3":
        return s["a2"] > 0
    if cid == "1-4":
        return s["a1"] == 0.0 and s["a2"] >= 0 and s["a3"] > 0
    if cid == "1-4dep":
        return s["a3"] > 0 and s["d1"] <= 0
    if cid == "1-5":
        return s["a1"] == 0.0 and s["a4"] > 0 and s["a2"] >= 0
    if cid == "1-5dep":
        c = s["a2"] / s["a4"] - 3 * s["a3"] ** 2 / (8 * s["a4"] ** 2)
        return s["a4"] > 0 and c >= 0
    if cid == "2-1":
        return s["a1"] == 0.0 and s["a2"] > 0
    if cid == "2-1dep":
        return s["a2"] > 0
    if cid == "2-2":
        return False
    if cid == "2-3":
        return s["a1"] == 0.0
    if cid == "2-3dep":
        return True
    if cid == "3":
        return s["a0"] >= 0 and (s["a0"] > 0 or s["c"] > 0)
    return False


# ---------------------------------------------------------------- SI conditions

@dataclass(frozen=True)
class ConditionReport:
    matrix: tuple
    residual: tuple
    consistent: bool
    trivial: bool
    constraints: dict
    constraints_hold: bool

    def to_dict(self):
        return {"matrix": [list(r) for r in self.matrix], "residual": list(self.residual),
                "consistent": self.consistent, "trivial": self.trivial,
                "constraints": self.constraints, "constraints_hold": self.constraints_hold}


def si_condition_system(a: Poly, d: StepDeltas, tol: float = 1e-9) -> ConditionReport:
    """Linear system in (b1+, b0+) equivalent to two-step SI for cubic/quartic A."""
    if not isinstance(a, Poly) or a.degree not in (3, 4):
        raise FamilyError("condition system needs a polynomial A of degree 3 or 4")
    a0, a1, a2, a3, a4 = a.a0, a.a1, a.a2, a.a3, a.a4
    m1, m0 = d.b1_minus, d.b0_minus
    if a.degree == 3:
        M = np.array([[-(m1 + 2 * a2), 6 * a3],
                      [m0 + 4 * a1, m1 - 4 * a2],
                      [6 * a0, m0 - 2 * a1]])
        cons = {"C1": 6 * a3 * (m0 + 4 * a1) + (m1 + 2 * a2) * (m1 - 4 * a2),
                "C2": (m1 + 2 * a2) * (m0 - 2 * a1) + 36 * a3 * a0}
    else:
        M = np.array([[a3, -4 * a4],
                      [m1 + 4 * a2, -6 * a3],
                      [m0 + 6 * a1, m1 - 4 * a2],
                      [8 * a0, m0 - 2 * a1]])
        cons = {"C1": 2 * a4 * (m1 + 4 * a2) - 3 * a3 ** 2,
                "C2": a3 * (m1 - 4 * a2) + 4 * a4 * (m0 + 6 * a1),
                "C3": a3 * (m0 - 2 * a1) + 32 * a4 * a0}
    bp = np.array([d.b1_plus, d.b0_plus])
    r = M @ bp
    scale = 1.0 + float(np.abs(M).max()) * float(np.abs(bp).max())
    consistent = bool(np.abs(r).max() <= tol * scale)
    trivial = bool(np.abs(bp).max() <= tol)
    cscale = 1.0 + float(np.abs(M).max()) ** 2
    hold = all(abs(v) <= tol * cscale for v in cons.values())
    return ConditionReport(tuple(map(tuple, M.tolist())), tuple(r.tolist()), consistent,
                           trivial, {k: float(v) for k, v in cons.items()}, hold)


@dataclass(frozen=True)
class ODESolution:
    """Closed-form solution A(z) of the two-step SI condition read as an ODE."""

    kind: str
    coefficients: dict
    expr: se.Expr

    def as_family(self) -> Optional[AFamily]:
        """The matching catalog family when the solution is one of them."""
        k = self.coefficients
        if self.kind == "quadratic":
            return Poly(a0=k["a0"], a1=k["a1"], a2=k["a2"])
        if self.kind == "exponential" and k["a1"] == 0.0:
            return ExpTail(a0=k["a0"], c=k["c"], nu=k["nu"])
        if self.kind == "power" and k["b0_plus"] == 0.0 and k["a0"] == 0.0:
            c0 = k["c"] * k["b1_plus"] ** k["mu"] if k["b1_plus"] > 0 else None
            if c0 is not None:
                return PowerTail(a2=k["a2"], a1=k["a1"], c0=c0, mu=k["mu"])
        return None

    def to_dict(self):
        return {"kind": self.kind, "coefficients": self.coefficients,
                "expr": se.to_text(self.expr)}


def solve_a_ode(d: StepDeltas, c: float = 1.0) -> ODESolution:
    """General A(z) solving (b1+ z + b0+)(b1- z + b0-) - 2(b1+ z + b0+)A' + 4 Rbar A = 0.

    ``c`` is the free integration constant.
    """
    p1, m1, p0, m0, Rb = d.b1_plus, d.b1_minus, d.b0_plus, d.b0_minus, d.R_bar
    z = se.z
    if p1 == 0.0 and p0 == 0.0:
        raise FamilyError("b1+ = b0+ = 0 is the reflective branch; A is unconstrained")
    if p1 != 0.0:
        mu = 2.0 * Rb / p1
        lin = p1 * z + p0
        if math.isclose(mu, 1.0, rel_tol=0, abs_tol=1e-12):
            cbar = (p1 * m0 - m1 * p0) / (2 * p1 ** 2)
            a2 = m1 / 2
            a1 = m1 * p0 / (2 * p1) + c * p1
            a0 = c * p0
            e = a2 * z ** 2 + a1 * z + a0 + cbar * lin * se.logabs(lin)
            co = {"mu": 1.0, "a2": a2, "a1": a1, "a0": a0, "cbar": cbar, "c": c,
                  "b1_plus": p1, "b0_plus": p0}
            return ODESolution("log-linear", co, e)
        if math.isclose(mu, 2.0, rel_tol=0, abs_tol=1e-12):
            cbar = m1 / (2 * p1 ** 2)
            k = (p1 * m0 - m1 * p0)
            a2 = c * p1 ** 2
            a1 = 2 * c * p1 * p0 - k / (2 * p1)
            a0 = c * p0 ** 2 - k / (2 * p1 ** 2) * p0
            e = a2 * z ** 2 + a1 * z + a0 + cbar * lin ** 2 * se.logabs(lin)
            co = {"mu": 2.0, "a2": a2, "a1": a1, "a0": a0, "cbar": cbar, "c": c,
                  "b1_plus": p1, "b0_plus": p0}
            return ODESolution("log-quadratic", co, e)
        a2 = m1 / (2 * (2 - mu))
        a1 = -mu * m1 * p0 / (2 * (1 - mu) * (2 - mu) * p1) + m0 / (2 * (1 - mu))
        a0 = (-m1 * p0 ** 2 / (2 * (1 - mu) * (2 - mu) * p1 ** 2)
              + p0 * m0 / (2 * (1 - mu) * p1))
        e = a2 * z ** 2 + a1 * z + a0 + c * lin ** mu
        co = {"mu": mu, "a2": a2, "a1": a1, "a0": a0, "c": c, "b1_plus": p1, "b0_plus": p0}
        return ODESolution("power", co, e)
    nu = 2.0 * Rb / p0
    if nu == 0.0:
        co = {"a2": m1 / 4, "a1": m0 / 2, "a0": c}
        return ODESolution("quadratic", co, m1 / 4 * z ** 2 + m0 / 2 * z + c)
    a1 = -m1 / (2 * nu)
    a0 = (a1 - m0 / 2) / nu
    co = {"nu": nu, "a1": a1, "a0": a0, "c": c}
    return ODESolution("exponential", co, a1 * z + a0 + c * se.exp(nu * z))


def a_ode_residual(d: StepDeltas, A: se.Expr, zs) -> np.ndarray:
    zs = np.asarray(zs, dtype=float)
    lin = d.b1_plus * zs + d.b0_plus
    return (lin * (d.b1_minus * zs + d.b0_minus) - 2 * lin * se.evaluate(se.diff(A), zs)
            + 4 * d.R_bar * se.evaluate(A, zs))


# ---------------------------------------------------------------- sampling

def probe_grid(n: int = 200, window=PROBE_WINDOW) -> np.ndarray:
    return np.linspace(window[0], window[1], n)


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _signed(rng, lo, hi):
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi))


def _shape_draw(cid: str, rng) -> dict:
    if cid == "1-1":
        return {"a0": _u(rng, 0.3, 2.0)}
    if cid == "1-2":
        return {"a1": _u(rng, 0.3, 2.0), "a0": _u(rng, -0.1, 1.0)}
    if cid == "1-3":
        return {"a2": _u(rng, 0.2, 1.5), "a1": _u(rng, -1.0, 1.0), "a0": _u(rng, 0.2, 1.5)}
    if cid == "1-4":
        return {"a3": _u(rng, 0.3, 1.5), "a2": _u(rng, -0.5, 1.5), "a1": _u(rng, 0.1, 1.0)}
    if cid == "1-4dep":
        return {"a3": _u(rng, 0.3, 1.5), "a2": _u(rng, -0.5, 1.5), "d1": _u(rng, -1.0, 1.0)}
    if cid == "1-5":
        return {"a4": _u(rng, 0.2, 1.0), "a2": _u(rng, -0.3, 1.0), "a1": _u(rng, 0.1, 1.0)}
    if cid == "1-5dep":
        return {"a4": _u(rng, 0.2, 1.0), "a3": _signed(rng, 0.2, 1.0), "a2": _u(rng, 0.3, 1.5)}
    if cid in ("2-1", "2-1dep"):
        mu = _u(rng, 2.2, 3.8) if rng.uniform() < 0.7 else _u(rng, 1.2, 1.8)
        a2 = _u(rng, 0.3, 1.5)
        a1 = _u(rng, 0.1, 1.0) if cid == "2-1" else 2 * a2 * _u(rng, -0.3, 0.5)
        return {"a2": a2, "a1": a1, "c0": _u(rng, 0.3, 1.5), "mu": mu}
    if cid == "2-2":
        return {"a2": _u(rng, 0.3, 1.5), "c0": _u(rng, 0.5, 1.5), "d0": _signed(rng, 0.2, 1.0)}
    if cid == "2-3":
        return {"c0": _u(rng, 0.5, 1.5), "a1": _u(rng, 0.1, 1.0), "d1": _signed(rng, 0.2, 0.8)}
    if cid == "2-3dep":
        a2 = _u(rng, 0.3, 1.5)
        return {"a2": a2, "a1": 2 * a2 * _u(rng, -0.3, 0.5), "c0": _u(rng, 0.6, 1.5),
                "d1": _signed(rng, 0.2, 0.8)}
    if cid == "3":
        return {"a0": _u(rng, -0.5, 1.5), "c": _signed(rng, 0.3, 1.5), "nu": _signed(rng, 0.3, 1.2)}
    raise FamilyError(cid)


def _healthy(case: CaseSpec, c: ParamSet, grid) -> bool:
    A = se.evaluate(a_expr(case.family), grid)
    if not np.all(A > 0.05):
        return False
    Q = c.b1 * grid + c.b0
    if c.b1 != 0.0 and np.min(np.abs(Q)) < 0.1:
        return False
    c2 = case.param_map(c)
    Q2 = c2.b1 * grid + c2.b0
    if c2.b1 != 0.0 and np.min(np.abs(Q2)) < 0.1:
        return False
    return True


def sample_case(case_id: str, rng, on_constraint: bool = True, offset=(0.1, 1.0),
                grid=None, max_tries: int = 2000) -> tuple:
    """Random admissible (CaseSpec, ParamSet) for a row.

    With ``on_constraint=False`` a conditional row's b0 is displaced from the
    constraint by a signed offset of magnitude in ``offset``. Draws keep
    |b1(2) + b1(0)| >= 1 for conditional rows so the displaced draws move the
    potentials by a visible amount.
    """
    grid = probe_grid() if grid is None else grid
    for _ in range(max_tries):
        try:
            case = CaseSpec(case_id, tuple(_shape_draw(case_id, rng).items()))
        except FamilyError:
            continue
        row = case._row
        b1 = 0.0 if row.b1_zero else _signed(rng, 0.5, 3.0)
        b0 = _u(rng, -2.0, 2.0)
        if row.lock is not None:
            b0 = row.lock(case.shape_dict, b1)
        if row.constraint is not None:
            b0 = b0 - row.constraint(case.shape_dict, b1, b0)
            if not on_constraint:
                b0 += _signed(rng, *offset)
            c2 = case.param_map(ParamSet(b1, b0))
            if abs(c2.b1 + b1) < 1.0:
                continue
        c = ParamSet(b1, b0, 0.0)
        try:
            if not _healthy(case, c, grid):
                continue
        except se.SingularPointError:
            continue
        return case, c
    raise RuntimeError(f"no admissible draw found for case {case_id}")


def random_family(kind, rng, grid=None, max_tries: int = 2000) -> AFamily:
    """A random member of a family kind with A > 0 on the probe window."""
    grid = probe_grid() if grid is None else grid
    name = kind if isinstance(kind, str) else kind.kind
    for _ in range(max_tries):
        if name == "Poly":
            f = Poly(*[_u(rng, -1.0, 1.5) for _ in range(5)])
        elif name == "PowerTail":
            f = PowerTail(_u(rng, -0.5, 1.5), _u(rng, -0.5, 1.0), _signed(rng, 0.2, 1.5),
                          _u(rng, -1.5, 4.5))
        elif name == "PowerTailCentered":
            f = PowerTailCentered(_u(rng, 0.3, 1.5), _u(rng, -0.3, 1.0),
                                  _signed(rng, 0.2, 1.5), _u(rng, -1.5, 4.5))
        elif name == "LogLinear":
            f = LogLinear(_u(rng, -0.5, 1.5), _u(rng, -0.5, 1.5), _signed(rng, 0.2, 1.0))
        elif name == "LogQuad":
            f = LogQuad(_u(rng, -0.5, 1.5), _u(rng, -0.5, 1.0), _signed(rng, 0.2, 1.0))
        elif name == "LogQuadCentered":
            f = LogQuadCentered(_u(rng, 0.3, 1.5), _u(rng, -0.3, 1.0), _u(rng, 0.3, 1.5),
                                _signed(rng, 0.2, 1.0))
        elif name == "ExpTail":
            f = ExpTail(_u(rng, -0.5, 1.5), _signed(rng, 0.2, 1.5), _signed(rng, 0.2, 1.5))
        else:
            raise FamilyError(f"unknown family kind {name!r}")
        try:
            A = se.evaluate(a_expr(f), grid)
        except (FamilyError, se.SingularPointError):
            continue
        if np.all(A > 0.05):
            return f
    raise RuntimeError(f"no admissible {name} family found")


__all__ = [
    "ParamSet", "StepDeltas", "AFamily", "Poly", "PowerTail", "PowerTailCentered",
    "LogLinear", "LogQuad", "LogQuadCentered", "ExpTail", "FAMILY_KINDS", "CaseSpec",
    "CASE_IDS", "FamilyError", "REDUCIBLE", "IRREDUCIBLE", "CONDITIONAL", "NOT_SI",
    "a_expr", "a_derivatives", "catalog", "make_case", "param_step", "reflective_step",
    "si_condition_system", "solve_a_ode", "a_ode_residual", "ODESolution",
    "ConditionReport", "closed_z_available", "sample_case", "random_family",
    "probe_grid", "family_from_dict", "PROBE_WINDOW",
]
