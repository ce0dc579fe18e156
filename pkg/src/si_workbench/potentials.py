"""Potentials and gauged operators of the type A 2-fold SUSY system.

Conventions: ``Q(z) = b1*z + b0``, ``z'(x)^2 = 2A(z)`` and the physical
Hamiltonian is ``H = -1/2 d^2/dx^2 + V(x)``. In the gauged z-picture an
operator ``-c2 d^2/dz^2 - c1 d/dz + c0`` is stored by its three coefficients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import symexpr as se
from .model import AFamily, ParamSet, a_derivatives, a_expr


class GaugeError(ValueError):
    """The gauge weight has a non-integrable singularity on the interval."""


def _formulas(A, A1, A2, Q, b1, R, with_i2=True):
    # works on Exprs and on numpy arrays alike
    base = A * A2 - 0.75 * A1 * A1 - Q * Q
    twist = 2.0 * (Q * A1 - 2.0 * b1 * A)
    vm = -(base + twist) / (4.0 * A) - R
    vp = -(base - twist) / (4.0 * A) - R
    vi1 = A2 / 4.0 - (A1 * A1 - 4.0 * Q * Q) / (16.0 * A) - R
    vi2 = None
    if with_i2 and b1 != 0.0:
        vi2 = vi1 - b1 * A1 / Q + 2.0 * b1 * b1 * A / (Q * Q)
    return vm, vp, vi1, vi2


def q_expr(c: ParamSet) -> se.Expr:
    return c.b1 * se.z + c.b0


@dataclass(frozen=True)
class PotentialSet:
    v_minus: se.Expr
    v_plus: se.Expr
    v_i1: se.Expr
    v_i2: Optional[se.Expr]

    def values(self, zs) -> dict:
        out = {"Vm": se.evaluate(self.v_minus, zs), "Vp": se.evaluate(self.v_plus, zs),
               "Vi1": se.evaluate(self.v_i1, zs)}
        out["Vi2"] = None if self.v_i2 is None else se.evaluate(self.v_i2, zs)
        return out

    def to_csv(self, path, zmap, xs) -> None:
        """Write columns x, z, Vm, Vp, Vi1, Vi2 (Vi2 blank when absent)."""
        xs = np.asarray(xs, dtype=float)
        zs = zmap.z(xs)
        vals = self.values(zs)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "z", "Vm", "Vp", "Vi1", "Vi2"])
            for i in range(len(xs)):
                vi2 = "" if vals["Vi2"] is None else repr(float(vals["Vi2"][i]))
                w.writerow([repr(float(xs[i])), repr(float(zs[i])), repr(float(vals["Vm"][i])),
                            repr(float(vals["Vp"][i])), repr(float(vals["Vi1"][i])), vi2])


def potential_set(a: AFamily, c: ParamSet) -> PotentialSet:
    A, A1, A2 = a_derivatives(a, 2)
    vm, vp, vi1, vi2 = _formulas(A, A1, A2, q_expr(c), c.b1, c.R)
    return PotentialSet(vm, vp, vi1, vi2)


def potential_pair(a: AFamily, c: ParamSet) -> tuple:
    """(V-, V+) as expressions in z."""
    p = potential_set(a, c)
    return p.v_minus, p.v_plus


def intermediate_potentials(a: AFamily, c: ParamSet) -> tuple:
    """(V^i1, V^i2); the second is None when b1 = 0."""
    p = potential_set(a, c)
    return p.v_i1, p.v_i2


class ADerivCache:
    """A, A', A'' evaluated once on a fixed z-grid for fast potential sweeps."""

    def __init__(self, a: AFamily, zs):
        self.zs = np.asarray(zs, dtype=float)
        A, A1, A2 = a_derivatives(a, 2)
        self.A = se.evaluate(A, self.zs)
        self.A1 = se.evaluate(A1, self.zs)
        self.A2 = se.evaluate(A2, self.zs)

    def potentials(self, c: ParamSet) -> dict:
        Q = c.b1 * self.zs + c.b0
        if c.b1 != 0.0 and np.any(Q == 0.0):
            raise se.SingularPointError(se.make_add([se.Const(c.b0), c.b1 * se.z]),
                                        "division by zero")
        vm, vp, vi1, vi2 = _formulas(self.A, self.A1, self.A2, Q, c.b1, c.R)
        return {"Vm": vm, "Vp": vp, "Vi1": vi1, "Vi2": vi2}


def potential_values(a: AFamily, c: ParamSet, zs) -> dict:
    return ADerivCache(a, zs).potentials(c)


# ---------------------------------------------------------------- operators

class Operator:
    """Linear differential operator acting on expressions in z."""

    def apply(self, f: se.Expr) -> se.Expr:
        raise NotImplementedError

    def __call__(self, f):
        return self.apply(se.as_expr(f))

    def __matmul__(self, other: "Operator") -> "Operator":
        return Product((self, other))

    def __add__(self, other):
        return Sum(((1.0, self), (1.0, other)))

    def __sub__(self, other):
        return Sum(((1.0, self), (-1.0, other)))

    def __rmul__(self, k):
        return Sum(((float(k), self),))

    def residual(self, other: "Operator", tests: Sequence[se.Expr], zs) -> float:
        """max |(self - other) f| / scale over test functions and grid points."""
        worst = 0.0
        for f in tests:
            u = se.evaluate(self.apply(f), zs)
            v = se.evaluate(other.apply(f), zs)
            scale = 1.0 + max(np.abs(u).max(), np.abs(v).max())
            worst = max(worst, float(np.abs(u - v).max() / scale))
        return worst


@dataclass(frozen=True)
class LinearOp(Operator):
    """sum_j coeffs[j] * d^j/dz^j."""

    coeffs: tuple

    def apply(self, f):
        out = []
        g = f
        for j, k in enumerate(self.coeffs):
            if j:
                g = se.diff(g)
            out.append(k * g)
        return se.make_add(out)

    def compose(self, other: "LinearOp") -> "LinearOp":
        """Coefficients of self o other (Leibniz rule)."""
        n = len(self.coeffs) + len(other.coeffs) - 1
        acc = [[] for _ in range(n)]
        for i, li in enumerate(self.coeffs):
            for j, mj in enumerate(other.coeffs):
                # l_i d^i (m_j d^j) = sum_k C(i,k) l_i m_j^{(i-k)} d^{j+k}
                derivs = [mj]
                for _ in range(i):
                    derivs.append(se.diff(derivs[-1]))
                for k in range(i + 1):
                    acc[j + k].append(comb(i, k) * li * derivs[i - k])
        return LinearOp(tuple(se.make_add(t) for t in acc))


@dataclass(frozen=True)
class Product(Operator):
    ops: tuple

    def apply(self, f):
        for op in reversed(self.ops):
            f = op.apply(f)
        return f


@dataclass(frozen=True)
class Sum(Operator):
    terms: tuple

    def apply(self, f):
        return se.make_add([k * op.apply(f) for k, op in self.terms])


@dataclass(frozen=True)
class GaugedOperator(Operator):
    """-c2 d^2/dz^2 - c1 d/dz + c0."""

    c2: se.Expr
    c1: se.Expr
    c0: se.Expr

    def as_linear(self) -> LinearOp:
        return LinearOp((self.c0, -self.c1, -self.c2))

    def apply(self, f):
        return self.as_linear().apply(f)

    def shifted(self, k: float) -> "GaugedOperator":
        return GaugedOperator(self.c2, self.c1, self.c0 + k)


def first_order(p: se.Expr, q: se.Expr) -> LinearOp:
    """p (d/dz + q)."""
    return LinearOp((p * q, p))


@dataclass(frozen=True)
class GaugedSystem:
    tH_minus: GaugedOperator
    tH_plus: GaugedOperator
    tH_i1: GaugedOperator
    tH_i2: Optional[GaugedOperator]
    tP2_minus: LinearOp
    tP2_plus: LinearOp
    P21_minus: LinearOp
    P22_minus: LinearOp
    P21_plus: LinearOp
    P22_plus: LinearOp
    hP21_minus: Optional[LinearOp]
    hP22_minus: Optional[LinearOp]
    hP21_plus: Optional[LinearOp]
    hP22_plus: Optional[LinearOp]
    C21: float
    C22: float
    hC21: Optional[float]
    hC22: Optional[float]
    z0: Optional[float]

    @property
    def has_hatted(self) -> bool:
        return self.hP21_minus is not None


def gauged_ops(a: AFamily, c: ParamSet) -> GaugedSystem:
    """All gauged operators, both factorizations and their constants."""
    A, A1, A2 = a_derivatives(a, 2)
    b1, R = c.b1, c.R
    Q = q_expr(c)
    dQ = se.Const(b1)
    tHm = GaugedOperator(A, Q, 0.5 * dQ - R)
    tHp = GaugedOperator(A, Q, -1.5 * dQ + Q * A1 / A - R)
    i1 = A2 / 2.0 + (2.0 * Q - A1) * A1 / (4.0 * A) - b1 / 2.0 - R
    tHi1 = GaugedOperator(A, Q, i1)
    qa = Q / A
    tP2m = LinearOp((se.Const(0.0), se.Const(0.0), 2.0 * A))
    tP2p = LinearOp((2.0 * A * (se.diff(qa) + qa * qa), 4.0 * Q, 2.0 * A))
    zp = se.sqrt(2.0 * A)
    P21m = first_order(zp, -A1 / (2.0 * A))
    P22m = first_order(zp, se.Const(0.0))
    P22p = first_order(-zp, (2.0 * Q - A1) / (2.0 * A))
    P21p = first_order(-zp, qa)
    C22 = (b1 - 2.0 * R) / 2.0
    C21 = (-b1 - 2.0 * R) / 2.0
    hat = dict(tH_i2=None, hP21_minus=None, hP22_minus=None, hP21_plus=None,
               hP22_plus=None, hC21=None, hC22=None, z0=None)
    if b1 != 0.0:
        z0 = c.b0 / b1
        w = 1.0 / (se.z + z0)
        hat = dict(
            tH_i2=GaugedOperator(A, Q, i1 - b1 * A1 / Q + 2.0 * b1 * b1 * A / (Q * Q)),
            hP21_minus=first_order(zp, -A1 / (2.0 * A) + w),
            hP22_minus=first_order(zp, -w),
            hP21_plus=first_order(-zp, qa - w),
            hP22_plus=first_order(-zp, (2.0 * Q - A1) / (2.0 * A) + w),
            hC21=(b1 - 2.0 * R) / 2.0, hC22=(-b1 - 2.0 * R) / 2.0, z0=z0)
    return GaugedSystem(tHm, tHp, tHi1, hat["tH_i2"], tP2m, tP2p, P21m, P22m, P21p, P22p,
                        hat["hP21_minus"], hat["hP22_minus"], hat["hP21_plus"],
                        hat["hP22_plus"], C21, C22, hat["hC21"], hat["hC22"], hat["z0"])


def hatted(g: GaugedSystem):
    if not g.has_hatted:
        raise ValueError("the hatted factorization needs b1 != 0")
    return g.hP21_minus, g.hP22_minus, g.hP21_plus, g.hP22_plus


TEST_FUNCTIONS = (se.z ** 2, se.z ** 3, se.exp(0.1 * se.z), 1.0 / (se.z + 5.0))


def identity_residuals(a: AFamily, c: ParamSet, zs, tests=TEST_FUNCTIONS) -> dict:
    """Residuals of every gauged operator identity on the test functions."""
    g = gauged_ops(a, c)
    r = {}
    r["intertwining"] = (g.tP2_minus @ g.tH_minus).residual(g.tH_plus @ g.tP2_minus, tests, zs)
    r["P2-_factorization"] = (g.P21_minus @ g.P22_minus).residual(g.tP2_minus, tests, zs)
    r["P2+_factorization"] = (g.P22_plus @ g.P21_plus).residual(g.tP2_plus, tests, zs)
    r["H-_factorization"] = (0.5 * (g.P22_plus @ g.P22_minus)).residual(
        g.tH_minus.shifted(-g.C22), tests, zs)
    r["H+_factorization"] = (0.5 * (g.P21_minus @ g.P21_plus)).residual(
        g.tH_plus.shifted(-g.C21), tests, zs)
    r["Hi1_from_P22"] = (0.5 * (g.P22_minus @ g.P22_plus)).residual(
        g.tH_i1.shifted(-g.C22), tests, zs)
    r["Hi1_from_P21"] = (0.5 * (g.P21_plus @ g.P21_minus)).residual(
        g.tH_i1.shifted(-g.C21), tests, zs)
    if g.has_hatted:
        h21m, h22m, h21p, h22p = hatted(g)
        r["hat_P2-_factorization"] = (h21m @ h22m).residual(g.tP2_minus, tests, zs)
        r["hat_P2+_factorization"] = (h22p @ h21p).residual(g.tP2_plus, tests, zs)
        r["hat_H-_factorization"] = (0.5 * (h22p @ h22m)).residual(
            g.tH_minus.shifted(-g.hC22), tests, zs)
        r["hat_H+_factorization"] = (0.5 * (h21m @ h21p)).residual(
            g.tH_plus.shifted(-g.hC21), tests, zs)
        r["Hi2_from_hat_P22"] = (0.5 * (h22m @ h22p)).residual(
            g.tH_i2.shifted(-g.hC22), tests, zs)
        r["Hi2_from_hat_P21"] = (0.5 * (h21p @ h21m)).residual(
            g.tH_i2.shifted(-g.hC21), tests, zs)
    return r


# ---------------------------------------------------------------- gauge

def integrate_expr(e: se.Expr, zs, z_ref: float, probe: int = 32,
                   method: str = "quad") -> np.ndarray:
    """Definite integrals of ``e`` from ``z_ref`` to each point of ``zs``.

    ``method="quad"`` runs adaptive quadrature piece by piece;
    ``method="gauss"`` applies a fixed 24-point Gauss-Legendre rule on every
    gap between neighbouring points in one vectorized evaluation, which suits
    dense grids and smooth integrands.
    """
    zs = np.asarray(zs, dtype=float)
    if method == "gauss":
        return _gauss_cumulative(e, zs, z_ref)
    order = np.argsort(zs)
    pts = np.concatenate([[z_ref], zs[order]])
    f = lambda t: float(se.evaluate(e, t))  # noqa: E731
    vals = np.zeros(len(zs))
    lo_i = np.searchsorted(pts[1:], z_ref)
    # walk outward from z_ref in both directions so each piece is short
    acc = 0.0
    prev = z_ref
    for k in range(lo_i, len(zs)):
        zk = pts[1 + k]
        acc += _piece(f, e, prev, zk, probe)
        vals[order[k]] = acc
        prev = zk
    acc = 0.0
    prev = z_ref
    for k in range(lo_i - 1, -1, -1):
        zk = pts[1 + k]
        acc += _piece(f, e, prev, zk, probe)
        vals[order[k]] = acc
        prev = zk
    return vals


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _gauss_cumulative(e, zs, z_ref):
    pts = np.unique(np.concatenate([[z_ref], zs]))
    lo, hi = pts[:-1], pts[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    try:
        fv = se.evaluate(e, nodes.ravel()).reshape(nodes.shape)
    except se.SingularPointError as err:
        raise GaugeError(f"singular integrand on [{pts[0]}, {pts[-1]}]: {err}") from err
    cum = np.concatenate([[0.0], np.cumsum(half * (fv @ _GL_WEIGHTS))])
    cum -= cum[np.searchsorted(pts, z_ref)]
    return cum[np.searchsorted(pts, zs)]


def _piece(f, e, lo, hi, probe):
    if lo == hi:
        return 0.0
    try:
        se.evaluate(e, np.linspace(lo, hi, probe))
    except se.SingularPointError as err:
        raise GaugeError(f"singular integrand between {lo} and {hi}: {err}") from err
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True)
class GaugeWeight:
    """Gauge weight W with dW/dz = (A' - 2Q)/(4A).

    ``expr`` is a closed form when one is known; otherwise values come from
    quadrature relative to ``z_ref``.
    """

    derivative: se.Expr
    expr: Optional[se.Expr]
    z_ref: float = 1.0

    def value(self, zs) -> np.ndarray:
        zs = np.asarray(zs, dtype=float)
        if self.expr is not None:
            return se.evaluate(self.expr, zs) - float(se.evaluate(self.expr, self.z_ref))
        return integrate_expr(self.derivative, zs, self.z_ref)


def gauge_weight(a: AFamily, c: ParamSet, z_ref: float = 1.0) -> GaugeWeight:
    A, A1 = a_derivatives(a, 1)
    Q = q_expr(c)
    w = (A1 - 2.0 * Q) / (4.0 * A)
    closed = None
    from .model import Poly
    if isinstance(a, Poly) and a.degree <= 1:
        z = se.z
        if a.degree == 0:
            closed = -(c.b1 * z ** 2 / 2.0 + c.b0 * z) / (2.0 * a.a0)
        else:
            lin = a.a1 * z + a.a0
            closed = (0.25 * se.logabs(lin)
                      - 0.5 * (c.b1 * z / a.a1
                               + (c.b0 - c.b1 * a.a0 / a.a1) / a.a1 * se.logabs(lin)))
    elif c.b1 == 0.0 and c.b0 == 0.0:
        closed = 0.25 * se.logabs(A)
    return GaugeWeight(w, closed, z_ref)


def conjugated(op: GaugedOperator, w: se.Expr) -> tuple:
    """Coefficients of exp(-W) op exp(W) in z: (second, first, zeroth).

    With ``d -> d + w`` the operator ``-c2 d^2 - c1 d + c0`` becomes
    ``-c2 d^2 - (2 c2 w + c1) d + (c0 - c2 (w' + w^2) - c1 w)``.
    """
    second = op.c2
    first = 2.0 * op.c2 * w + op.c1
    zeroth = op.c0 - op.c2 * (se.diff(w) + w * w) - op.c1 * w
    return second, first, zeroth


def gauge_route(a: AFamily, c: ParamSet) -> dict:
    """x-space data of the un-gauged Hamiltonians.

    ``first_order_defect`` must vanish: after conjugation the first-derivative
    coefficient has to equal A'/2 so the operator is -1/2 d^2/dx^2 + V.
    """
    g = gauged_ops(a, c)
    w = gauge_weight(a, c).derivative
    A1 = a_derivatives(a, 1)[1]
    out = {}
    for name, op in (("Vm", g.tH_minus), ("Vp", g.tH_plus), ("Vi1", g.tH_i1)):
        _, first, zeroth = conjugated(op, w)
        out[name] = zeroth
        out[name + "_first_order_defect"] = first - 0.5 * A1
    return out


def superpotentials(a: AFamily, c: ParamSet) -> tuple:
    """(W0, W1) in z with the z' factor included."""
    A, A1 = a_derivatives(a, 1)
    w = gauge_weight(a, c).derivative
    zp = se.sqrt(2.0 * A)
    return zp * w, zp * (w - A1 / (2.0 * A))


def susy_potential(a: AFamily, W: se.Expr, C: float) -> se.Expr:
    """1/2 (W^2 - dW/dx) + C with dW/dx = z' dW/dz."""
    zp = se.sqrt(2.0 * a_expr(a))
    return 0.5 * (W * W - zp * se.diff(W)) + C


__all__ = [
    "PotentialSet", "potential_set", "potential_pair", "intermediate_potentials",
    "potential_values", "ADerivCache", "Operator", "LinearOp", "GaugedOperator",
    "GaugedSystem", "gauged_ops", "first_order", "hatted", "identity_residuals",
    "TEST_FUNCTIONS", "GaugeWeight", "gauge_weight", "GaugeError", "integrate_expr",
    "conjugated", "gauge_route", "superpotentials", "susy_potential", "q_expr",
]
