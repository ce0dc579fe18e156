"""Change of variable z = z(x) with z'(x)^2 = 2 A(z).

Closed forms are returned as expressions in ``x`` together with the
x-interval on which they are valid and the sign of dz/dx there. Everything
else goes through an adaptive Runge-Kutta integration of dz/dx = +-sqrt(2A).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, interpolate

from . import symexpr as se
from .model import AFamily, CaseSpec, a_expr, closed_z_available


class TurningPointError(ValueError):
    """A(z) reached zero inside the requested x-interval."""


class ZMap:
    interval: tuple
    branch: int

    def z(self, xs):
        raise NotImplementedError

    def dzdx(self, xs):
        raise NotImplementedError

    def residual(self, a: AFamily, xs=None) -> float:
        """max |z'^2 - 2A(z)| / (1 + |2A|) over sample points."""
        if xs is None:
            xs = np.linspace(*self.interval, 102)[1:-1]
        zz = self.z(xs)
        two_a = 2.0 * se.evaluate(a_expr(a), zz)
        return float(np.max(np.abs(self.dzdx(xs) ** 2 - two_a) / (1.0 + np.abs(two_a))))

    def to_csv(self, path, n: int = 201) -> None:
        xs = np.linspace(*self.interval, n)
        zs = self.z(xs)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "z"])
            for xv, zv in zip(xs, zs):
                w.writerow([repr(float(xv)), repr(float(zv))])


@dataclass(frozen=True)
class ClosedForm(ZMap):
    expr: se.Expr
    interval: tuple
    branch: int
    label: str = ""

    def z(self, xs):
        return se.evaluate(self.expr, xs)

    def dzdx(self, xs):
        return se.evaluate(se.diff(self.expr), xs)


@dataclass(frozen=True, eq=False)
class NumericTable(ZMap):
    xs: np.ndarray
    zs: np.ndarray
    slopes: np.ndarray
    curvatures: np.ndarray
    interval: tuple
    branch: int
    truncated: bool = False
    order: int = 5

    @property
    def _spline(self):
        # quintic Hermite: z' = +-sqrt(2A) and z'' = A'(z) are both exact
        cached = self.__dict__.get("_bp")
        if cached is None:
            data = np.stack([self.zs, self.slopes, self.curvatures], axis=1)
            cached = interpolate.BPoly.from_derivatives(self.xs, data)
            object.__setattr__(self, "_bp", cached)
        return cached

    def z(self, xs):
        xs = np.asarray(xs, dtype=float)
        self._check(xs)
        return self._spline(xs)

    def dzdx(self, xs):
        xs = np.asarray(xs, dtype=float)
        self._check(xs)
        return self._spline.derivative()(xs)

    def _check(self, xs):
        lo, hi = self.interval
        if np.any(xs < lo - 1e-12) or np.any(xs > hi + 1e-12):
            raise TurningPointError(f"x outside the reached interval [{lo}, {hi}]")

    def defect(self, a: AFamily) -> float:
        """Compare x-steps of the table with the quadrature of dz/sqrt(2A)."""
        A = a_expr(a)
        f = lambda t: 1.0 / math.sqrt(2.0 * float(se.evaluate(A, t)))  # noqa: E731
        worst = 0.0
        for k in range(1, len(self.xs)):
            dx, _ = integrate.quad(f, self.zs[k - 1], self.zs[k], epsabs=1e-14, epsrel=1e-12)
            worst = max(worst, abs(self.branch * dx - (self.xs[k] - self.xs[k - 1])))
        return worst


def numeric_z(a: AFamily, x_range, z_init: float, n: int = 2001, branch: int = 1,
              x_init: Optional[float] = None, rtol: float = 1e-12,
              atol: float = 1e-13) -> NumericTable:
    """Integrate dz/dx = branch*sqrt(2A(z)) through (x_init, z_init).

    The table stops at a turning point (A -> 0); ``truncated`` is then set and
    ``interval`` reports the part of ``x_range`` actually reached.
    """
    A = a_expr(a)
    lo, hi = map(float, x_range)
    x0 = lo if x_init is None else float(x_init)
    if not lo <= x0 <= hi:
        raise ValueError("x_init must lie inside x_range")
    if float(se.evaluate(A, z_init)) <= 0.0:
        raise TurningPointError(f"2A(z_init) = {2 * float(se.evaluate(A, z_init))} <= 0")
    sgn = 1.0 if branch >= 0 else -1.0

    def rhs(_, y):
        v = float(se.evaluate(A, y[0]))
        return [sgn * math.sqrt(2.0 * v) if v > 0 else 0.0]

    def hit(_, y):
        return float(se.evaluate(A, y[0]))
    hit.terminal = True

    grid = np.linspace(lo, hi, n)
    xs_out, zs_out = [], []
    reached = [x0, x0]
    truncated = False
    for side, end in ((+1, hi), (-1, lo)):
        if end == x0:
            continue
        pts = grid[grid > x0] if side > 0 else grid[grid < x0][::-1]
        sol = integrate.solve_ivp(rhs, (x0, end), [z_init], method="RK45", t_eval=pts,
                                  rtol=rtol, atol=atol, events=hit)
        if sol.status == 1:
            truncated = True
        reached[0 if side < 0 else 1] = sol.t[-1] if len(sol.t) else x0
        xs_out.extend(sol.t.tolist())
        zs_out.extend(sol.y[0].tolist())
    xs_out.append(x0)
    zs_out.append(z_init)
    xs_arr = np.array(xs_out)
    order = np.argsort(xs_arr)
    xs_arr = xs_arr[order]
    zs_arr = np.array(zs_out)[order]
    keep = np.concatenate([[True], np.diff(xs_arr) > 0])
    xs_arr, zs_arr = xs_arr[keep], zs_arr[keep]
    Av = se.evaluate(A, zs_arr)
    slopes = sgn * np.sqrt(2.0 * np.clip(Av, 0.0, None))
    curv = se.evaluate(se.diff(A), zs_arr)
    return NumericTable(xs_arr, zs_arr, slopes, curv, (float(xs_arr[0]), float(xs_arr[-1])),
                        int(sgn), truncated)


# ---------------------------------------------------------------- closed forms

X = se.x


def _sech2(y):
    return 4.0 / (se.exp(y) + se.exp(-y)) ** 2


def _sinh2(y):
    return 0.25 * (se.exp(y) - se.exp(-y)) ** 2


def _cosh2(y):
    return 0.25 * (se.exp(y) + se.exp(-y)) ** 2


def _quartic_u(a4: float, c: float):
    # u with a4 u^2 (u^2 + c) on the right of z'^2 = 2A
    if c > 0:
        k = math.sqrt(2 * a4 * c)
        x_pole = math.log(2.0) / k
        e = 4 * math.sqrt(c) * se.exp(k * X) / (se.exp(2 * k * X) - 4.0)
        return e, (x_pole + 0.1, x_pole + 6.0)
    return -1.0 / (math.sqrt(2 * a4) * X), (0.3, 6.0)


def _power_u(a2: float, c0: float, mu: float):
    om = (mu - 2.0) * math.sqrt(a2 / 2.0)
    K = c0 / a2
    base = K * _sinh2(om * X) if K > 0 else -K * _cosh2(om * X)
    return base ** (1.0 / (2.0 - mu)), (0.2, 5.0)


def _exp_z(a0: float, c: float, nu: float):
    if a0 == 0.0:
        return (math.log(2.0 / (c * nu * nu)) - 2.0 * se.logabs(X)) / nu, (0.2, 6.0)
    y = nu * math.sqrt(a0 / 2.0) * X
    if c < 0:
        inner = (a0 / -c) * _sech2(y)
    else:
        inner = (4.0 * a0 / c) / (se.exp(y) - se.exp(-y)) ** 2
    return se.logabs(inner) / nu, (0.2, 6.0)


def _tame(e, iv, zmax=10.0, slope_max=50.0, n=2001):
    # keep the longest stretch of the default window where z and dz/dx stay
    # moderate, so closed and numeric maps are compared on comparable scales
    xs = np.linspace(iv[0], iv[1], n)
    with np.errstate(all="ignore"):
        try:
            zz = se.evaluate(e, xs)
            dz = se.evaluate(se.diff(e), xs)
        except se.SingularPointError:
            return iv
    ok = np.isfinite(zz) & (np.abs(zz) <= zmax) & (np.abs(dz) <= slope_max)
    best, start = (0, 0), None
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if best[1] - best[0] < 10:
        return iv
    return (float(xs[best[0]]), float(xs[best[1] - 1]))


def closed_z(case: CaseSpec, interval=None) -> Optional[ClosedForm]:
    """Closed-form z(x) for the case, or None where only numerics apply."""
    if not closed_z_available(case):
        return None
    s = case.shape_dict
    cid = case.case_id
    if cid == "1-1":
        e, iv = math.sqrt(2 * s["a0"]) * X, (-10.0, 10.0)
    elif cid == "1-2":
        e, iv = s["a1"] / 2 * X ** 2 - s["a0"] / s["a1"], (0.05, 6.0)
    elif cid == "1-3":
        a2, a1, a0 = s["a2"], s["a1"], s["a0"]
        k = math.sqrt(2 * a2)
        beta = a0 / (2 * a2) - a1 ** 2 / (8 * a2 ** 2)
        e = 0.5 * se.exp(k * X) - beta * se.exp(-k * X) - a1 / (2 * a2)
        if beta >= 0:
            iv = (-6.0, 6.0)
        else:
            xs = math.log(-2 * beta) / (2 * k)
            iv = (xs + 0.3, xs + 6.0)
    elif cid in ("1-4", "1-4dep"):
        if cid == "1-4":
            a3, d1, shift = s["a3"], -s["a2"], 0.0
        else:
            a3, d1 = s["a3"], s["d1"]
            shift = (s["a2"] + d1) / (3 * a3)
        if d1 < 0:
            u = (d1 / a3) * _sech2(math.sqrt(-d1 / 2) * X)
            iv = (0.2, 6.0)
        else:
            u = 2.0 / (a3 * X ** 2)
            iv = (0.3, 6.0)
        e = u - shift
    elif cid == "1-5":
        u, iv = _quartic_u(s["a4"], s["a2"] / s["a4"])
        e = u
    elif cid == "1-5dep":
        a4, a3 = s["a4"], s["a3"]
        c = s["a2"] / a4 - 3 * a3 ** 2 / (8 * a4 ** 2)
        u, iv = _quartic_u(a4, c)
        e = u - a3 / (4 * a4)
    elif cid in ("2-1", "2-1dep"):
        u, iv = _power_u(s["a2"], s["c0"], s["mu"])
        e = u - (s["a1"] / (2 * s["a2"]) if cid == "2-1dep" else 0.0)
    elif cid in ("2-3", "2-3dep"):
        c0, d1 = s["c0"], s["d1"]
        shift = s["a1"] / (2 * s["a2"]) if cid == "2-3dep" else 0.0
        e = se.exp(d1 / 2 * X ** 2 - c0 / d1) - shift
        iv = (0.1, 4.0)
    elif cid == "3":
        e, iv = _exp_z(s["a0"], s["c"], s["nu"])
    else:
        return None
    if interval is not None:
        iv = (float(interval[0]), float(interval[1]))
    else:
        iv = _tame(e, iv)
    probe = np.linspace(iv[0], iv[1], 41)
    slope = se.evaluate(se.diff(e), probe)
    if not (np.all(slope > 0) or np.all(slope < 0)):
        raise TurningPointError(f"z(x) is not monotone on {iv} for case {cid}")
    return ClosedForm(e, iv, 1 if slope[0] > 0 else -1, label=cid)


def numeric_like(case: CaseSpec, zmap: ClosedForm, n: int = 2001, **kw) -> NumericTable:
    """Numeric map seeded at the middle of a closed form, on its branch."""
    lo, hi = zmap.interval
    xm = 0.5 * (lo + hi)
    return numeric_z(case.family, (lo, hi), float(zmap.z(xm)), n=n, branch=zmap.branch,
                     x_init=xm, **kw)


def x_potential(v: se.Expr, zmap: ZMap):
    """Callable x -> V(z(x))."""
    return lambda xs: se.evaluate(v, zmap.z(xs))


__all__ = ["ZMap", "ClosedForm", "NumericTable", "numeric_z", "closed_z", "numeric_like",
           "x_potential", "TurningPointError"]
