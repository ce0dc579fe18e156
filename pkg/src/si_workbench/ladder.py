"""Parameter chains, the preserved flag and the exact solvable levels.

Intertwining gives tP2+(c) tH+(c) = tH-(c) tP2+(c), and two-step SI gives
H+(c) = H-(c') + R2. In gauged form the second relation picks up the factor
exp(W(c) - W(c')), so the flag is

    V_2n(c) = <1, z> + tP2+(c) [exp(W(c) - W(c')) V_2n-2(c')].

A basis function at level k is therefore g(z) exp(Om_k(z)) with g an
expression and Om_k' = (Q(c_2k) - Q(c)) / (2A). On the level-k block tH-(c)
acts like tH-(c_2k) + sum of the shifts, whose eigenvalues on <1, z> are
+-b1/2 - R. Hence the ladder

    E_k,+- = +-b1(c_2k)/2 - R + sum_{j<k} R2(c_2j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import mpmath
import numpy as np

from . import symexpr as se
from .model import CaseSpec, ParamSet, a_derivatives, probe_grid, reflective_step
from .potentials import LinearOp, gauged_ops, integrate_expr

REQUESTED = "requested-length"
CONSTRAINT_BROKEN = "constraint-broken"
FLAG_DEGENERATE = "flag-degenerate"

GRAM_TOL = 1e-12
ROUTE_TOL = 1e-8


class FlagDegenerateError(RuntimeError):
    pass


@dataclass
class ParamChain:
    params: list
    shifts: list
    termination_reason: str = REQUESTED

    @property
    def steps(self) -> int:
        return len(self.shifts)

    def to_dict(self):
        return {"params": [p.to_dict() for p in self.params],
                "shifts": [float(s) for s in self.shifts],
                "termination_reason": self.termination_reason}


def chain(case: CaseSpec, c0: ParamSet, n: int, step: Optional[Callable] = None) -> ParamChain:
    """Iterate the parameter map n times.

    ``step`` maps c to (c', R2) and defaults to the case's own map. For a
    conditional case the chain stops as soon as the constraint fails at the
    parameter set it would step from.
    """
    if step is None:
        step = lambda c: (case.param_map(c), case.shift(c))  # noqa: E731
    params, shifts = [c0], []
    for _ in range(n):
        cur = params[-1]
        if case.is_conditional and not case.constraint_holds(cur):
            return ParamChain(params, shifts, CONSTRAINT_BROKEN)
        nxt, r2 = step(cur)
        params.append(nxt)
        shifts.append(float(r2))
    return ParamChain(params, shifts, REQUESTED)


def reflective_chain(case: CaseSpec, c0: ParamSet, n: int) -> ParamChain:
    return chain(case, c0, n, step=reflective_step)


# ---------------------------------------------------------------- flag values

FLAG_DPS = 30
GL_NODES = 24
# float chain parameters split a Jordan pair by about sqrt(eps)
JORDAN_TOL = 1e-6


def _mp(xs) -> np.ndarray:
    return np.array([mpmath.mpf(float(x)) for x in np.ravel(xs)], dtype=object)


@lru_cache(maxsize=None)
def _gl_rule(n: int, dps: int):
    """Gauss-Legendre nodes and weights on [-1, 1], refined by Newton at dps."""
    x0, _ = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    with mpmath.workdps(dps + 10):
        for guess in x0:
            x = mpmath.mpf(float(guess))
            for _ in range(8):
                p0, p1 = mpmath.mpf(1), x
                for k in range(1, n):
                    p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
                dp = n * (x * p1 - p0) / (x * x - 1)
                x = x - p1 / dp
            nodes.append(x)
            weights.append(2 / ((1 - x * x) * dp * dp))
    return np.array(nodes, dtype=object), np.array(weights, dtype=object)


def _gauge_factor(fam, ck: ParamSet, c0: ParamSet, zs, z_ref: float, dps: int) -> np.ndarray:
    """exp(Om_k) on zs, Om_k' = (Q(c_k) - Q(c0)) / (2A), Om_k(z_ref) = 0."""
    db1, db0 = ck.b1 - c0.b1, ck.b0 - c0.b0
    if db1 == 0.0 and db0 == 0.0:
        return np.array([mpmath.mpf(1)] * len(zs), dtype=object)
    knots = np.unique(np.append(np.asarray(zs, dtype=float), z_ref))
    x, w = _gl_rule(GL_NODES, dps)
    a, b = _mp(knots[:-1]), _mp(knots[1:])
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = mid[:, None] + half[:, None] * x[None, :]
    A = se.evaluate(a_derivatives(fam, 0)[0], nodes.ravel(), dtype=object).reshape(nodes.shape)
    gaps = half * ((nodes * db1 + db0) / (2 * A) * w[None, :]).sum(axis=1)
    cum = np.concatenate([[mpmath.mpf(0)], np.cumsum(gaps)])
    cum = cum - cum[int(np.searchsorted(knots, z_ref))]
    om = cum[np.searchsorted(knots, np.asarray(zs, dtype=float))]
    return np.frompyfunc(mpmath.exp, 1, 1)(om)


def _level_values(case: CaseSpec, ch: ParamChain, k: int, zs, z_ref: float, dps: int):
    """Values of the two level-k flag functions and of tH-(c0) on them.

    The level-k functions are g exp(Om_k) with
    g = tP2+(c0)_(shifted) ... tP2+(c_2k-2)_(shifted) {1, z}; conjugating
    tP2+(c_j) = 2A (d + Q_j/A)^2 by the relative weight turns its inner
    factor into d + (Q_j + Q_k) / (2A).
    """
    fam, c0, ck = case.family, ch.params[0], ch.params[k]
    order = 2 * k + 2
    with mpmath.workdps(dps):
        zm = _mp(zs)
        # series of A itself, so that its derivatives match its coefficients exactly
        A = se.taylor(a_derivatives(fam, 0)[0], zm, order, dtype=object)
        inv = A.reciprocal()
        q = lambda c: se.Series.variable(zm, order, c.b1, c.b0)  # noqa: E731
        w = (q(ck) - q(c0)) * inv * 0.5
        fac = _gauge_factor(fam, ck, c0, zs, z_ref, dps)
        vals, acts = [], []
        for base in (se.Series.variable(zm, order, 0.0, 1.0), se.Series.variable(zm, order)):
            cur = base
            for j in range(k - 1, -1, -1):
                s = (q(ch.params[j]) + q(ck)) * inv * 0.5
                u = cur.d() + s * cur
                cur = 2.0 * A * (u.d() + s * u)
            u1 = cur.d() + w * cur
            h = (A * (u1.d() + w * u1)) * -1.0 - q(c0) * u1 + (0.5 * c0.b1 - c0.R) * cur
            vals.append(cur.value * fac)
            acts.append(h.value * fac)
    return vals, acts


# ---------------------------------------------------------------- flag

@dataclass(frozen=True)
class WeightedFunction:
    """g(z) exp(Om(z)) with Om' = ``weight`` (None means Om = 0).

    Symbolic form of a flag function, for export and plotting.
    """

    g: se.Expr
    weight: Optional[se.Expr] = None
    level: int = 0

    def factor(self, zs, z_ref: float) -> np.ndarray:
        if self.weight is None:
            return np.ones_like(np.asarray(zs, dtype=float))
        return np.exp(integrate_expr(self.weight, zs, z_ref, method="gauss"))

    def values(self, zs, z_ref: float) -> np.ndarray:
        g = se.evaluate(self.g, zs, dtype=np.longdouble)
        return (g * self.factor(zs, z_ref)).astype(float)


@dataclass(frozen=True)
class FlagFunction:
    """Level-k flag function built from the kernel function ``base``."""

    level: int
    base: str
    weight: Optional[se.Expr] = None

    def to_dict(self):
        return {"level": self.level, "base": self.base,
                "weight": None if self.weight is None else se.to_text(self.weight)}


def _shifted(op: LinearOp, w: Optional[se.Expr]) -> LinearOp:
    """exp(-Om) L exp(Om) for Om' = w, i.e. d -> d + w."""
    if w is None:
        return op
    shift = LinearOp((w, se.Const(1.0)))
    out = LinearOp((op.coeffs[0],))
    power = LinearOp((se.Const(1.0),))
    for k in range(1, len(op.coeffs)):
        power = shift.compose(power)
        out = _add(out, LinearOp(tuple(op.coeffs[k] * c for c in power.coeffs)))
    return out


def _add(a: LinearOp, b: LinearOp) -> LinearOp:
    n = max(len(a.coeffs), len(b.coeffs))
    ca = a.coeffs + (se.Const(0.0),) * (n - len(a.coeffs))
    cb = b.coeffs + (se.Const(0.0),) * (n - len(b.coeffs))
    return LinearOp(tuple(x + y for x, y in zip(ca, cb)))


def flag_grid(case: CaseSpec, n: int = 64, span=(-6.0, 6.0), a_min: float = 0.05,
              resolution: int = 1201) -> np.ndarray:
    """n points on the widest run around the probe window where A is regular.

    A, A' and A'' must be finite and A must stay above ``a_min``. A wide
    grid keeps the flag functions well separated numerically.
    """
    fam = case.family
    derivs = a_derivatives(fam, 2)
    zs = np.linspace(span[0], span[1], resolution)
    ok = np.zeros(resolution, dtype=bool)
    for i, zv in enumerate(zs):
        try:
            vals = [float(se.evaluate(d, zv)) for d in derivs]
        except se.SingularPointError:
            continue
        ok[i] = all(np.isfinite(vals)) and vals[0] > a_min
    window = probe_grid(n)
    lo = hi = int(np.searchsorted(zs, 0.5 * (window[0] + window[-1])))
    if not ok[lo]:
        return window
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < resolution - 1 and ok[hi + 1]:
        hi += 1
    # stay one resolution step inside the run
    a, b = zs[min(lo + 1, hi)], zs[max(hi - 1, lo)]
    if b - a <= window[-1] - window[0]:
        return window
    return np.linspace(a, b, n)


def _sup(cols) -> float:
    return max(float(np.max(np.abs(np.asarray(c, dtype=float)))) for c in cols)


def _vanishes(new, old, dps: int) -> bool:
    # an identically zero level survives only as roundoff at the working precision,
    # which sup-normalization would otherwise blow up into a spurious function
    return _sup(new) <= 10.0 ** (-dps / 2) * _sup(old)


def _gram(cols):
    F = np.array([np.asarray(c, dtype=float) for c in cols]).T
    with np.errstate(all="ignore"):
        s = np.max(np.abs(F), axis=0)
        F = np.where((s > 0) & np.isfinite(s), F / np.where(s > 0, s, 1.0), 0.0)
        G = F.T @ F / F.shape[0]
    if not np.all(np.isfinite(G)):
        return float("nan"), float("nan")
    return float(np.linalg.det(G)), float(np.min(np.linalg.eigvalsh(G)))


@dataclass
class FlagBasis:
    case: CaseSpec
    functions: list
    chain: ParamChain
    grid: np.ndarray
    z_ref: float
    gram_determinant: float
    gram_min_eigenvalue: float
    degenerate: bool = False
    levels: int = 0
    dps: int = FLAG_DPS
    _values: list = field(default_factory=list, repr=False)
    _actions: list = field(default_factory=list, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.functions)

    def _columns(self, zs=None, action: bool = False) -> list:
        if zs is None or np.array_equal(np.asarray(zs, dtype=float), self.grid):
            if len(self._values) == self.dimension:
                return self._actions if action else self._values
            zs = self.grid
        vals, acts = [], []
        for k in range(self.levels):
            v, a = _level_values(self.case, self.chain, k, zs, self.z_ref, self.dps)
            vals += v
            acts += a
        return acts if action else vals

    def matrix(self, zs=None) -> np.ndarray:
        """Values of the basis on a grid, one column per function."""
        return np.array([np.asarray(c, dtype=float) for c in self._columns(zs)]).T

    def expressions(self) -> list:
        """The basis as symbolic WeightedFunctions (large for deep levels)."""
        fam, ch = self.case.family, self.chain
        A = a_derivatives(fam, 0)[0]
        out = []
        for f in self.functions:
            cur = se.Const(1.0) if f.base == "1" else se.z
            for j in range(f.level - 1, -1, -1):
                op = gauged_ops(fam, ch.params[j]).tP2_plus
                rel = _weight(ch.params[f.level], ch.params[j], A)
                cur = se.normalize(_shifted(op, rel).apply(cur))
            out.append(WeightedFunction(cur, f.weight, f.level))
        return out

    def to_dict(self):
        return {"dimension": self.dimension, "levels": self.levels,
                "degenerate": self.degenerate, "gram_determinant": self.gram_determinant,
                "gram_min_eigenvalue": self.gram_min_eigenvalue,
                "grid": [float(self.grid[0]), float(self.grid[-1]), len(self.grid)],
                "functions": [f.to_dict() for f in self.functions],
                "chain": self.chain.to_dict()}


def flag_basis(case: CaseSpec, c0: ParamSet, n: int, grid=None, ch: Optional[ParamChain] = None,
               gram_tol: float = GRAM_TOL, dps: int = FLAG_DPS) -> FlagBasis:
    """Basis of V_2n(c0) built from {1, z} and repeated tP2+ applications.

    Uses n - 1 chain steps. When the chain stops early the flag stops at the
    last level it can support. Functions are sup-normalized on the grid; a
    level that pushes the smallest Gram eigenvalue to ``gram_tol`` or below
    is discarded and the flag is marked degenerate, as is a level whose
    functions are zero to half the working precision. The determinant itself
    is reported but not thresholded, since it shrinks with the dimension.
    Values are computed with ``dps`` significant digits.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    grid = flag_grid(case) if grid is None else np.asarray(grid, dtype=float)
    z_ref = float(grid[len(grid) // 2])
    ch = chain(case, c0, n - 1) if ch is None else ch
    A = a_derivatives(case.family, 0)[0]
    funcs, vals, acts = [], [], []
    det = lam = float("nan")
    levels, degenerate = 0, False
    for k in range(min(n, ch.steps + 1)):
        v, a = _level_values(case, ch, k, grid, z_ref, dps)
        det_new, lam_new = _gram(vals + v)
        if k > 0 and (not np.isfinite(lam_new) or lam_new <= gram_tol
                      or _vanishes(v, vals, dps)):
            degenerate = True
            ch = ParamChain(ch.params, ch.shifts, FLAG_DEGENERATE)
            break
        w = _weight(ch.params[k], c0, A)
        funcs += [FlagFunction(k, "1", w), FlagFunction(k, "z", w)]
        vals += v
        acts += a
        det, lam = det_new, lam_new
        levels += 1
    return FlagBasis(case, funcs, ch, grid, z_ref, det, lam, degenerate, levels, dps, vals, acts)


def _weight(ck: ParamSet, cj: ParamSet, A: se.Expr) -> Optional[se.Expr]:
    """d/dz (W(c_j) - W(c_k)) = (Q(c_k) - Q(c_j)) / (2A), or None when zero."""
    db1, db0 = ck.b1 - cj.b1, ck.b0 - cj.b0
    if db1 == 0.0 and db0 == 0.0:
        return None
    return se.normalize((db1 * se.z + db0) / (2.0 * A))


# ---------------------------------------------------------------- levels

def accumulation_levels(ch: ParamChain, n: int) -> np.ndarray:
    """Route (ii): +-b1(c_2k)/2 - R + sum_{j<k} R2(c_2j), k < n."""
    out, acc = [], 0.0
    for k in range(n):
        c = ch.params[k]
        out += [0.5 * c.b1 - c.R + acc, -0.5 * c.b1 - c.R + acc]
        if k < len(ch.shifts):
            acc += ch.shifts[k]
    return np.sort(np.array(out))


@dataclass
class LadderResult:
    case_id: str
    matrix_levels: np.ndarray
    accumulation_levels: np.ndarray
    closure_residual: float
    flag: FlagBasis
    max_imag: float = 0.0
    notes: list = field(default_factory=list)
    triangular_leak: float = 0.0

    @property
    def deviation(self) -> float:
        if len(self.matrix_levels) != len(self.accumulation_levels):
            return float("inf")
        return float(np.max(np.abs(self.matrix_levels - self.accumulation_levels)))

    @property
    def levels(self) -> np.ndarray:
        return self.accumulation_levels

    def to_dict(self):
        return {"case_id": self.case_id,
                "matrix_levels": [float(v) for v in self.matrix_levels],
                "accumulation_levels": [float(v) for v in self.accumulation_levels],
                "route_deviation": self.deviation, "closure_residual": self.closure_residual,
                "max_imag": self.max_imag, "triangular_leak": self.triangular_leak,
                "notes": list(self.notes),
                "flag": self.flag.to_dict()}


def tH_minus_action(flag: FlagBasis, exact: bool = False):
    """Columns (f_j, tH-(c0) f_j) on the flag grid.

    With ``exact`` the arrays hold mpmath numbers at the flag's precision,
    otherwise floats.
    """
    F = np.array(flag._columns(), dtype=object).T
    G = np.array(flag._columns(action=True), dtype=object).T
    if exact:
        return F, G
    return F.astype(float), G.astype(float)


def _lstsq(F, G):
    if F.dtype != object:
        return np.linalg.lstsq(F, G, rcond=None)[0]
    A = mpmath.matrix(F.tolist())
    cols = [mpmath.qr_solve(A, mpmath.matrix(G[:, j].tolist()))[0] for j in range(G.shape[1])]
    return np.array([[c[i] for c in cols] for i in range(F.shape[1])], dtype=object)


def flag_matrix(F: np.ndarray, G: np.ndarray, levels, dps: int = FLAG_DPS) -> tuple:
    """Matrix of an operator in the flag basis from its values on a grid.

    Column j of ``G`` holds the operator applied to basis function j. Since
    the flag is nested, the image of a level-k function is fitted with the
    functions of levels <= k only, which keeps the fit well conditioned.
    Object arrays are fitted in mpmath at ``dps`` digits. Returns
    (M, closure residual, leak), where ``leak`` is the largest coefficient
    an unrestricted fit puts on higher levels.
    """
    levels = np.asarray(levels)
    with mpmath.workdps(dps):
        scale = np.max(np.abs(F), axis=0)
        Fn, Gn = F / scale, G / scale
        M = np.zeros((F.shape[1], F.shape[1]), dtype=F.dtype)
        for k in np.unique(levels):
            rows = np.flatnonzero(levels <= k)
            cols = np.flatnonzero(levels == k)
            M[np.ix_(rows, cols)] = _lstsq(Fn[:, rows], Gn[:, cols])
        closure = float(np.max(np.abs(Gn - Fn @ M)) / (1 + np.max(np.abs(Gn))))
        full = _lstsq(Fn, Gn)
    above = levels[:, None] > levels[None, :]
    leak = float(np.max(np.abs(full[above]))) if above.any() else 0.0
    return M, closure, leak


def _block_eigenvalues(M: np.ndarray, levels, dps: int = FLAG_DPS,
                       jordan_tol: float = JORDAN_TOL) -> np.ndarray:
    """Eigenvalues of the diagonal blocks.

    A block whose eigenvalues agree to ``jordan_tol`` is treated as one
    defective eigenvalue and reported by its mean: the individual roots of a
    Jordan block scatter like the square root of the data error.
    """
    levels = np.asarray(levels)
    out = []
    for k in np.unique(levels):
        idx = np.flatnonzero(levels == k)
        B = M[np.ix_(idx, idx)]
        if B.dtype == object:
            with mpmath.workdps(dps):
                ev = np.array([complex(e) for e in mpmath.eig(mpmath.matrix(B.tolist()),
                                                              left=False, right=False)])
        else:
            ev = np.linalg.eigvals(B)
        if np.ptp(ev.real) + np.max(np.abs(ev.imag)) <= jordan_tol * max(1.0, np.max(np.abs(ev))):
            ev = np.full(len(ev), np.mean(ev.real), dtype=complex)
        out.append(ev)
    return np.concatenate(out) if out else np.array([])


def solvable_spectrum(case: CaseSpec, c0: ParamSet, n: int, grid=None,
                      flag: Optional[FlagBasis] = None, strict: bool = True) -> LadderResult:
    """Ladder levels by the flag matrix (i) and by accumulation (ii).

    Route (i) fits the matrix of tH-(c0) in the flag basis (block upper
    triangular by nesting) and takes the eigenvalues of its diagonal blocks.
    With ``strict`` a degenerate flag raises FlagDegenerateError.
    """
    flag = flag_basis(case, c0, n, grid) if flag is None else flag
    if flag.degenerate and strict:
        raise FlagDegenerateError(f"flag of case {case.case_id} degenerates at level "
                                  f"{flag.levels}")
    F, G = tH_minus_action(flag, exact=True)
    lv = [f.level for f in flag.functions]
    M, closure, leak = flag_matrix(F, G, lv, flag.dps)
    ev = _block_eigenvalues(M, lv, flag.dps)
    route_i = np.sort(np.real(ev))
    route_ii = accumulation_levels(flag.chain, flag.levels)
    notes = []
    if flag.levels < n:
        notes.append(f"flag stopped at level {flag.levels}: {flag.chain.termination_reason}")
    return LadderResult(case.case_id, route_i, route_ii, closure, flag,
                        float(np.max(np.abs(np.imag(ev)))) if len(ev) else 0.0, notes, leak)


__all__ = ["ParamChain", "chain", "reflective_chain", "FlagBasis", "FlagFunction",
           "WeightedFunction", "flag_basis", "flag_grid", "solvable_spectrum",
           "accumulation_levels", "LadderResult", "FlagDegenerateError", "tH_minus_action",
           "flag_matrix", "REQUESTED", "CONSTRAINT_BROKEN", "FLAG_DEGENERATE", "FLAG_DPS"]
