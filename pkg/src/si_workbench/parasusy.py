"""Second-order parasupersymmetry on a grid.

The graded space is C^3 (x) R^n. With the shift-matrix parafermions the
triple reduces to

    H_P = diag(H-, Hi, H+),
    Q-  = P22+ E12 + P21+ E23,
    Q+  = P22- E21 + P21- E32,

where in x-space P22-+ = +-(d/dx +- W0) and P21-+ = +-(d/dx +- W1). The
first-order factors use centered differences on the Dirichlet grid and the
component Hamiltonians are built from them as products,

    H- = P22+ P22- / 2 + C22,  Hi = P22- P22+ / 2 + C22,  H+ = P21- P21+ / 2 + C21,

so every identity that needs the second factorization of Hi is only met to
O(dx^2). With a nonzero R the algebra holds with H_P + R in place of H_P.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import svds

from . import symexpr as se
from .model import CaseSpec, ParamSet, a_derivatives
from .potentials import potential_set, superpotentials
from .changevar import ZMap, x_potential


@dataclass(frozen=True)
class ParafermionRep:
    psi_minus: np.ndarray
    psi_plus: np.ndarray

    def relations(self) -> dict:
        m, p = self.psi_minus, self.psi_plus
        m2, p2 = m @ m, p @ p
        lhs = m @ p + p @ m + m2 @ p2 + p2 @ m2
        return {"square_nonzero": bool(np.any(m2) and np.any(p2)),
                "cube_zero": bool(not np.any(m2 @ m) and not np.any(p2 @ p)),
                "sum_rule": bool(np.array_equal(lhs, 2 * np.eye(3, dtype=int)))}


def parafermion_matrices() -> ParafermionRep:
    """psi- with ones on the first superdiagonal and psi+ its transpose."""
    m = np.diag([1, 1], 1).astype(int)
    return ParafermionRep(m, m.T.copy())


def unit(i: int, j: int) -> np.ndarray:
    e = np.zeros((3, 3), dtype=int)
    e[i - 1, j - 1] = 1
    return e


class BlockOperator:
    """3x3 grid of n x n sparse blocks (None is a zero block)."""

    def __init__(self, blocks, n: int):
        self.n = n
        self.blocks = [[blocks[i][j] for j in range(3)] for i in range(3)]
        for row in self.blocks:
            for b in row:
                if b is not None and b.shape != (n, n):
                    raise ValueError(f"block of shape {b.shape}, expected {(n, n)}")

    @classmethod
    def from_pattern(cls, terms, n: int) -> "BlockOperator":
        """sum of op (x) E for (op, E) pairs with E a 3x3 integer matrix."""
        blocks = [[None] * 3 for _ in range(3)]
        for op, e in terms:
            for i, j in zip(*np.nonzero(e)):
                piece = e[i, j] * op
                blocks[i][j] = piece if blocks[i][j] is None else blocks[i][j] + piece
        return cls(blocks, n)

    def __matmul__(self, other: "BlockOperator") -> "BlockOperator":
        out = [[None] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                acc = None
                for k in range(3):
                    a, b = self.blocks[i][k], other.blocks[k][j]
                    if a is None or b is None:
                        continue
                    acc = a @ b if acc is None else acc + a @ b
                out[i][j] = acc
        return BlockOperator(out, self.n)

    def _combine(self, other, sign):
        out = [[None] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                a, b = self.blocks[i][j], other.blocks[i][j]
                if b is not None and sign < 0:
                    b = -b
                out[i][j] = a if b is None else (b if a is None else a + b)
        return BlockOperator(out, self.n)

    def __add__(self, other):
        return self._combine(other, 1)

    def __sub__(self, other):
        return self._combine(other, -1)

    def __rmul__(self, k: float):
        return BlockOperator([[None if b is None else k * b for b in row]
                              for row in self.blocks], self.n)

    def nonzero_pattern(self) -> np.ndarray:
        return np.array([[b is not None and b.count_nonzero() > 0 for b in row]
                         for row in self.blocks])

    def is_zero(self) -> bool:
        return not self.nonzero_pattern().any()

    def block(self, i: int, j: int):
        b = self.blocks[i - 1][j - 1]
        return sps.csr_matrix((self.n, self.n)) if b is None else b

    def full(self) -> sps.csr_matrix:
        return sps.bmat([[self.block(i, j) for j in (1, 2, 3)] for i in (1, 2, 3)],
                        format="csr")


def identity_block(n: int) -> BlockOperator:
    eye = sps.identity(n, format="csr")
    return BlockOperator([[eye if i == j else None for j in range(3)] for i in range(3)], n)


@dataclass
class ParaSystem:
    H: BlockOperator
    Q_minus: BlockOperator
    Q_plus: BlockOperator
    params: ParamSet
    interval: tuple
    n: int
    dx: float
    xs: np.ndarray
    factors: dict = field(default_factory=dict)
    reference_hi: Optional[sps.csr_matrix] = None
    C21: float = 0.0
    C22: float = 0.0
    intermediate: str = "i1"


def _centered(n: int, dx: float) -> sps.csr_matrix:
    off = np.full(n - 1, 0.5 / dx)
    return sps.diags([-off, off], [-1, 1], format="csr")


def build_para_system(case: CaseSpec, c0: ParamSet, zmap: ZMap, interval=None, n: int = 1024,
                      intermediate: str = "i1") -> ParaSystem:
    """Assemble (H_P, Q_P-, Q_P+) on n interior points.

    ``intermediate="i2"`` uses the hatted factorization, which needs b1 != 0
    and an interval whose z-range avoids z = -b0/b1.
    """
    if intermediate not in ("i1", "i2"):
        raise ValueError("intermediate must be 'i1' or 'i2'")
    if intermediate == "i2" and c0.b1 == 0.0:
        raise ValueError("the second intermediate Hamiltonian needs b1 != 0")
    interval = tuple(zmap.interval if interval is None else interval)
    lo, hi = map(float, interval)
    dx = (hi - lo) / (n + 1)
    xs = lo + dx * np.arange(1, n + 1)
    fam = case.family
    W0, W1 = superpotentials(fam, c0)
    b1, R = c0.b1, c0.R
    C22, C21 = (b1 - 2 * R) / 2, (-b1 - 2 * R) / 2
    if intermediate == "i2":
        zp = se.sqrt(2.0 * a_derivatives(fam, 0)[0])
        extra = zp / (se.z + c0.b0 / b1)
        W0, W1 = W0 - extra, W1 + extra
        C22, C21 = C21, C22
    zs = zmap.z(xs)
    if intermediate == "i2" and np.ptp(np.sign(zs + c0.b0 / b1)) > 0:
        raise ValueError("the hatted superpotential has a pole at z = -b0/b1 inside the interval")
    w0, w1 = se.evaluate(W0, zs), se.evaluate(W1, zs)
    if not (np.all(np.isfinite(w0)) and np.all(np.isfinite(w1))):
        raise ValueError("superpotential not finite on the grid")
    D = _centered(n, dx)
    eye = sps.identity(n, format="csr")
    P22m, P22p = D + sps.diags(w0), -(D - sps.diags(w0))
    P21m, P21p = D + sps.diags(w1), -(D - sps.diags(w1))
    Hm = 0.5 * (P22p @ P22m) + C22 * eye
    Hi = 0.5 * (P22m @ P22p) + C22 * eye
    Hp = 0.5 * (P21m @ P21p) + C21 * eye
    pf = parafermion_matrices()
    m, p = pf.psi_minus, pf.psi_plus
    m2, p2 = m @ m, p @ p
    H = BlockOperator.from_pattern([(Hm, m2 @ p2), (Hi, p @ m - p2 @ m2), (Hp, p2 @ m2)], n)
    Qm = BlockOperator.from_pattern([(P22p, m2 @ p), (P21p, p @ m2)], n)
    Qp = BlockOperator.from_pattern([(P22m, m @ p2), (P21m, p2 @ m)], n)
    # -D^2/2 + Vi built from the closed-form potential, for the consistency check
    ps = potential_set(fam, c0)
    vi = ps.v_i2 if intermediate == "i2" else ps.v_i1
    ref = None
    if vi is not None:
        ref = -0.5 * (D @ D) + sps.diags(x_potential(vi, zmap)(xs))
    factors = {"P22-": P22m, "P22+": P22p, "P21-": P21m, "P21+": P21p}
    return ParaSystem(H, Qm, Qp, c0, (lo, hi), n, dx, xs, factors, ref, C21, C22, intermediate)


def _interior(n: int, margin: int) -> sps.csr_matrix:
    keep = np.concatenate([np.arange(b * n + margin, (b + 1) * n - margin) for b in range(3)])
    return sps.csr_matrix((np.ones(len(keep)), (np.arange(len(keep)), keep)),
                          shape=(len(keep), 3 * n))


def _norm2(m) -> float:
    m = sps.csr_matrix(m)
    m.eliminate_zeros()
    if m.nnz == 0:
        return 0.0
    v0 = np.linspace(1.0, 2.0, min(m.shape))
    s = svds(m, k=1, v0=v0, tol=1e-6, return_singular_vectors=False, maxiter=20000)
    return float(s[0])


def _smooth_probes(xs, k: int = 6) -> np.ndarray:
    lo, hi = xs[0], xs[-1]
    t = (2 * xs - (lo + hi)) / (hi - lo)
    bump = np.exp(-1.0 / np.clip(1 - t ** 2, 1e-300, None) + 1.0)
    return np.array([bump * t ** j for j in range(k)]).T


@dataclass
class ParaReport:
    n: int
    residuals: dict
    smooth_residuals: dict
    exact: dict
    margin: int

    def to_dict(self):
        return {"n": self.n, "margin": self.margin, "residuals": self.residuals,
                "smooth_residuals": self.smooth_residuals, "exact": self.exact}

    def max_residual(self) -> float:
        return max(self.residuals.values())


def _stack3(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v, v, v])


def verify_para_algebra(system: ParaSystem, margin: int = 8, smooth: bool = True) -> ParaReport:
    """Relative residuals of the paraSUSY relations.

    Each entry is ||S (lhs - rhs)||_2 / max(||S t||_2) over the terms t of the
    identity, with S keeping the interior rows of every block (``margin``
    rows dropped at each wall). ``smooth_residuals`` repeats the comparison
    on smooth compactly supported probe vectors instead of the full space.
    """
    n = system.n
    Hs = system.H + system.params.R * identity_block(n)
    Qm, Qp = system.Q_minus, system.Q_plus
    b1 = system.params.b1
    S = _interior(n, margin)
    one = identity_block(n)
    ids = {
        "[Q-,H]": ([Qm @ Hs, -1.0 * (Hs @ Qm)], None),
        "[Q+,H]": ([Qp @ Hs, -1.0 * (Hs @ Qp)], None),
        "cubic-": ([Qm @ Qm @ Qp, Qm @ Qp @ Qm, Qp @ Qm @ Qm], 4.0 * (Qm @ Hs)),
        "cubic+": ([Qp @ Qp @ Qm, Qp @ Qm @ Qp, Qm @ Qp @ Qp], 4.0 * (Qp @ Hs)),
        "superalgebra-": ([Qm @ Qm @ Qp @ Qp, Qm @ Qp @ Qp @ Qm, Qp @ Qp @ Qm @ Qm],
                          4.0 * (Hs @ Hs) - b1 ** 2 * one),
        "superalgebra+": ([Qm @ Qm @ Qp @ Qp, Qp @ Qm @ Qm @ Qp, Qp @ Qp @ Qm @ Qm],
                          4.0 * (Hs @ Hs) - b1 ** 2 * one),
    }
    probes = _smooth_probes(system.xs)
    res, sm = {}, {}
    for name, (terms, rhs) in ids.items():
        mats = [t.full() for t in terms]
        lhs = sum(mats[1:], mats[0])
        diff = lhs - rhs.full() if rhs is not None else lhs
        scale_terms = mats + ([rhs.full()] if rhs is not None else [])
        scale = max(_norm2(S @ t) for t in scale_terms)
        res[name] = _norm2(S @ diff) / scale if scale > 0 else 0.0
        if smooth:
            worst = 0.0
            for v in probes.T:
                u = _stack3(v)
                d = S @ (diff @ u)
                sc = max(np.max(np.abs(S @ (t @ u))) for t in scale_terms)
                worst = max(worst, float(np.max(np.abs(d)) / sc))
            sm[name] = worst
    # middle grade of Q+ Q- against the stencil of the intermediate potential
    if system.reference_hi is not None:
        mid = (Qp @ Qm).block(2, 2)
        ref = 2.0 * (system.reference_hi - system.C22 * sps.identity(n))
        Si = _interior(n, margin)[: n - 2 * margin, :n]
        res["middle-grade"] = _norm2(Si @ (mid - ref)) / max(_norm2(Si @ mid), _norm2(Si @ ref))
        if smooth:
            worst = 0.0
            for v in probes.T:
                d = Si @ ((mid - ref) @ v)
                worst = max(worst, float(np.max(np.abs(d)) / np.max(np.abs(Si @ (ref @ v)))))
            sm["middle-grade"] = worst
    exact = {"Q-^3": (Qm @ Qm @ Qm).is_zero(), "Q+^3": (Qp @ Qp @ Qp).is_zero(),
             "Q-^2 nonzero": not (Qm @ Qm).is_zero(), "Q+^2 nonzero": not (Qp @ Qp).is_zero(),
             "Q- blocks": int(Qm.nonzero_pattern().sum()),
             "Q+ blocks": int(Qp.nonzero_pattern().sum())}
    return ParaReport(n, res, sm, exact, margin)


def convergence(case: CaseSpec, c0: ParamSet, zmap: ZMap, interval=None,
                ns=(512, 1024, 2048), **kw) -> list:
    """Reports at each grid size, for refinement studies."""
    return [verify_para_algebra(build_para_system(case, c0, zmap, interval, n), **kw)
            for n in ns]


__all__ = ["ParafermionRep", "parafermion_matrices", "BlockOperator", "ParaSystem",
           "build_para_system", "verify_para_algebra", "ParaReport", "convergence", "unit"]
