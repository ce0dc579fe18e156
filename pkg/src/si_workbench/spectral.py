"""Finite-difference eigenvalues of H = -1/2 d^2/dx^2 + V(x) with Dirichlet walls.

The interval [lo, hi] carries n interior points, so dx = (hi - lo) / (n + 1)
and the wall values psi(lo) = psi(hi) = 0 are implicit. Convergence is
estimated by Richardson between n and 2n interior points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .model import CaseSpec, ParamSet, reflective_step
from .potentials import potential_set
from .changevar import ZMap, x_potential


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiscretizedHamiltonian:
    interval: tuple
    n: int
    dx: float
    diagonal: np.ndarray
    offdiagonal: float
    potential: Optional[Callable] = None

    @property
    def xs(self) -> np.ndarray:
        lo = self.interval[0]
        return lo + self.dx * np.arange(1, self.n + 1)

    def matrix(self):
        """Dense matrix; only meant for small n."""
        off = np.full(self.n - 1, self.offdiagonal)
        return np.diag(self.diagonal) + np.diag(off, 1) + np.diag(off, -1)

    def refined(self) -> "DiscretizedHamiltonian":
        if self.potential is None:
            raise SpectralError("cannot refine without the potential callable")
        return discretize(self.potential, self.interval, 2 * self.n)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    convergence_estimate: np.ndarray
    extrapolated: Optional[np.ndarray] = None
    n: int = 0
    interval: tuple = ()

    def __len__(self):
        return len(self.eigenvalues)

    def to_dict(self):
        d = {"n": self.n, "interval": list(self.interval),
             "eigenvalues": [float(v) for v in self.eigenvalues],
             "convergence_estimate": [float(v) for v in self.convergence_estimate]}
        if self.extrapolated is not None:
            d["extrapolated"] = [float(v) for v in self.extrapolated]
        return d


def discretize(v: Callable, interval, n: int) -> DiscretizedHamiltonian:
    """Three-point stencil for -1/2 d^2/dx^2 plus the diagonal V."""
    if n < 64:
        raise ValueError("need at least 64 grid points")
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise ValueError(f"empty interval {interval}")
    dx = (hi - lo) / (n + 1)
    xs = lo + dx * np.arange(1, n + 1)
    with np.errstate(all="ignore"):
        vals = np.asarray(v(xs), dtype=float) * np.ones_like(xs)
    if not np.all(np.isfinite(vals)):
        bad = xs[~np.isfinite(vals)][0]
        raise SpectralError(f"non-finite potential at x = {bad:.6g}")
    return DiscretizedHamiltonian((lo, hi), n, dx, 1.0 / dx ** 2 + vals, -0.5 / dx ** 2, v)


def _lowest(h: DiscretizedHamiltonian, k: int) -> np.ndarray:
    off = np.full(h.n - 1, h.offdiagonal)
    try:
        return eigh_tridiagonal(h.diagonal, off, eigvals_only=True, select="i",
                                select_range=(0, k - 1))
    except np.linalg.LinAlgError as exc:
        raise SpectralError(str(exc)) from exc


def eigenvalues(h: DiscretizedHamiltonian, k: int, richardson: bool = True) -> Spectrum:
    """k lowest eigenvalues, with |E_2n - E_n| / 3 as the error estimate."""
    if not 0 < k < h.n / 4:
        raise ValueError(f"k must lie in (0, n/4); got k={k}, n={h.n}")
    e = _lowest(h, k)
    if not richardson or h.potential is None:
        return Spectrum(e, np.full(k, np.inf), None, h.n, h.interval)
    e2 = _lowest(h.refined(), k)
    est = np.abs(e2 - e) / 3.0
    return Spectrum(e, est, e2 + (e2 - e) / 3.0, h.n, h.interval)


def solve(v: Callable, interval, n: int = 2048, k: int = 8) -> Spectrum:
    return eigenvalues(discretize(v, interval, n), k)


def auto_interval(v: Callable, interval, n: int = 1024, k: int = 6, grow: float = 1.3,
                  tol: float = 1e-6, max_rounds: int = 8) -> tuple:
    """Widen the interval about its centre until the k lowest levels settle.

    Expansion stops early when the potential is not finite on the wider
    interval; the last good interval is returned together with whether the
    levels settled.
    """
    lo, hi = map(float, interval)
    prev = _lowest(discretize(v, (lo, hi), n), k)
    for _ in range(max_rounds):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * grow
        cand = (mid - half, mid + half)
        # keep dx fixed so only the truncation changes
        m = int(round(n * grow))
        try:
            h = discretize(v, cand, m)
        except SpectralError:
            return (lo, hi), False
        cur = _lowest(h, k)
        lo, hi, n = cand[0], cand[1], m
        if np.max(np.abs(cur - prev)) < tol:
            return (lo, hi), True
        prev = cur
    return (lo, hi), False


@dataclass
class LevelMatch:
    reference: list
    candidates: list
    pairs: list = field(default_factory=list)
    unmatched_reference: list = field(default_factory=list)
    unmatched_candidates: list = field(default_factory=list)
    max_deviation: float = 0.0

    @property
    def unmatched(self) -> int:
        return len(self.unmatched_reference) + len(self.unmatched_candidates)

    def to_dict(self):
        return {"reference": self.reference, "candidates": self.candidates,
                "pairs": self.pairs, "unmatched_reference": self.unmatched_reference,
                "unmatched_candidates": self.unmatched_candidates,
                "max_deviation": self.max_deviation}


def match_levels(ref, cand, tols) -> LevelMatch:
    """Greedy nearest matching of two ascending level lists.

    ``tols`` gives a per-reference-level tolerance. Levels left over on
    either side are reported as unmatched.
    """
    ref = [float(v) for v in ref]
    cand = [float(v) for v in cand]
    free = list(range(len(cand)))
    out = LevelMatch(ref, cand)
    for i, e in enumerate(ref):
        if not free:
            out.unmatched_reference.append(e)
            continue
        j = min(free, key=lambda t: abs(cand[t] - e))
        d = abs(cand[j] - e)
        if d <= tols[i]:
            free.remove(j)
            out.pairs.append((e, cand[j]))
            out.max_deviation = max(out.max_deviation, d)
        else:
            out.unmatched_reference.append(e)
    out.unmatched_candidates = [cand[j] for j in free]
    return out


@dataclass
class IsospectralReport:
    case_id: str
    params: dict
    params2: dict
    R2: float
    interval: tuple
    n: int
    cap: float
    plus: Spectrum
    minus_shifted: Spectrum
    match: LevelMatch
    tolerance: float
    allowance: int = 2
    partners: Optional[LevelMatch] = None

    @property
    def passed(self) -> bool:
        return self.match.unmatched <= self.allowance and len(self.match.pairs) > 0

    def to_dict(self):
        d = {"case_id": self.case_id, "params": self.params, "params2": self.params2,
             "R2": self.R2, "interval": list(self.interval), "n": self.n,
             "cap": self.cap if np.isfinite(self.cap) else None,
             "tolerance": self.tolerance, "allowance": self.allowance,
             "passed": self.passed, "plus": self.plus.to_dict(),
             "minus_shifted": self.minus_shifted.to_dict(), "match": self.match.to_dict()}
        if self.partners is not None:
            d["partners"] = self.partners.to_dict()
        return d


def _below(spec: Spectrum, cap: float):
    keep = spec.eigenvalues < cap
    return spec.eigenvalues[keep], spec.convergence_estimate[keep]


def _edge_cap(vs, interval, margin, inset=0.01):
    # only walls the potential rises towards confine box states
    lo, hi = interval
    d = inset * (hi - lo)
    edges = np.array([lo, hi], dtype=float)
    inner = np.array([lo + d, hi - d])
    walls = [float(w) for v in vs for w, i in zip(v(edges), v(inner)) if w >= i]
    return min(walls) - margin if walls else float("inf")


def isospectral_check(case: CaseSpec, c0: ParamSet, zmap: ZMap, interval=None, k: int = 8,
                      n: int = 2048, tol: float = 1e-3, cap: Optional[float] = None,
                      margin: float = 0.5, partners: bool = True) -> IsospectralReport:
    """Levels of H+(c0) against those of H-(c2) + R2.

    Only levels below ``cap`` take part; by default the cap is the smallest
    wall value of the potentials minus ``margin``, which keeps box states of
    the continuum out of the comparison. Walls towards which a potential
    falls are the boundary condition itself and do not lower the cap. With
    ``partners`` the 2-fold SUSY partners H-(c0) and H+(c0) are compared as
    well; there up to two levels of H-(c0) are expected to be missing from
    H+(c0).
    """
    interval = tuple(zmap.interval if interval is None else interval)
    c2, R2 = case.param_map(c0), case.shift(c0)
    p0, p2 = potential_set(case.family, c0), potential_set(case.family, c2)
    v_plus = x_potential(p0.v_plus, zmap)
    v_minus2 = x_potential(p2.v_minus, zmap)
    shifted = lambda xs: v_minus2(xs) + R2  # noqa: E731
    if cap is None:
        cap = _edge_cap([v_plus, shifted], interval, margin)
    sp = eigenvalues(discretize(v_plus, interval, n), k)
    sm = eigenvalues(discretize(shifted, interval, n), k)
    ep, cp = _below(sp, cap)
    em, _ = _below(sm, cap)
    m = match_levels(ep, em, [max(tol, 10 * c) for c in cp])
    pm = None
    if partners:
        v_minus0 = x_potential(p0.v_minus, zmap)
        s0 = eigenvalues(discretize(v_minus0, interval, n), k)
        e0, c0s = _below(s0, cap)
        pm = match_levels(e0, ep, [max(tol, 10 * c) for c in c0s])
    return IsospectralReport(case.case_id, c0.to_dict(), c2.to_dict(), float(R2), interval, n,
                             float(cap), sp, sm, m, tol, partners=pm)


def reflective_check(case: CaseSpec, c0: ParamSet, zmap: ZMap, interval=None, k: int = 6,
                     n: int = 1024) -> float:
    """max |E_j(H+(b)) - E_j(H-(-b))| over the k lowest levels."""
    interval = tuple(zmap.interval if interval is None else interval)
    cr, _ = reflective_step(c0)
    vp = x_potential(potential_set(case.family, c0).v_plus, zmap)
    vm = x_potential(potential_set(case.family, cr).v_minus, zmap)
    a = _lowest(discretize(vp, interval, n), k)
    b = _lowest(discretize(vm, interval, n), k)
    return float(np.max(np.abs(a - b)))


__all__ = ["DiscretizedHamiltonian", "Spectrum", "SpectralError", "discretize", "eigenvalues",
           "solve", "auto_interval", "match_levels", "LevelMatch", "isospectral_check",
           "IsospectralReport", "reflective_check"]
