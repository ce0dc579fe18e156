"""Small exact-differentiation expression engine in one real variable.

Nodes are immutable dataclasses. Trees built through the operator overloads
or the ``make_*`` constructors come out normalized (flattened sums and
products, constants folded). Raw node constructors are left untouched so that
unnormalized trees can still be written down and passed to :func:`normalize`.

Text form (prefix notation)::

    expr   := number | name | "(" op expr* ")"
    op     := "+" | "*" | "/" | "^" | "logabs" | "exp"

``(^ e p)`` takes a literal real exponent ``p``; ``(/ n d)`` takes exactly two
operands; ``logabs`` and ``exp`` take one. Any bare name is the variable.
Numbers are written with ``repr(float)`` so the text form is deterministic.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "LogAbs", "Exp", "Div",
    "SingularPointError", "const", "var", "z", "x", "make_add", "make_mul",
    "make_pow", "make_div", "make_exp", "make_logabs", "sqrt", "exp", "logabs",
    "diff", "evaluate", "eval", "substitute", "normalize", "to_text", "parse", "as_expr",
    "count_nodes", "Series", "taylor",
]


class SingularPointError(ArithmeticError):
    """Raised when evaluation hits a division by zero, log(0) or bad power."""

    def __init__(self, node: "Expr", reason: str, where=None):
        self.node = node
        self.reason = reason
        self.where = where
        text = to_text(node)
        if len(text) > 120:
            text = text[:117] + "..."
        msg = f"{reason} in node {text}"
        if where is not None:
            msg += f" at z={where!r}"
        super().__init__(msg)


class Expr:
    """Base class for expression nodes."""

    __slots__ = ()

    # arithmetic sugar; every overload goes through the normalizing builders
    def __add__(self, other):
        return make_add([self, as_expr(other)])

    def __radd__(self, other):
        return make_add([as_expr(other), self])

    def __sub__(self, other):
        return make_add([self, make_mul([Const(-1.0), as_expr(other)])])

    def __rsub__(self, other):
        return make_add([as_expr(other), make_mul([Const(-1.0), self])])

    def __mul__(self, other):
        return make_mul([self, as_expr(other)])

    def __rmul__(self, other):
        return make_mul([as_expr(other), self])

    def __truediv__(self, other):
        return make_div(self, as_expr(other))

    def __rtruediv__(self, other):
        return make_div(as_expr(other), self)

    def __neg__(self):
        return make_mul([Const(-1.0), self])

    def __pow__(self, p):
        if isinstance(p, Expr):
            if not isinstance(p, Const):
                raise TypeError("exponents must be real constants")
            p = p.value
        return make_pow(self, float(p))

    def __call__(self, z):
        return evaluate(self, z)

    def diff(self) -> "Expr":
        return diff(self)

    def eval(self, z):
        return evaluate(self, z)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class Var(Expr):
    name: str = "z"

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, repr=False)
class Add(Expr):
    terms: tuple

    def __repr__(self):
        return f"Add({list(self.terms)!r})"


@dataclass(frozen=True, repr=False)
class Mul(Expr):
    factors: tuple

    def __repr__(self):
        return f"Mul({list(self.factors)!r})"


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: float

    def __repr__(self):
        return f"Pow({self.base!r}, {self.exponent!r})"


@dataclass(frozen=True, repr=False)
class LogAbs(Expr):
    arg: Expr

    def __repr__(self):
        return f"LogAbs({self.arg!r})"


@dataclass(frozen=True, repr=False)
class Exp(Expr):
    arg: Expr

    def __repr__(self):
        return f"Exp({self.arg!r})"


@dataclass(frozen=True, repr=False)
class Div(Expr):
    num: Expr
    den: Expr

    def __repr__(self):
        return f"Div({self.num!r}, {self.den!r})"


z = Var("z")
x = Var("x")


def const(v) -> Const:
    return Const(float(v))


def var(name: str = "z") -> Var:
    return Var(name)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def _is_int(p: float) -> bool:
    return float(p).is_integer()


def _pow_ok(b: float, p: float) -> bool:
    if b < 0 and not _is_int(p):
        return False
    if b == 0 and p < 0:
        return False
    return True


# ---------------------------------------------------------------- builders

def make_add(terms: Iterable[Expr]) -> Expr:
    flat = []
    c = 0.0
    for t in terms:
        t = as_expr(t)
        parts = t.terms if isinstance(t, Add) else (t,)
        for p in parts:
            if isinstance(p, Const):
                c += p.value
            else:
                flat.append(p)
    if not flat:
        return Const(c)
    if c != 0.0:
        flat.insert(0, Const(c))
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def make_mul(factors: Iterable[Expr]) -> Expr:
    flat = []
    c = 1.0
    for f in factors:
        f = as_expr(f)
        parts = f.factors if isinstance(f, Mul) else (f,)
        for p in parts:
            if isinstance(p, Const):
                c *= p.value
            else:
                flat.append(p)
    if c == 0.0 or not flat:
        return Const(c)
    if c != 1.0:
        flat.insert(0, Const(c))
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def make_pow(base: Expr, p: float) -> Expr:
    base = as_expr(base)
    p = float(p)
    if p == 0.0:
        return Const(1.0)
    if p == 1.0:
        return base
    if isinstance(base, Const) and _pow_ok(base.value, p):
        return Const(base.value ** p)
    return Pow(base, p)


def make_div(num: Expr, den: Expr) -> Expr:
    num, den = as_expr(num), as_expr(den)
    if isinstance(den, Const) and den.value != 0.0:
        return make_mul([Const(1.0 / den.value), num])
    if isinstance(num, Const) and num.value == 0.0:
        return Const(0.0)
    return Div(num, den)


def make_exp(arg: Expr) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return Const(math.exp(arg.value))
    return Exp(arg)


def make_logabs(arg: Expr) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const) and arg.value != 0.0:
        return Const(math.log(abs(arg.value)))
    return LogAbs(arg)


exp = make_exp
logabs = make_logabs


def sqrt(e) -> Expr:
    return make_pow(as_expr(e), 0.5)


def _rebuild(e: Expr, leaf: Callable[[Expr], Expr]) -> Expr:
    # post-order rebuild through the builders; the memo keeps the source
    # node alive next to its image so ids cannot be recycled mid-walk
    memo: dict = {}

    def go(n):
        hit = memo.get(id(n))
        if hit is not None:
            return hit[0]
        if isinstance(n, (Const, Var)):
            out = leaf(n)
        elif isinstance(n, Add):
            out = make_add([go(t) for t in n.terms])
        elif isinstance(n, Mul):
            out = make_mul([go(f) for f in n.factors])
        elif isinstance(n, Pow):
            out = make_pow(go(n.base), n.exponent)
        elif isinstance(n, Div):
            out = make_div(go(n.num), go(n.den))
        elif isinstance(n, Exp):
            out = make_exp(go(n.arg))
        elif isinstance(n, LogAbs):
            out = make_logabs(go(n.arg))
        else:
            raise TypeError(f"unknown node {n!r}")
        memo[id(n)] = (out, n)
        return out

    return go(e)


def normalize(e: Expr) -> Expr:
    """Flatten nested sums/products and fold constants, bottom-up."""
    return _rebuild(e, lambda n: n)


def substitute(e: Expr, inner: Expr) -> Expr:
    """Replace the variable of ``e`` by ``inner``."""
    inner = as_expr(inner)
    return _rebuild(e, lambda n: inner if isinstance(n, Var) else n)


def diff(e: Expr) -> Expr:
    """Exact derivative with respect to the variable."""
    memo: dict = {}

    def d(n):
        hit = memo.get(id(n))
        if hit is not None:
            return hit[0]
        if isinstance(n, Const):
            out = Const(0.0)
        elif isinstance(n, Var):
            out = Const(1.0)
        elif isinstance(n, Add):
            out = make_add([d(t) for t in n.terms])
        elif isinstance(n, Mul):
            fs = n.factors
            terms = []
            for i, f in enumerate(fs):
                df = d(f)
                if isinstance(df, Const) and df.value == 0.0:
                    continue
                terms.append(make_mul(fs[:i] + (df,) + fs[i + 1:]))
            out = make_add(terms)
        elif isinstance(n, Pow):
            p = n.exponent
            out = make_mul([Const(p), make_pow(n.base, p - 1.0), d(n.base)])
        elif isinstance(n, Div):
            dn, dd = d(n.num), d(n.den)
            out = make_add([
                make_div(dn, n.den),
                make_mul([Const(-1.0), make_div(make_mul([n.num, dd]),
                                                make_pow(n.den, 2.0))]),
            ])
        elif isinstance(n, Exp):
            out = make_mul([n, d(n.arg)])
        elif isinstance(n, LogAbs):
            out = make_div(d(n.arg), n.arg)
        else:
            raise TypeError(f"unknown node {n!r}")
        memo[id(n)] = (out, n)
        return out

    return d(e)


def _first_bad(mask, zs):
    if np.ndim(zs) == 0:
        return float(zs)
    idx = np.flatnonzero(np.broadcast_to(mask, np.shape(zs)))
    return float(np.asarray(zs).ravel()[idx[0]])


def _elementary(dtype):
    if dtype != np.dtype(object):
        return np.exp, np.log
    import mpmath
    return np.frompyfunc(mpmath.exp, 1, 1), np.frompyfunc(mpmath.log, 1, 1)


def evaluate(e: Expr, zv, dtype=float):
    """Evaluate ``e`` at a scalar or an array of points.

    ``dtype`` selects the working precision, e.g. ``np.longdouble`` for
    large trees with heavy cancellation, or ``object`` for arrays of mpmath
    numbers. Raises :class:`SingularPointError` naming the first offending
    node.
    """
    scalar = np.ndim(zv) == 0
    zs = np.asarray(zv, dtype=dtype)
    exp, log = _elementary(zs.dtype)
    memo: dict = {}

    def ev(n):
        hit = memo.get(id(n))
        if hit is not None:
            return hit[0]
        if isinstance(n, Const):
            out = zs.dtype.type(n.value)
        elif isinstance(n, Var):
            out = zs
        elif isinstance(n, Add):
            out = ev(n.terms[0])
            for t in n.terms[1:]:
                out = out + ev(t)
        elif isinstance(n, Mul):
            out = ev(n.factors[0])
            for f in n.factors[1:]:
                out = out * ev(f)
        elif isinstance(n, Pow):
            b = ev(n.base)
            p = n.exponent
            if not _is_int(p):
                bad = np.asarray(b) < 0
                if np.any(bad):
                    raise SingularPointError(n, "negative base to non-integer power",
                                             _first_bad(bad, zs))
            if p < 0:
                bad = np.asarray(b) == 0
                if np.any(bad):
                    raise SingularPointError(n, "zero base to negative power",
                                             _first_bad(bad, zs))
            if _is_int(p) and abs(p) <= 8:
                k = int(p)
                out = b
                if k == 0:
                    out = np.ones_like(np.asarray(b, dtype=zs.dtype))
                for _ in range(abs(k) - 1):
                    out = out * b
                if k < 0:
                    out = 1.0 / out
            else:
                out = np.power(b, p)
        elif isinstance(n, Div):
            num, den = ev(n.num), ev(n.den)
            bad = np.asarray(den) == 0
            if np.any(bad):
                raise SingularPointError(n, "division by zero", _first_bad(bad, zs))
            out = num / den
        elif isinstance(n, Exp):
            out = exp(ev(n.arg))
        elif isinstance(n, LogAbs):
            a = ev(n.arg)
            bad = np.asarray(a) == 0
            if np.any(bad):
                raise SingularPointError(n, "log of zero", _first_bad(bad, zs))
            out = log(np.abs(a))
        else:
            raise TypeError(f"unknown node {n!r}")
        memo[id(n)] = (out, n)
        return out

    val = ev(e)
    if scalar:
        return float(val) if dtype is float else zs.dtype.type(val)
    return np.broadcast_to(np.asarray(val, dtype=zs.dtype), zs.shape).copy()


# the short name used by callers that think of it as eval(e, z)
eval = evaluate  # noqa: A001


def count_nodes(e: Expr) -> int:
    """Number of nodes in the tree (shared subtrees counted each time)."""
    if isinstance(e, (Const, Var)):
        return 1
    if isinstance(e, Add):
        return 1 + sum(count_nodes(t) for t in e.terms)
    if isinstance(e, Mul):
        return 1 + sum(count_nodes(f) for f in e.factors)
    if isinstance(e, Pow):
        return 1 + count_nodes(e.base)
    if isinstance(e, Div):
        return 1 + count_nodes(e.num) + count_nodes(e.den)
    return 1 + count_nodes(e.arg)


# ---------------------------------------------------------------- series

class Series:
    """Truncated Taylor expansions at a set of points.

    Row i of ``c`` holds f^(i)(z) / i! at every point. Works with float,
    long double or object (mpmath) arrays alike.
    """

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = c

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    @classmethod
    def variable(cls, zs, order: int, b1=1.0, b0=0.0) -> "Series":
        """The series of b1 z + b0."""
        c = np.zeros((order + 1, len(zs)), dtype=np.asarray(zs).dtype)
        c[0] = zs * b1 + b0
        if order >= 1:
            c[1] = zs[0] * 0 + b1
        return cls(c)

    def __add__(self, o):
        if isinstance(o, Series):
            m = min(self.order, o.order)
            return Series(self.c[:m + 1] + o.c[:m + 1])
        c = self.c.copy()
        c[0] = c[0] + o
        return Series(c)

    __radd__ = __add__

    def __neg__(self):
        return Series(-self.c)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Series):
            return Series(self.c * o)
        m = min(self.order, o.order)
        out = np.empty((m + 1,) + self.c.shape[1:], dtype=self.c.dtype)
        for i in range(m + 1):
            acc = self.c[0] * o.c[i]
            for j in range(1, i + 1):
                acc = acc + self.c[j] * o.c[i - j]
            out[i] = acc
        return Series(out)

    __rmul__ = __mul__

    def reciprocal(self) -> "Series":
        out = np.empty_like(self.c)
        out[0] = 1 / self.c[0]
        for i in range(1, self.order + 1):
            acc = self.c[1] * out[i - 1]
            for j in range(2, i + 1):
                acc = acc + self.c[j] * out[i - j]
            out[i] = -acc * out[0]
        return Series(out)

    def __truediv__(self, o):
        if isinstance(o, Series):
            return self * o.reciprocal()
        return Series(self.c / o)

    def power(self, p: float) -> "Series":
        if _is_int(p) and abs(p) <= 8:
            k = int(p)
            if k == 0:
                c = np.zeros_like(self.c)
                c[0] = self.c[0] * 0 + 1
                return Series(c)
            out = self
            for _ in range(abs(k) - 1):
                out = out * self
            return out.reciprocal() if k < 0 else out
        out = np.empty_like(self.c)
        out[0] = self.c[0] ** p
        for k in range(1, self.order + 1):
            acc = 0
            for j in range(1, k + 1):
                acc = acc + ((p + 1) * j - k) * self.c[j] * out[k - j]
            out[k] = acc / (k * self.c[0])
        return Series(out)

    def exp(self, fn=np.exp) -> "Series":
        out = np.empty_like(self.c)
        out[0] = fn(self.c[0])
        for k in range(1, self.order + 1):
            acc = 0
            for j in range(1, k + 1):
                acc = acc + j * self.c[j] * out[k - j]
            out[k] = acc / k
        return Series(out)

    def logabs(self, fn=np.log) -> "Series":
        out = np.empty_like(self.c)
        out[0] = fn(np.abs(self.c[0]))
        for k in range(1, self.order + 1):
            acc = 0
            for j in range(1, k):
                acc = acc + j * out[j] * self.c[k - j]
            out[k] = (self.c[k] - acc / k) / self.c[0]
        return Series(out)

    def d(self) -> "Series":
        k = np.arange(1, self.order + 1).astype(self.c.dtype)[:, None]
        return Series(self.c[1:] * k)


def taylor(e: Expr, zv, order: int, dtype=float) -> Series:
    """Taylor coefficients of ``e`` up to ``order`` at every point of ``zv``.

    Propagates truncated series through the tree, so every derivative is
    consistent with the constants of ``e`` to working precision.
    """
    zs = np.atleast_1d(np.asarray(zv, dtype=dtype))
    fexp, flog = _elementary(zs.dtype)
    z = Series.variable(zs, order)
    one = zs * 0 + 1
    memo: dict = {}

    def ev(n):
        hit = memo.get(id(n))
        if hit is not None:
            return hit[0]
        if isinstance(n, Const):
            out = Series.variable(zs, order, 0.0, 0.0) + n.value * one
        elif isinstance(n, Var):
            out = z
        elif isinstance(n, Add):
            out = ev(n.terms[0])
            for t in n.terms[1:]:
                out = out + ev(t)
        elif isinstance(n, Mul):
            out = ev(n.factors[0])
            for f in n.factors[1:]:
                out = out * ev(f)
        elif isinstance(n, Pow):
            b = ev(n.base)
            if np.any(b.value == 0) and n.exponent < 0:
                raise SingularPointError(n, "zero base to negative power",
                                         _first_bad(b.value == 0, zs))
            if not _is_int(n.exponent) and np.any(b.value < 0):
                raise SingularPointError(n, "negative base to non-integer power",
                                         _first_bad(b.value < 0, zs))
            out = b.power(n.exponent)
        elif isinstance(n, Div):
            den = ev(n.den)
            if np.any(den.value == 0):
                raise SingularPointError(n, "division by zero", _first_bad(den.value == 0, zs))
            out = ev(n.num) * den.reciprocal()
        elif isinstance(n, Exp):
            out = ev(n.arg).exp(fexp)
        elif isinstance(n, LogAbs):
            a = ev(n.arg)
            if np.any(a.value == 0):
                raise SingularPointError(n, "log of zero", _first_bad(a.value == 0, zs))
            out = a.logabs(flog)
        else:
            raise TypeError(f"unknown node {n!r}")
        memo[id(n)] = (out, n)
        return out

    return ev(e)


# ---------------------------------------------------------------- text form

def _num(v: float) -> str:
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Deterministic prefix-notation rendering."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return "(+ " + " ".join(to_text(t) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(* " + " ".join(to_text(f) for f in e.factors) + ")"
    if isinstance(e, Pow):
        return f"(^ {to_text(e.base)} {_num(e.exponent)})"
    if isinstance(e, Div):
        return f"(/ {to_text(e.num)} {to_text(e.den)})"
    if isinstance(e, Exp):
        return f"(exp {to_text(e.arg)})"
    if isinstance(e, LogAbs):
        return f"(logabs {to_text(e.arg)})"
    raise TypeError(f"unknown node {e!r}")


_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


def parse(text: str) -> Expr:
    """Inverse of :func:`to_text`. Builds raw (unnormalized) nodes."""
    tokens = _TOKEN.findall(text)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        t = tokens[pos]
        pos += 1
        return t

    def atom(t):
        if _NUMBER.match(t):
            return Const(float(t))
        if t == ")":
            raise ValueError("unexpected ')'")
        return Var(t)

    def expr():
        t = take()
        if t != "(":
            return atom(t)
        op = take()
        args = []
        while pos < len(tokens) and tokens[pos] != ")":
            args.append(expr())
        take()
        if op == "+":
            return Add(tuple(args))
        if op == "*":
            return Mul(tuple(args))
        if op == "^":
            if len(args) != 2 or not isinstance(args[1], Const):
                raise ValueError("(^ base p) needs a literal exponent")
            return Pow(args[0], args[1].value)
        if op == "/":
            if len(args) != 2:
                raise ValueError("(/ n d) takes two operands")
            return Div(args[0], args[1])
        if op in ("exp", "logabs"):
            if len(args) != 1:
                raise ValueError(f"({op} e) takes one operand")
            return Exp(args[0]) if op == "exp" else LogAbs(args[0])
        raise ValueError(f"unknown operator {op!r}")

    out = expr()
    if pos != len(tokens):
        raise ValueError("trailing tokens after expression")
    return out
