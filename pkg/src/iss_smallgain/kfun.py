"""Nonnegative monotone scalar functions (class K, K-infinity and zero).

Every gain, path component and Lyapunov bound in the package is a
:class:`ScalarFn`: an immutable expression tree that evaluates elementwise on
floats or numpy arrays.

Node kinds
----------
Zero, Identity, Linear, Power, PiecewiseLinear
    Atoms.
Add, Max, Compose, Inverse
    Combinators.  ``Compose(outer, inner)`` evaluates ``outer(inner(r))``.

Inverses of Linear, Power, PiecewiseLinear (and anything that is structurally
linear) are taken symbolically; everything else is inverted by monotone
bisection.

The textual form used by ``.ganet`` files::

    expr := "0" | "r" | NUM "*r" | NUM "*r^" NUM | "pl[" points "]" | "(" expr ")"
          | expr "+" expr | "max(" expr {"," expr} ")" | expr "o" expr | "inv(" expr ")"
    points := NUM ":" NUM {"," NUM ":" NUM} ";" NUM      (breakpoints; terminal slope)

``+`` binds loosest, ``o`` (composition, left operand outer) binds tighter and
associates to the left.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FnClass",
    "ScalarFn",
    "Zero",
    "Identity",
    "Linear",
    "Power",
    "PiecewiseLinear",
    "Add",
    "Max",
    "Compose",
    "Inverse",
    "GridSpec",
    "DEFAULT_GRID",
    "KFunError",
    "DomainError",
    "ConvergenceError",
    "ValidationError",
    "ExprSyntaxError",
    "evaluate",
    "compose",
    "combine",
    "inverse",
    "id_plus",
    "linear_slope",
    "exact_slope",
    "less_than_id",
    "validate",
    "derivative",
    "pl_from_samples",
    "parse_fn",
    "format_fn",
]

OVERFLOW_GUARD = 1e150
BISECT_RTOL = 1e-13
BISECT_MAXITER = 200


class KFunError(ValueError):
    pass


class DomainError(KFunError):
    pass


class ConvergenceError(KFunError):
    pass


class ValidationError(KFunError):
    pass


class FnClass(enum.IntEnum):
    """Comparison-function class; ordering is by strength."""

    ZERO = 0
    K = 1
    KINF = 2


@dataclass(frozen=True)
class GridSpec:
    """Geometric grid of radii ``r_min .. r_max`` with ``points`` samples."""

    r_min: float = 1e-3
    r_max: float = 1e3
    points: int = 121

    def __post_init__(self):
        if not (self.r_min > 0 and self.r_max > self.r_min and self.points >= 2):
            raise KFunError(
                f"invalid grid: r_min={self.r_min}, r_max={self.r_max}, points={self.points}"
            )

    def values(self) -> np.ndarray:
        return np.geomspace(self.r_min, self.r_max, self.points)

    def __str__(self):
        return f"{self.r_min!r},{self.r_max!r},{self.points}"


DEFAULT_GRID = GridSpec()


class ScalarFn:
    """Base class of the expression tree.

    Subclasses implement ``_eval`` on float arrays with nonnegative entries.
    Calling the function checks the domain and returns a float for scalar
    input and an array otherwise.
    """

    __slots__ = ()

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError(f"scalar function evaluated at negative argument {r!r}")
        out = self._eval(arr)
        if arr.ndim == 0:
            return float(out)
        return out

    def _eval(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def tag(self) -> FnClass:  # pragma: no cover - abstract
        raise NotImplementedError

    def __str__(self):
        return format_fn(self)


@dataclass(frozen=True, repr=False)
class Zero(ScalarFn):
    def _eval(self, r):
        return np.zeros_like(r, dtype=float)

    @property
    def tag(self):
        return FnClass.ZERO

    def __repr__(self):
        return "Zero()"


@dataclass(frozen=True, repr=False)
class Identity(ScalarFn):
    def _eval(self, r):
        return np.array(r, dtype=float)

    @property
    def tag(self):
        return FnClass.KINF

    def __repr__(self):
        return "Identity()"


@dataclass(frozen=True)
class Linear(ScalarFn):
    slope: float

    def __post_init__(self):
        if not self.slope > 0 or not math.isfinite(self.slope):
            raise KFunError(f"Linear slope must be positive and finite, got {self.slope}")
        object.__setattr__(self, "slope", float(self.slope))

    def _eval(self, r):
        return self.slope * r

    @property
    def tag(self):
        return FnClass.KINF


@dataclass(frozen=True)
class Power(ScalarFn):
    coeff: float
    exponent: float

    def __post_init__(self):
        if not (self.coeff > 0 and self.exponent > 0):
            raise KFunError("Power needs positive coefficient and exponent")
        object.__setattr__(self, "coeff", float(self.coeff))
        object.__setattr__(self, "exponent", float(self.exponent))

    def _eval(self, r):
        with np.errstate(over="ignore"):
            return self.coeff * np.power(r, self.exponent)

    @property
    def tag(self):
        return FnClass.KINF


@dataclass(frozen=True)
class PiecewiseLinear(ScalarFn):
    """Continuous piecewise-linear function through ``(0, 0)`` and ``points``.

    Beyond the last breakpoint the function continues with ``slope``.
    """

    points: tuple
    slope: float

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.points)
        if pts and pts[0] == (0.0, 0.0):
            pts = pts[1:]
        if not pts:
            raise KFunError("PiecewiseLinear needs at least one breakpoint")
        prev = (0.0, 0.0)
        for p in pts:
            if not (p[0] > prev[0] and p[1] > prev[1]):
                raise KFunError(
                    "PiecewiseLinear breakpoints must increase strictly in both coordinates"
                )
            prev = p
        if self.slope < 0:
            raise KFunError("terminal slope must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "slope", float(self.slope))

    @property
    def xs(self):
        return np.array([0.0] + [p[0] for p in self.points])

    @property
    def ys(self):
        return np.array([0.0] + [p[1] for p in self.points])

    def _eval(self, r):
        xs, ys = self.xs, self.ys
        out = np.interp(r, xs, ys)
        tail = r > xs[-1]
        if np.any(tail):
            out = np.where(tail, ys[-1] + self.slope * (r - xs[-1]), out)
        return out

    @property
    def tag(self):
        return FnClass.KINF if self.slope > 0 else FnClass.K


def _weakest(tags: Iterable[FnClass]) -> FnClass:
    return min(tags)


@dataclass(frozen=True)
class Add(ScalarFn):
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise KFunError("Add needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))

    def _eval(self, r):
        out = self.children[0]._eval(r)
        for c in self.children[1:]:
            out = out + c._eval(r)
        return out

    @property
    def tag(self):
        return max(c.tag for c in self.children)


@dataclass(frozen=True)
class Max(ScalarFn):
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise KFunError("Max needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))

    def _eval(self, r):
        out = self.children[0]._eval(r)
        for c in self.children[1:]:
            out = np.maximum(out, c._eval(r))
        return out

    @property
    def tag(self):
        return max(c.tag for c in self.children)


@dataclass(frozen=True)
class Compose(ScalarFn):
    outer: ScalarFn
    inner: ScalarFn

    def _eval(self, r):
        return self.outer._eval(self.inner._eval(r))

    @property
    def tag(self):
        return _weakest((self.outer.tag, self.inner.tag))


@dataclass(frozen=True)
class Inverse(ScalarFn):
    child: ScalarFn

    def __post_init__(self):
        if self.child.tag != FnClass.KINF:
            raise KFunError("only K-infinity functions can be inverted")

    def _eval(self, y):
        closed = _closed_inverse(self.child)
        if closed is not None:
            return closed._eval(y)
        return _bisect_inverse(self.child, y)

    @property
    def tag(self):
        return FnClass.KINF


# --------------------------------------------------------------------------
# construction helpers


def evaluate(f: ScalarFn, r):
    return f(r)


def compose(outer: ScalarFn, inner: ScalarFn) -> ScalarFn:
    """``outer o inner`` with the identity and zero laws applied."""
    if isinstance(outer, Zero) or isinstance(inner, Zero):
        return Zero()
    if isinstance(outer, Identity):
        return inner
    if isinstance(inner, Identity):
        return outer
    return Compose(outer, inner)


def combine(mode: str, fs: Sequence[ScalarFn]) -> ScalarFn:
    """Aggregate ``fs`` by ``'sum'`` or ``'max'``; zero children are dropped."""
    fs = list(fs)
    if not fs:
        raise KFunError("combine needs a nonempty list")
    mode = str(mode).lower()
    if mode not in ("sum", "max"):
        raise KFunError(f"unknown aggregation {mode!r}")
    nz = [f for f in fs if not isinstance(f, Zero)]
    if not nz:
        return Zero()
    if len(nz) == 1:
        return nz[0]
    return Add(tuple(nz)) if mode == "sum" else Max(tuple(nz))


def id_plus(f: ScalarFn) -> ScalarFn:
    """``id + f``."""
    if isinstance(f, Zero):
        return Identity()
    return Add((Identity(), f))


def inverse(f: ScalarFn) -> ScalarFn:
    """Inverse of a K-infinity function, symbolic whenever possible."""
    if f.tag != FnClass.KINF:
        raise KFunError(f"cannot invert {format_fn(f)}: not of class K-infinity")
    closed = _closed_inverse(f)
    if closed is not None:
        return closed
    if isinstance(f, Compose):
        return compose(inverse(f.inner), inverse(f.outer))
    return Inverse(f)


def _closed_inverse(f: ScalarFn):
    if isinstance(f, Identity):
        return f
    if isinstance(f, Inverse):
        return f.child
    if isinstance(f, Power):
        if f.exponent == 1.0:
            return Linear(1.0 / f.coeff)
        return Power(f.coeff ** (-1.0 / f.exponent), 1.0 / f.exponent)
    if isinstance(f, PiecewiseLinear):
        if f.slope <= 0:
            return None
        return PiecewiseLinear(tuple((b, a) for a, b in f.points), 1.0 / f.slope)
    s = linear_slope(f)
    if s is not None and s > 0:
        return Linear(1.0 / s)
    return None


def _bisect_inverse(f: ScalarFn, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y > 0
    if not np.any(pos):
        return out
    yy = y[pos]
    lo = np.zeros_like(yy)
    hi = yy.copy()
    need = f._eval(hi) < yy
    while np.any(need):
        lo[need] = hi[need]
        hi[need] *= 2.0
        if np.any(hi[need] > OVERFLOW_GUARD):
            raise ConvergenceError("inverse bracket exceeds overflow guard")
        need = need & (f._eval(hi) < yy)
    # tighten the lower end so that hi/lo <= 2
    open_lo = lo == 0.0
    cand = hi / 2.0
    while np.any(open_lo):
        fc = f._eval(cand)
        below = open_lo & (fc < yy)
        lo[below] = cand[below]
        above = open_lo & ~below
        hi[above] = cand[above]
        cand = np.where(above, cand / 2.0, cand)
        open_lo = open_lo & ~below & (cand > 1e-300)
    for _ in range(BISECT_MAXITER):
        if np.all(hi - lo <= BISECT_RTOL * hi):
            break
        mid = 0.5 * (lo + hi)
        fm = f._eval(mid)
        up = fm < yy
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    else:
        raise ConvergenceError("bisection did not reach tolerance")
    out[pos] = 0.5 * (lo + hi)
    return out


def exact_slope(f: ScalarFn):
    """Slope of a structurally linear function as a :class:`Fraction`, else None.

    Float parameters enter through their shortest decimal representation, so
    products like ``1.1*0.9`` are carried exactly.
    """
    if isinstance(f, Zero):
        return Fraction(0)
    if isinstance(f, Identity):
        return Fraction(1)
    if isinstance(f, Linear):
        return Fraction(repr(f.slope))
    if isinstance(f, Power):
        return Fraction(repr(f.coeff)) if f.exponent == 1.0 else None
    if isinstance(f, PiecewiseLinear):
        seg = set()
        prev = (Fraction(0), Fraction(0))
        for a, b in f.points:
            a, b = Fraction(repr(a)), Fraction(repr(b))
            seg.add((b - prev[1]) / (a - prev[0]))
            prev = (a, b)
        seg.add(Fraction(repr(f.slope)))
        return seg.pop() if len(seg) == 1 else None
    if isinstance(f, Add):
        parts = [exact_slope(c) for c in f.children]
        return None if any(p is None for p in parts) else sum(parts, Fraction(0))
    if isinstance(f, Max):
        parts = [exact_slope(c) for c in f.children]
        return None if any(p is None for p in parts) else max(parts)
    if isinstance(f, Compose):
        a, b = exact_slope(f.outer), exact_slope(f.inner)
        return None if a is None or b is None else a * b
    if isinstance(f, Inverse):
        a = exact_slope(f.child)
        return None if a is None or a == 0 else 1 / a
    return None


def linear_slope(f: ScalarFn):
    """Float slope if ``f`` is structurally ``c*id`` (or zero), else None."""
    s = exact_slope(f)
    return None if s is None else float(s)


# --------------------------------------------------------------------------
# grid checks


def less_than_id(f: ScalarFn, grid: GridSpec = DEFAULT_GRID):
    """Check ``f(r) < r`` on the grid.

    This is a semi-decision: a pass means no violation at the sampled radii.
    Returns ``(holds, witness)`` where ``witness`` is the smallest violating
    grid radius or None.
    """
    if not isinstance(grid, GridSpec):
        grid = GridSpec(*grid)
    r = grid.values()
    bad = ~(f._eval(r) < r)
    if np.any(bad):
        return False, float(r[np.argmax(bad)])
    return True, None


def validate(f: ScalarFn, grid: GridSpec = DEFAULT_GRID, declared: FnClass | None = None) -> FnClass:
    """Check the declared class of ``f`` numerically; raise ValidationError on failure."""
    declared = f.tag if declared is None else declared
    r = grid.values()
    v = f._eval(r)
    if f._eval(np.zeros(1))[0] != 0.0:
        raise ValidationError(f"{format_fn(f)}: value at 0 is not 0")
    if declared == FnClass.ZERO:
        if np.any(v != 0):
            raise ValidationError(f"{format_fn(f)}: declared zero but nonzero on grid")
        return declared
    if not np.all(np.diff(v) > 0) or not np.all(v > 0):
        k = int(np.argmin(np.diff(v) > 0))
        raise ValidationError(
            f"{format_fn(f)}: not strictly increasing near r={r[k]:.6g}"
        )
    if declared == FnClass.KINF:
        big = np.logspace(math.log10(grid.r_max), math.log10(OVERFLOW_GUARD), 50)
        with np.errstate(over="ignore", invalid="ignore"):
            vb = f._eval(big)
        finite = vb[np.isfinite(vb)]
        if finite.size > 1 and not np.all(np.diff(finite) > 0):
            raise ValidationError(f"{format_fn(f)}: declared K-infinity but levels off")
    return declared


def derivative(f: ScalarFn, r, rel_step: float = 1e-6):
    """Derivative of ``f`` at ``r > 0`` (exact for linear, else central difference)."""
    s = linear_slope(f)
    r = np.asarray(r, dtype=float)
    if s is not None:
        return np.full_like(r, s) if r.ndim else s
    h = rel_step * np.maximum(r, 1e-300)
    d = (f._eval(r + h) - f._eval(np.maximum(r - h, 0.0))) / (r + h - np.maximum(r - h, 0.0))
    return d if r.ndim else float(d)


def pl_from_samples(r: np.ndarray, values: np.ndarray) -> ScalarFn:
    """Piecewise-linear K-infinity function through sampled ``(r, value)`` pairs.

    Samples are made strictly increasing by a running maximum with a relative
    nudge; the last segment's slope continues beyond the final sample.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        raise KFunError("envelope samples must be positive")
    v = v.copy()
    for k in range(1, len(v)):
        if v[k] <= v[k - 1]:
            v[k] = v[k - 1] * (1 + 1e-12)
    slope = (v[-1] - v[-2]) / (r[-1] - r[-2]) if len(r) > 1 else v[0] / r[0]
    return PiecewiseLinear(tuple(zip(r.tolist(), v.tolist())), slope)


# --------------------------------------------------------------------------
# expression grammar


class ExprSyntaxError(KFunError):
    def __init__(self, message: str, pos: int, expected: Sequence[str] = ()):
        self.pos = pos
        self.expected = tuple(expected)
        self.message = message
        super().__init__(f"{message} at offset {pos}")


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<word>[A-Za-z_]+)|(?P<op>[*^+(),\[\]:;]))"
)


def _tokenize(text: str):
    toks = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        t = self.next()
        if t[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, found {t[1] or 'end of input'!r}", t[2], [value])
        return t

    def number(self) -> float:
        t = self.next()
        if t[0] != "num":
            raise ExprSyntaxError(f"expected a number, found {t[1] or 'end of input'!r}", t[2], ["NUM"])
        return float(t[1])

    def parse(self) -> ScalarFn:
        f = self.sum()
        t = self.peek()
        if t[0] != "eof":
            raise ExprSyntaxError(f"unexpected {t[1]!r}", t[2], ["+", "o", "end of input"])
        return f

    def sum(self):
        parts = [self.comp()]
        while self.peek()[1] == "+":
            self.next()
            parts.append(self.comp())
        return parts[0] if len(parts) == 1 else Add(tuple(parts))

    def comp(self):
        f = self.atom()
        while self.peek()[1] == "o":
            self.next()
            f = Compose(f, self.atom())
        return f

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            c = self.number()
            if self.peek()[1] != "*":
                if c == 0.0:
                    return Zero()
                t = self.peek()
                raise ExprSyntaxError("expected '*r' after coefficient", t[2], ["*"])
            self.next()
            self.expect("r")
            if self.peek()[1] == "^":
                self.next()
                return Power(c, self.number())
            try:
                return Linear(c)
            except KFunError as e:
                raise ExprSyntaxError(str(e), pos) from None
        if val == "r":
            self.next()
            return Identity()
        if val == "(":
            self.next()
            f = self.sum()
            self.expect(")")
            return f
        if val == "max":
            self.next()
            self.expect("(")
            items = [self.sum()]
            while self.peek()[1] == ",":
                self.next()
                items.append(self.sum())
            self.expect(")")
            return Max(tuple(items))
        if val == "inv":
            self.next()
            self.expect("(")
            f = self.sum()
            self.expect(")")
            try:
                return Inverse(f)
            except KFunError as e:
                raise ExprSyntaxError(str(e), pos) from None
        if val == "pl":
            self.next()
            self.expect("[")
            pts = []
            while True:
                a = self.number()
                self.expect(":")
                b = self.number()
                pts.append((a, b))
                if self.peek()[1] == ",":
                    self.next()
                    continue
                break
            self.expect(";")
            s = self.number()
            self.expect("]")
            try:
                return PiecewiseLinear(tuple(pts), s)
            except KFunError as e:
                raise ExprSyntaxError(str(e), pos) from None
        raise ExprSyntaxError(
            f"unexpected {val or 'end of input'!r}", pos, ["NUM", "r", "(", "max", "inv", "pl"]
        )


def parse_fn(text: str) -> ScalarFn:
    """Parse the textual expression form."""
    return _Parser(text).parse()


def _num(x: float) -> str:
    return repr(float(x))


def format_fn(f: ScalarFn) -> str:
    """Inverse of :func:`parse_fn`: ``parse_fn(format_fn(f)) == f``."""
    if isinstance(f, Zero):
        return "0"
    if isinstance(f, Identity):
        return "r"
    if isinstance(f, Linear):
        return f"{_num(f.slope)}*r"
    if isinstance(f, Power):
        return f"{_num(f.coeff)}*r^{_num(f.exponent)}"
    if isinstance(f, PiecewiseLinear):
        pts = ", ".join(f"{_num(a)}:{_num(b)}" for a, b in f.points)
        return f"pl[{pts}; {_num(f.slope)}]"
    if isinstance(f, Add):
        return " + ".join(f"({format_fn(c)})" if isinstance(c, Add) else format_fn(c) for c in f.children)
    if isinstance(f, Max):
        return "max(" + ", ".join(format_fn(c) for c in f.children) + ")"
    if isinstance(f, Compose):
        o = format_fn(f.outer)
        i = format_fn(f.inner)
        if isinstance(f.outer, Add):
            o = f"({o})"
        if isinstance(f.inner, (Add, Compose)):
            i = f"({i})"
        return f"{o} o {i}"
    if isinstance(f, Inverse):
        return f"inv({format_fn(f.child)})"
    raise KFunError(f"unknown node {f!r}")
