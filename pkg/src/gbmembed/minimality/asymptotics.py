"""Tail expansions of coefficient expressions.

An expression in ``x`` is pulled back to a variable ``w -> +inf`` through
one of four tail maps (``x = w``, ``x = -w``, ``x = r - 1/w``,
``x = l + 1/w``) and expanded as a finite sum of exact terms

    c * w**p * (log w)**q * exp(sum_i a_i * w**s_i * (log w)**r_i)

plus an ``O(.)`` remainder of the same shape. Sums, products, reciprocals,
real powers, ``exp``, ``log`` and ``abs`` stay inside this class;
anything else (double exponentials, ``log log w``, remainders that swamp
the leading term) raises :class:`Inconclusive`. Additive constants of
antiderivatives are unknown, but they only contribute positive factors, so
finiteness verdicts are unaffected.

When the symbolic route fails, :func:`probe_divergence` estimates the
log-log slope of the integrand numerically and returns a verdict only if
the slope is clearly away from -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import binom

from .expr import Add, Call, Const, Div, Expr, Mul, Neg, Piecewise, Pow, Sub, Var

__all__ = [
    "Inconclusive",
    "Series",
    "Tail",
    "expand",
    "integrate",
    "integral_diverges",
    "scale_tail_finite",
    "probe_divergence",
    "TailVerdict",
]

# relative depth (powers of w) kept below the leading term
DEPTH = 12
MAX_ORDER = 24
TOL = 1e-9


class Inconclusive(Exception):
    """The tail behaviour is outside the decidable class."""


def _r(v: float) -> float:
    v = round(float(v), 10)
    return 0.0 if v == 0 else v


# a scale key is (G, p, q) with G a tuple of ((s, r), a) sorted by (s, r) desc
ONE = ((), 0.0, 0.0)


def _gnorm(items) -> tuple:
    acc: dict = {}
    for (s, r), a in items:
        key = (_r(s), _r(r))
        acc[key] = acc.get(key, 0.0) + a
    return tuple(sorted(((k, a) for k, a in acc.items() if abs(a) > 1e-14), reverse=True))


def _key(G, p, q) -> tuple:
    return (_gnorm(G), _r(p), _r(q))


def _kmul(k1, k2):
    return _key(k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2])


def _kpow(k, alpha):
    return _key(tuple((sr, a * alpha) for sr, a in k[0]), k[1] * alpha, k[2] * alpha)


def _kinv(k):
    return _kpow(k, -1.0)


def _cmp(k1, k2) -> int:
    """+1 if ``k1`` dominates ``k2`` as w -> inf, -1 if dominated, 0 if equal."""
    d: dict = dict(k1[0])
    for sr, a in k2[0]:
        d[sr] = d.get(sr, 0.0) - a
    for sr in sorted(d, reverse=True):
        a = d[sr]
        if abs(a) > 1e-12:
            return 1 if a > 0 else -1
    for i in (1, 2):
        if abs(k1[i] - k2[i]) > TOL:
            return 1 if k1[i] > k2[i] else -1
    return 0


def _kmax(*keys):
    best = None
    for k in keys:
        if k is None:
            continue
        if best is None or _cmp(k, best) > 0:
            best = k
    return best


def _vanishing(k) -> bool:
    return _cmp(k, ONE) < 0


FLOOR = ((), float(-DEPTH), 0.0)


@dataclass(frozen=True)
class Series:
    terms: tuple  # ((key, coef), ...)
    rem: tuple | None = None

    @staticmethod
    def make(terms: dict, rem=None) -> "Series":
        clean = {k: c for k, c in terms.items() if c != 0.0}
        if rem is not None:
            clean = {k: c for k, c in clean.items() if _cmp(k, rem) > 0}
        if clean:
            lead = _kmax(*clean)
            floor = _kmul(lead, FLOOR)
            low = [k for k in clean if _cmp(k, floor) < 0]
            if low:
                for k in low:
                    del clean[k]
                rem = _kmax(rem, floor)
        return Series(tuple(clean.items()), rem)

    @staticmethod
    def const(c: float) -> "Series":
        return Series.make({ONE: float(c)})

    @property
    def is_zero(self) -> bool:
        return not self.terms and self.rem is None

    def bound(self):
        return _kmax(*(k for k, _ in self.terms), self.rem)

    def lead(self):
        if not self.terms:
            if self.rem is None:
                raise Inconclusive("expression vanishes identically in the tail")
            raise Inconclusive("leading behaviour lost in the remainder")
        k = _kmax(*(k for k, _ in self.terms))
        if self.rem is not None and _cmp(self.rem, k) >= 0:
            raise Inconclusive("leading behaviour lost in the remainder")
        return k, dict(self.terms)[k]

    def __add__(self, other: "Series") -> "Series":
        terms = dict(self.terms)
        for k, c in other.terms:
            if k in terms:
                s = terms[k] + c
                terms[k] = 0.0 if abs(s) <= 1e-12 * max(abs(terms[k]), abs(c)) else s
            else:
                terms[k] = c
        return Series.make(terms, _kmax(self.rem, other.rem))

    def __neg__(self) -> "Series":
        return Series(tuple((k, -c) for k, c in self.terms), self.rem)

    def __sub__(self, other: "Series") -> "Series":
        return self + (-other)

    def __mul__(self, other: "Series") -> "Series":
        if self.is_zero or other.is_zero:
            return Series(())
        terms: dict = {}
        for k1, c1 in self.terms:
            for k2, c2 in other.terms:
                k = _kmul(k1, k2)
                terms[k] = terms.get(k, 0.0) + c1 * c2
        rem = None
        if other.rem is not None:
            rem = _kmul(self.bound(), other.rem)
        if self.rem is not None:
            rem = _kmax(rem, _kmul(self.rem, other.bound()))
        return Series.make(terms, rem)

    def scale(self, c: float) -> "Series":
        return Series.make({k: c * v for k, v in self.terms}, self.rem)


def _monomial(key, c=1.0) -> Series:
    return Series.make({key: c})


def _power_series(u: Series, coef: Callable[[int], float]) -> Series:
    """``sum_j coef(j) u^j`` for ``u = o(1)``, truncated with an O-bound."""
    total = Series.const(coef(0))
    if u.is_zero:
        return total
    ub = u.bound()
    if not _vanishing(ub):
        raise Inconclusive("series argument does not vanish")
    p = Series.const(1.0)
    for j in range(1, MAX_ORDER + 1):
        p = p * u
        c = coef(j)
        if c:
            total = total + p.scale(c)
        pb = p.bound()
        if pb is None or _cmp(pb, FLOOR) < 0:
            return total
    return Series.make(dict(total.terms), _kmax(total.rem, _kmul(p.bound(), ub)))


def _split_lead(a: Series):
    k, c = a.lead()
    inv = _monomial(_kinv(k), 1.0 / c)
    return k, c, a * inv - Series.const(1.0)


def reciprocal(a: Series) -> Series:
    if a.is_zero:
        raise Inconclusive("division by an expression vanishing in the tail")
    k, c, u = _split_lead(a)
    return _monomial(_kinv(k), 1.0 / c) * _power_series(u, lambda j: (-1.0) ** j)


def power(a: Series, alpha: float) -> Series:
    if alpha == 0:
        return Series.const(1.0)
    if float(alpha).is_integer() and abs(alpha) <= 16:
        base = a if alpha > 0 else reciprocal(a)
        out = Series.const(1.0)
        for _ in range(int(abs(alpha))):
            out = out * base
        return out
    if a.is_zero:
        if alpha > 0:
            return Series(())
        raise Inconclusive("negative power of a vanishing expression")
    k, c, u = _split_lead(a)
    if c < 0:
        raise Inconclusive("fractional power of a negative expression")
    return _monomial(_kpow(k, alpha), c**alpha) * _power_series(u, lambda j: float(binom(alpha, j)))


def exp_series(a: Series) -> Series:
    log_coef, const = 0.0, 0.0
    growth: list = []
    small: dict = {}
    for k, c in a.terms:
        G, p, q = k
        if G:
            if G[0][1] > 0:
                raise Inconclusive("exponential of an exponentially growing expression")
            small[k] = c
        elif p > TOL or (abs(p) <= TOL and q > TOL):
            if abs(p) <= TOL and abs(q - 1) <= TOL:
                log_coef += c
            else:
                growth.append(((p, q), c))
        elif abs(p) <= TOL and abs(q) <= TOL:
            const += c
        else:
            small[k] = c
    if a.rem is not None and not _vanishing(a.rem):
        raise Inconclusive("exponent known only up to a non-vanishing error")
    v = Series.make(small, a.rem)
    base = _monomial(_key(tuple(growth), log_coef, 0.0), math.exp(min(max(const, -700.0), 700.0)))
    return base * _power_series(v, lambda j: 1.0 / math.factorial(j))


def log_series(a: Series) -> Series:
    k, c, u = _split_lead(a)
    if c <= 0:
        raise Inconclusive("logarithm of a non-positive expression")
    G, p, q = k
    if abs(q) > TOL:
        raise Inconclusive("log log terms are outside the class")
    terms = {ONE: math.log(c)}
    if p:
        terms[((), 0.0, 1.0)] = p
    for (s, r), coef in G:
        key = _key((), s, r)
        terms[key] = terms.get(key, 0.0) + coef
    return Series.make(terms) + _power_series(u, lambda j: 0.0 if j == 0 else (-1.0) ** (j + 1) / j)


def abs_series(a: Series) -> Series:
    if a.is_zero:
        return a
    _, c = a.lead()
    return -a if c < 0 else a


@dataclass(frozen=True)
class Tail:
    """Approach to a boundary: ``+inf``, ``-inf``, ``right`` (to r) or ``left`` (to l)."""

    kind: str
    point: float = 0.0

    def __post_init__(self):
        if self.kind not in ("+inf", "-inf", "right", "left"):
            raise ValueError(f"unknown tail kind {self.kind!r}")

    @staticmethod
    def towards(boundary: float, side: str) -> "Tail":
        if math.isinf(boundary):
            return Tail("+inf" if boundary > 0 else "-inf")
        return Tail(side, float(boundary))

    def var(self) -> Series:
        w = ((), 1.0, 0.0)
        winv = ((), -1.0, 0.0)
        if self.kind == "+inf":
            return _monomial(w)
        if self.kind == "-inf":
            return _monomial(w, -1.0)
        sign = -1.0 if self.kind == "right" else 1.0
        return Series.make({ONE: self.point, winv: sign})

    def dvar(self) -> Series:
        """``dx/dw`` of the tail map."""
        if self.kind == "+inf":
            return Series.const(1.0)
        if self.kind == "-inf":
            return Series.const(-1.0)
        return _monomial(((), -2.0, 0.0), 1.0 if self.kind == "right" else -1.0)

    def x_of(self, w):
        w = np.asarray(w, dtype=float)
        return {
            "+inf": lambda: w,
            "-inf": lambda: -w,
            "right": lambda: self.point - 1.0 / w,
            "left": lambda: self.point + 1.0 / w,
        }[self.kind]()

    def dx_of(self, w):
        w = np.asarray(w, dtype=float)
        return {
            "+inf": lambda: np.ones_like(w),
            "-inf": lambda: -np.ones_like(w),
            "right": lambda: w**-2.0,
            "left": lambda: -(w**-2.0),
        }[self.kind]()

    def branch(self, x0: float) -> str:
        """Which side of a breakpoint ``x0`` the tail eventually lives on."""
        if self.kind == "+inf":
            return "right"
        if self.kind == "-inf":
            return "left"
        if self.kind == "right":
            return "left" if self.point <= x0 else "right"
        return "right" if self.point >= x0 else "left"


def expand(expr: Expr, tail: Tail) -> Series:
    if expr.is_constant():
        v = expr.constant_value()
        if not math.isfinite(v):
            raise Inconclusive(f"constant {v} is not finite")
        return Series.const(v) if v else Series(())
    if isinstance(expr, Var):
        return tail.var()
    if isinstance(expr, Neg):
        return -expand(expr.a, tail)
    if isinstance(expr, Add):
        return expand(expr.a, tail) + expand(expr.b, tail)
    if isinstance(expr, Sub):
        return expand(expr.a, tail) - expand(expr.b, tail)
    if isinstance(expr, Mul):
        return expand(expr.a, tail) * expand(expr.b, tail)
    if isinstance(expr, Div):
        return expand(expr.a, tail) * reciprocal(expand(expr.b, tail))
    if isinstance(expr, Pow):
        if expr.b.is_constant():
            return power(expand(expr.a, tail), expr.b.constant_value())
        return exp_series(expand(expr.b, tail) * log_series(expand(expr.a, tail)))
    if isinstance(expr, Call):
        inner = expand(expr.a, tail)
        if expr.name == "exp":
            return exp_series(inner)
        if expr.name == "log":
            return log_series(inner)
        if expr.name == "sqrt":
            return power(inner, 0.5)
        if expr.name == "abs":
            return abs_series(inner)
    if isinstance(expr, Piecewise):
        return expand(expr.left if tail.branch(expr.x0) == "left" else expr.right, tail)
    if isinstance(expr, Const):
        return Series.const(expr.value)
    raise Inconclusive(f"unsupported expression node {type(expr).__name__}")


def _integrable(k) -> bool:
    G, p, q = k
    if G:
        return G[0][1] < 0
    return p < -1 - TOL or (abs(p + 1) <= TOL and q < -1 - TOL)


def integrate(m: Series) -> Series:
    """Antiderivative in ``w`` up to an (unknown) additive constant."""
    out = Series(())
    rem = None
    for k, c in m.terms:
        G, p, q = k
        if G:
            (s, r), a = G[0]
            if a < 0:
                rem = _kmax(rem, _kmul(k, ((), 1.0, 0.0)))
                continue
            if s <= 0 or abs(r) > TOL:
                raise Inconclusive("cannot integrate this exponential growth")
            delta = s if len(G) == 1 else min(s, s - G[1][0][0])
            if delta <= 0:
                raise Inconclusive("cannot integrate this exponential growth")
            out = out + _monomial(_key(G, p + 1 - s, q), c / (a * s))
            rem = _kmax(rem, _key(G, p + 1 - s - delta, q))
        elif p > -1 + TOL:
            n = p + 1
            if float(q).is_integer() and q >= 0:
                acc = {}
                qi = int(q)
                for j in range(qi + 1):
                    coeff = c * (-1) ** j * math.factorial(qi) / math.factorial(qi - j) / n ** (j + 1)
                    acc[_key((), n, qi - j)] = coeff
                out = out + Series.make(acc)
            else:
                out = out + _monomial(_key((), n, q), c / n)
                rem = _kmax(rem, _key((), n, q - 1))
        elif abs(p + 1) <= TOL:
            if abs(q + 1) <= TOL:
                raise Inconclusive("log log growth is outside the class")
            out = out + _monomial(_key((), 0.0, q + 1), c / (q + 1))
        else:
            rem = _kmax(rem, _key((), p + 1, q))
    if m.rem is not None:
        if not _integrable(m.rem):
            raise Inconclusive("error term of the integrand is not integrable")
        G, p, q = m.rem
        rem = _kmax(rem, _kmul(m.rem, ((), 1.0, 0.0)) if (G or p < -1 - TOL) else _key((), 0.0, q + 1))
    # constants are absorbed into the unknown additive constant
    terms = {k: c for k, c in out.terms if k != ONE}
    return Series.make(terms, rem)


def integral_diverges(f: Series) -> bool:
    """Decide ``int^inf f(w) dw = inf`` for an eventually positive ``f``."""
    if f.is_zero:
        return False
    k, c = f.lead()
    if c <= 0:
        raise Inconclusive("integrand is not eventually positive")
    G, p, q = k
    if G:
        return G[0][1] > 0
    if p > -1 + TOL:
        return True
    if p < -1 - TOL:
        return False
    return q >= -1 - TOL


def scale_tail_finite(m: Expr, tail: Tail) -> bool:
    """Is ``int exp(-int m)`` finite towards the tail (``m = 2 mu / sigma^2``)?"""
    mt = expand(m, tail) * tail.dvar()
    J = integrate(mt)
    if J.terms:
        k, c = J.lead()
        if k[0] and k[0][0][1] > 0:
            # exponentially growing exponent: exp(-J) is super-exponentially small or large
            return c > 0
    f = exp_series(-J) * abs_series(tail.dvar())
    return not integral_diverges(f)


@dataclass(frozen=True)
class TailVerdict:
    """Outcome of a tail-integral decision; ``value`` is None when undecided."""

    value: bool | None
    method: str  # "symbolic", "numeric" or "none"
    detail: str = ""

    def to_json(self) -> dict:
        return {"value": self.value, "method": self.method, "detail": self.detail}


PROBE_W = np.logspace(1.0, 8.0, 29)


def probe_divergence(log_f: Callable[[np.ndarray], np.ndarray], w=PROBE_W) -> bool:
    """Growth-ratio heuristic on ``log f`` sampled at geometric ``w``.

    Returns True (diverges) or False (converges) when the trailing log-log
    slopes sit clearly on one side of -1; raises :class:`Inconclusive` otherwise.
    """
    lf = np.asarray(log_f(w), dtype=float)
    if np.any(np.isnan(lf)) or np.any(lf == np.inf):
        raise Inconclusive("integrand not finite on the probe grid")
    tail = lf[-9:]
    lw = np.log(w[-9:])
    if np.all(tail == -np.inf):
        return False
    if np.any(np.isinf(tail)):
        raise Inconclusive("integrand underflows on part of the probe grid")
    slopes = np.diff(tail) / np.diff(lw)
    if slopes.max() < -1.2:
        return False
    if slopes.min() > -0.8:
        return True
    raise Inconclusive(f"log-log slope {slopes[-1]:.3f} too close to -1")
