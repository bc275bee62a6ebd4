"""Coefficient expressions in one variable ``x``.

Grammar (a subset of Python expression syntax, ``^`` accepted for powers)::

    expr   := expr ('+' | '-') term | term
    term   := term ('*' | '/') factor | factor
    factor := ('+' | '-') factor | power
    power  := atom ('^' | '**') factor | atom
    atom   := NUMBER | 'x' | 'pi' | 'e' | 'inf' | '(' expr ')'
            | NAME '(' expr {',' expr} ')'

Functions: ``exp log sqrt abs`` (one argument), ``pow(a, b)`` and
``piecewise(x0, left, right)`` which is ``left`` for ``x < x0`` and
``right`` for ``x >= x0``; ``x0`` must be constant. Parsing goes through
:mod:`ast` with a node whitelist, so nothing is ever executed.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np

from ..errors import SpecError

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "Piecewise",
    "parse_expr",
    "as_expr",
]

UNARY_FUNCS = ("exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi, "e": math.e, "inf": math.inf}


class Expr:
    """Base class; subclasses are immutable trees evaluated with numpy."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(x)
        return np.broadcast_to(out, x.shape).astype(float) if np.ndim(out) < x.ndim else out

    def _eval(self, x):
        raise NotImplementedError

    def is_constant(self) -> bool:
        raise NotImplementedError

    def constant_value(self) -> float:
        if not self.is_constant():
            raise SpecError(f"expression {self} depends on x")
        return float(self(np.float64(0.0)))

    # operator sugar keeps derived expressions (e.g. 2 mu / sigma^2) readable
    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __pow__(self, other):
        return Pow(self, as_expr(other))

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def _eval(self, x):
        return np.float64(self.value)

    def is_constant(self):
        return True

    def __str__(self):
        text = repr(float(self.value))
        # keeps "-c^p" from parsing as -(c^p)
        return f"({text})" if text.startswith("-") else text


@dataclass(frozen=True, eq=True)
class Var(Expr):
    def _eval(self, x):
        return x

    def is_constant(self):
        return False

    def __str__(self):
        return "x"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    a: Expr

    def _eval(self, x):
        return -self.a._eval(x)

    def is_constant(self):
        return self.a.is_constant()

    def __str__(self):
        return f"(-{self.a})"


@dataclass(frozen=True, eq=True)
class _Binary(Expr):
    a: Expr
    b: Expr
    symbol = "?"

    def is_constant(self):
        return self.a.is_constant() and self.b.is_constant()

    def __str__(self):
        return f"({self.a} {self.symbol} {self.b})"


class Add(_Binary):
    symbol = "+"

    def _eval(self, x):
        return self.a._eval(x) + self.b._eval(x)


class Sub(_Binary):
    symbol = "-"

    def _eval(self, x):
        return self.a._eval(x) - self.b._eval(x)


class Mul(_Binary):
    symbol = "*"

    def _eval(self, x):
        return self.a._eval(x) * self.b._eval(x)


class Div(_Binary):
    symbol = "/"

    def _eval(self, x):
        return self.a._eval(x) / self.b._eval(x)


class Pow(_Binary):
    symbol = "^"

    def _eval(self, x):
        return np.power(self.a._eval(x), self.b._eval(x))


@dataclass(frozen=True, eq=True)
class Call(Expr):
    name: str
    a: Expr

    def _eval(self, x):
        v = self.a._eval(x)
        if self.name == "abs":
            return np.abs(v)
        return getattr(np, self.name)(v)

    def is_constant(self):
        return self.a.is_constant()

    def __str__(self):
        return f"{self.name}({self.a})"


@dataclass(frozen=True, eq=True)
class Piecewise(Expr):
    x0: float
    left: Expr
    right: Expr

    def _eval(self, x):
        lv = np.broadcast_to(self.left._eval(x), np.shape(x))
        rv = np.broadcast_to(self.right._eval(x), np.shape(x))
        return np.where(x < self.x0, lv, rv)

    def is_constant(self):
        return self.left.is_constant() and self.right.is_constant() and self.left == self.right

    def __str__(self):
        return f"piecewise({self.x0!r}, {self.left}, {self.right})"


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse_expr(value)
    if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
        return Const(float(value))
    raise SpecError(f"cannot interpret {value!r} as an expression")


_BINOPS = {ast.Add: Add, ast.Sub: Sub, ast.Mult: Mul, ast.Div: Div, ast.Pow: Pow, ast.BitXor: Pow}


def _convert(node: ast.AST, text: str) -> Expr:
    if isinstance(node, ast.Expression):
        return _convert(node.body, text)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise SpecError(f"unsupported literal {node.value!r} in {text!r}")
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        if node.id == "x":
            return Var()
        if node.id in CONSTANTS:
            return Const(CONSTANTS[node.id])
        raise SpecError(f"unknown name {node.id!r} in {text!r}")
    if isinstance(node, ast.UnaryOp):
        inner = _convert(node.operand, text)
        if isinstance(node.op, ast.USub):
            return Neg(inner)
        if isinstance(node.op, ast.UAdd):
            return inner
        raise SpecError(f"unsupported unary operator in {text!r}")
    if isinstance(node, ast.BinOp):
        cls = _BINOPS.get(type(node.op))
        if cls is None:
            raise SpecError(f"unsupported operator in {text!r}")
        return cls(_convert(node.left, text), _convert(node.right, text))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise SpecError(f"unsupported call in {text!r}")
        name = node.func.id
        args = [_convert(a, text) for a in node.args]
        if name in UNARY_FUNCS:
            if len(args) != 1:
                raise SpecError(f"{name} takes one argument")
            return Call(name, args[0])
        if name == "pow":
            if len(args) != 2:
                raise SpecError("pow takes two arguments")
            return Pow(args[0], args[1])
        if name == "piecewise":
            if len(args) != 3:
                raise SpecError("piecewise takes (x0, left, right)")
            if not args[0].is_constant():
                raise SpecError("piecewise breakpoint must be constant")
            return Piecewise(args[0].constant_value(), args[1], args[2])
        raise SpecError(f"unknown function {name!r} in {text!r}")
    raise SpecError(f"unsupported syntax in {text!r}")


def parse_expr(text: str) -> Expr:
    if not isinstance(text, str) or not text.strip():
        raise SpecError("empty expression")
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise SpecError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _convert(tree, text)
