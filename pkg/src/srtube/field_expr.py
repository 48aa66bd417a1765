"""Scalar-field expression language over ambient coordinates x, y, z, w.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative, '**' accepted
    atom   := NUMBER | 'pi' | VAR | FUNC '(' expr ')' | '(' expr ')'

A minus sign written directly in front of a number literal folds into the
constant (``-3`` is ``Const(-3.0)``) unless the literal is raised to a power,
so ``-3^2`` stays ``Neg(Pow(3, 2))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

VARIABLES = ("x", "y", "z", "w")
FUNCTIONS = ("sqrt", "sin", "cos", "exp", "log")
DIV_TOL = 1e-14


class ParseError(ValueError):
    def __init__(self, message, source, span):
        self.source = source
        self.span = span
        caret = " " * span[0] + "^" * max(1, span[1] - span[0])
        super().__init__(f"{message} at {span[0]}:{span[1]}\n  {source}\n  {caret}")


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, _lift(other))

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var(Expr):
    name: str
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exp: Expr
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr
    span: tuple = field(default=None, compare=False, repr=False)


def _lift(v):
    if isinstance(v, Expr):
        return v
    return Const(float(v))


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            start = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[start]!r}", src, (start, start + 1))
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, (start, m.end())))
        pos = m.end()
    tokens.append(("end", "", (len(src), len(src))))
    return tokens


class _Parser:
    def __init__(self, src):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, span):
        raise ParseError(msg, self.src, span)

    def parse(self):
        e = self.expr()
        kind, text, span = self.peek()
        if kind != "end":
            if text == ")":
                self.error("unbalanced parentheses: unmatched ')'", span)
            self.error(f"unexpected token {text!r}", span)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, _ = self.take()
            right = self.term()
            span = (left.span[0], right.span[1])
            left = Add(left, right, span) if op == "+" else Sub(left, right, span)
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, _ = self.take()
            right = self.unary()
            span = (left.span[0], right.span[1])
            left = Mul(left, right, span) if op == "*" else Div(left, right, span)
        return left

    def unary(self):
        kind, text, span = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            nkind, ntext, nspan = self.peek()
            if text == "-" and nkind == "num" and self.peek(1)[1] != "^":
                self.take()
                return Const(-float(ntext), (span[0], nspan[1]))
            arg = self.unary()
            if text == "+":
                return arg
            return Neg(arg, (span[0], arg.span[1]))
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            ex = self.unary()
            return Pow(base, ex, (base.span[0], ex.span[1]))
        return base

    def atom(self):
        kind, text, span = self.take()
        if kind == "num":
            return Const(float(text), span)
        if kind == "name":
            if text in VARIABLES:
                if self.peek()[1] == "(":
                    self.error(f"{text!r} is a variable, not a function", span)
                return Var(text, span)
            if text == "pi":
                return Const(math.pi, span)
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.error(f"function {text!r} needs one argument in parentheses", span)
                open_span = self.take()[2]
                if self.peek()[1] == ")":
                    self.error(f"arity mismatch: {text} takes 1 argument, got 0",
                               (span[0], self.peek()[2][1]))
                arg = self.expr()
                if self.peek()[1] == ",":
                    nargs = 1
                    while self.peek()[1] == ",":
                        self.take()
                        self.expr()
                        nargs += 1
                    self.error(f"arity mismatch: {text} takes 1 argument, got {nargs}",
                               (span[0], self.peek()[2][1]))
                if self.peek()[1] != ")":
                    self.error("unbalanced parentheses: expected ')'", (open_span[0], self.peek()[2][0]))
                close = self.take()[2]
                return Call(text, arg, (span[0], close[1]))
            self.error(f"unknown identifier {text!r}", span)
        if kind == "op" and text == "(":
            inner = self.expr()
            if self.peek()[1] != ")":
                self.error("unbalanced parentheses: expected ')'", (span[0], self.peek()[2][0]))
            close = self.take()[2]
            return _with_span(inner, (span[0], close[1]))
        if kind == "end":
            self.error("unexpected end of input", span)
        if text == ")":
            self.error("unbalanced parentheses: unmatched ')'", span)
        self.error(f"unexpected token {text!r}", span)


def _with_span(e, span):
    return e.__class__(**{**{k: getattr(e, k) for k in e.__dataclass_fields__}, "span": span})


def parse(source):
    """Parse an expression string into an AST; raise ParseError with a span."""
    if not isinstance(source, str):
        raise TypeError("expression source must be a string")
    return _Parser(source).parse()


# ------------------------------------------------------------------ printer

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(e):
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 5  # printed inside parentheses
    return _PREC.get(type(e), 5)


def _fmt_num(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e):
    """Print an AST so that parse(to_source(e)) == e."""
    if isinstance(e, Const):
        if math.copysign(1.0, e.value) < 0:
            return f"(-{_fmt_num(-e.value)})"
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"

    def wrap(sub, min_prec):
        s = to_source(sub)
        return s if _prec(sub) >= min_prec else f"({s})"

    if isinstance(e, Neg):
        if isinstance(e.arg, Const):
            return f"-({to_source(e.arg)})"
        return "-" + wrap(e.arg, 3)
    if isinstance(e, (Add, Sub)):
        op = " + " if isinstance(e, Add) else " - "
        return wrap(e.left, 1) + op + wrap(e.right, 2)
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        return wrap(e.left, 2) + op + wrap(e.right, 3)
    if isinstance(e, Pow):
        return wrap(e.base, 5) + "^" + wrap(e.exp, 3)
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------- folding constructors

def _is(e, v):
    return isinstance(e, Const) and e.value == v


def add(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return Add(a, b)


def sub(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return Sub(a, b)


def mul(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return Const(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return Mul(a, b)


def div(a, b):
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    if _is(a, 0):
        return Const(0.0)
    if _is(b, 1):
        return a
    return Div(a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, b):
    if _is(b, 0):
        return Const(1.0)
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and a.value > 0:
        return Const(a.value ** b.value)
    return Pow(a, b)


def call(fn, a):
    return Call(fn, a)


# ----------------------------------------------------------- differentiation

@lru_cache(maxsize=4096)
def diff(e, var):
    """Symbolic partial derivative of ``e`` with respect to variable ``var``."""
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.name == var else 0.0)
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Add):
        return add(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Sub):
        return sub(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Mul):
        return add(mul(diff(e.left, var), e.right), mul(e.left, diff(e.right, var)))
    if isinstance(e, Div):
        da, db = diff(e.left, var), diff(e.right, var)
        if _is(db, 0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, Const(2.0)))
    if isinstance(e, Pow):
        da, db = diff(e.base, var), diff(e.exp, var)
        if isinstance(e.exp, Const):
            n = e.exp.value
            return mul(mul(Const(n), power(e.base, Const(n - 1.0))), da)
        # d(a^b) = a^b (b' log a + b a'/a)
        term = add(mul(db, call("log", e.base)), div(mul(e.exp, da), e.base))
        return mul(e, term)
    if isinstance(e, Call):
        da = diff(e.arg, var)
        if _is(da, 0):
            return Const(0.0)
        a = e.arg
        if e.fn == "sqrt":
            inner = div(Const(0.5), e)
        elif e.fn == "sin":
            inner = call("cos", a)
        elif e.fn == "cos":
            inner = neg(call("sin", a))
        elif e.fn == "exp":
            inner = e
        elif e.fn == "log":
            inner = div(Const(1.0), a)
        else:
            raise ValueError(f"unknown function {e.fn}")
        return mul(inner, da)
    raise TypeError(f"not an expression node: {e!r}")


def variables(e):
    """Set of variable names appearing in ``e``."""
    if isinstance(e, Var):
        return {e.name}
    out = set()
    for name in e.__dataclass_fields__:
        sub_e = getattr(e, name)
        if isinstance(sub_e, Expr):
            out |= variables(sub_e)
    return out


def is_constant(e):
    return isinstance(e, Const)


# --------------------------------------------------------------- evaluation

def _where(e):
    return f" at {e.span[0]}:{e.span[1]}" if e.span else ""


def _check(bad, e, what):
    if np.any(bad):
        raise DomainError(f"{what} in {to_source(e)!r}{_where(e)}")


@lru_cache(maxsize=4096)
def compile_expr(e):
    """Compile an AST into a vectorized closure ``fn(coords) -> ndarray``.

    ``coords`` is a sequence of coordinate arrays indexed as x, y, z, w.
    """
    if isinstance(e, Const):
        v = e.value
        return lambda c: np.full(np.shape(c[0]), v)
    if isinstance(e, Var):
        idx = VARIABLES.index(e.name)

        def var_fn(c):
            if idx >= len(c):
                raise DomainError(f"variable {e.name!r} is not a coordinate of this model")
            return np.asarray(c[idx], dtype=float)
        return var_fn
    if isinstance(e, Neg):
        fa = compile_expr(e.arg)
        return lambda c: -fa(c)
    if isinstance(e, (Add, Sub, Mul)):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        op = {Add: np.add, Sub: np.subtract, Mul: np.multiply}[type(e)]
        return lambda c: op(fa(c), fb(c))
    if isinstance(e, Div):
        fa, fb = compile_expr(e.left), compile_expr(e.right)

        def div_fn(c):
            den = fb(c)
            _check(np.abs(den) < DIV_TOL, e, "division by ~0")
            return fa(c) / den
        return div_fn
    if isinstance(e, Pow):
        fa, fb = compile_expr(e.base), compile_expr(e.exp)
        int_exp = isinstance(e.exp, Const) and float(e.exp.value).is_integer()

        def pow_fn(c):
            a, b = fa(c), fb(c)
            if not int_exp:
                _check(a < 0, e, "negative base with non-integer exponent")
            _check((a == 0) & (b < 0), e, "zero raised to a negative power")
            return np.power(a, b)
        return pow_fn
    if isinstance(e, Call):
        fa = compile_expr(e.arg)
        if e.fn == "sqrt":
            def sqrt_fn(c):
                a = fa(c)
                _check(a < 0, e, "sqrt of negative")
                return np.sqrt(a)
            return sqrt_fn
        if e.fn == "log":
            def log_fn(c):
                a = fa(c)
                _check(a <= 0, e, "log of non-positive")
                return np.log(a)
            return log_fn
        ufunc = {"sin": np.sin, "cos": np.cos, "exp": np.exp}[e.fn]
        return lambda c: ufunc(fa(c))
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e, point):
    """Evaluate at a point (dim,) or a batch of points (n, dim)."""
    pts = np.asarray(point, dtype=float)
    coords = [pts[..., i] for i in range(pts.shape[-1])]
    return compile_expr(e)(coords)


@lru_cache(maxsize=1024)
def gradient_exprs(e, dim):
    return tuple(diff(e, v) for v in VARIABLES[:dim])


@lru_cache(maxsize=1024)
def hessian_exprs(e, dim):
    grad = gradient_exprs(e, dim)
    return tuple(tuple(diff(g, v) for v in VARIABLES[:dim]) for g in grad)


def derivatives(e, points, order=2):
    """Value, coordinate gradient and Hessian at a batch of points (n, dim)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = pts.shape
    coords = [pts[:, i] for i in range(dim)]
    val = compile_expr(e)(coords)
    grad = np.empty((n, dim))
    for i, g in enumerate(gradient_exprs(e, dim)):
        grad[:, i] = compile_expr(g)(coords)
    if order < 2:
        return val, grad, None
    hess = np.empty((n, dim, dim))
    for i, row in enumerate(hessian_exprs(e, dim)):
        for j, h in enumerate(row):
            hess[:, i, j] = compile_expr(h)(coords)
    return val, grad, hess


def eval_jet(e, model, p):
    """First and ordered second frame derivatives of ``e`` under ``model``."""
    from .contact_core import eval_jet as _eval_jet
    return _eval_jet(e, model, p)


def rotational(g_coeffs):
    """Defining function z - sum_i a_i r^i with r^2 = x^2 + y^2.

    The linear coefficient must vanish so the graph is smooth at the axis.
    """
    coeffs = [float(a) for a in g_coeffs]
    if len(coeffs) > 1 and coeffs[1] != 0.0:
        raise ValueError("rotational profile needs g'(0) = 0: the r^1 coefficient must be 0")
    r2 = Add(Pow(Var("x"), Const(2.0)), Pow(Var("y"), Const(2.0)))
    g = None
    for i, a in enumerate(coeffs):
        if a == 0.0:
            continue
        if i == 0:
            term = Const(a)
        else:
            base = r2 if i % 2 == 0 else Call("sqrt", r2)
            ex = i // 2 if i % 2 == 0 else i
            rpow = base if ex == 1 else Pow(base, Const(float(ex)))
            term = rpow if a == 1.0 else Mul(Const(a), rpow)
        g = term if g is None else Add(g, term)
    if g is None:
        return Var("z")
    return Sub(Var("z"), g)
