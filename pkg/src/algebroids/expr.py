"""Immutable scalar expression trees over a coordinate chart.

Expressions are built from rational/float constants, chart coordinates,
sums, products, quotients, integer powers, negation and the elementary
functions sin, cos, exp, log.  They support exact symbolic partial
differentiation, floating point evaluation, constant folding and a
grammar-stable text form.

Coordinates are 1-indexed in the surface syntax (``x1``, ``x2``, ...)
and 0-indexed internally.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Chart",
    "Expr",
    "ExprError",
    "ParseError",
    "UnknownIdentifierError",
    "CoordinateRangeError",
    "EvalError",
    "PoleError",
    "DomainError",
    "const",
    "coord",
    "add",
    "sub",
    "mul",
    "div",
    "pow_int",
    "neg",
    "sin",
    "cos",
    "exp",
    "log",
    "fold",
    "differentiate",
    "evaluate",
    "gradient",
    "to_str",
    "parse",
    "substitute",
    "expr_equal",
    "ZERO",
    "ONE",
]

Number = Union[int, float, Fraction]

_POLE_TOL = 1e-12


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    """Syntax error; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    pass


class CoordinateRangeError(ParseError):
    pass


class EvalError(ExprError):
    """Evaluation failure; carries the offending subtree."""

    def __init__(self, message: str, subtree: "Expr"):
        super().__init__(f"{message} in subexpression '{to_str(subtree)}'")
        self.subtree = subtree


class PoleError(EvalError):
    pass


class DomainError(EvalError):
    pass


class Chart:
    """A coordinate chart: dimension, per-coordinate bounds, an optional
    excluded ball around the origin (for models living on the punctured
    space)."""

    __slots__ = ("dim", "bounds", "excluded_origin")

    def __init__(
        self,
        dim: int,
        bounds: Sequence[Sequence[float]] | None = None,
        excluded_origin: bool = False,
    ):
        if dim < 1:
            raise ValueError("chart dimension must be >= 1")
        if bounds is None:
            bounds = [(-1.0, 1.0)] * dim
        if len(bounds) != dim:
            raise ValueError("one bound pair per coordinate required")
        bd = []
        for lo, hi in bounds:
            lo, hi = float(lo), float(hi)
            if not lo < hi:
                raise ValueError(f"empty coordinate interval [{lo}, {hi}]")
            bd.append((lo, hi))
        self.dim = dim
        self.bounds = tuple(bd)
        self.excluded_origin = bool(excluded_origin)

    def contains(self, p: Sequence[float], pad: float = 0.0) -> bool:
        if len(p) != self.dim:
            return False
        for v, (lo, hi) in zip(p, self.bounds):
            if v < lo - pad or v > hi + pad:
                return False
        if self.excluded_origin and float(np.linalg.norm(p)) < 0.1:
            return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, Chart)
            and self.dim == other.dim
            and self.bounds == other.bounds
            and self.excluded_origin == other.excluded_origin
        )

    def __hash__(self):
        return hash((self.dim, self.bounds, self.excluded_origin))

    def __repr__(self):
        return f"Chart(dim={self.dim}, excluded_origin={self.excluded_origin})"


# Node tags.
_CONST = "const"
_COORD = "coord"
_ADD = "add"
_MUL = "mul"
_DIV = "div"
_POW = "pow"
_NEG = "neg"
_FUNCS = ("sin", "cos", "exp", "log")


class Expr:
    """Immutable expression node.

    Do not mutate; construct through the module-level helpers or
    operator overloading.  Structural equality and hashing are
    supported so expressions can key caches.
    """

    __slots__ = ("op", "args", "value", "index", "exponent", "_hash")

    def __init__(self, op, args=(), value=None, index=None, exponent=None):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", tuple(args))
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "exponent", exponent)
        object.__setattr__(
            self, "_hash", hash((op, self.args, value, index, exponent))
        )

    def __setattr__(self, *a):
        raise AttributeError("Expr is immutable")

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return (
            self._hash == other._hash
            and self.op == other.op
            and self.value == other.value
            and self.index == other.index
            and self.exponent == other.exponent
            and self.args == other.args
        )

    def __hash__(self):
        return self._hash

    # Arithmetic sugar; results are constant-folded.
    def __add__(self, other):
        return fold(add(self, _wrap(other)))

    def __radd__(self, other):
        return fold(add(_wrap(other), self))

    def __sub__(self, other):
        return fold(sub(self, _wrap(other)))

    def __rsub__(self, other):
        return fold(sub(_wrap(other), self))

    def __mul__(self, other):
        return fold(mul(self, _wrap(other)))

    def __rmul__(self, other):
        return fold(mul(_wrap(other), self))

    def __truediv__(self, other):
        return fold(div(self, _wrap(other)))

    def __rtruediv__(self, other):
        return fold(div(_wrap(other), self))

    def __pow__(self, n):
        return fold(pow_int(self, n))

    def __neg__(self):
        return fold(neg(self))

    def __repr__(self):
        return f"Expr({to_str(self)!r})"


def _wrap(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return const(v)
    if isinstance(v, float):
        return const(v)
    raise TypeError(f"cannot coerce {type(v).__name__} to Expr")


def const(v: Number) -> Expr:
    if isinstance(v, bool):
        raise TypeError("bool is not a number")
    if isinstance(v, int):
        v = Fraction(v)
    elif isinstance(v, float):
        if v == int(v) and abs(v) < 2**53:
            v = Fraction(int(v))
    elif not isinstance(v, Fraction):
        raise TypeError(f"bad constant type {type(v).__name__}")
    return Expr(_CONST, value=v)


def coord(i: int) -> Expr:
    if i < 0:
        raise ValueError("coordinate index must be >= 0")
    return Expr(_COORD, index=i)


def add(*terms) -> Expr:
    terms = tuple(_wrap(t) for t in terms)
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Expr(_ADD, terms)


def sub(a, b) -> Expr:
    return add(_wrap(a), neg(_wrap(b)))


def mul(*factors) -> Expr:
    factors = tuple(_wrap(f) for f in factors)
    if not factors:
        return ONE
    if len(factors) == 1:
        return factors[0]
    return Expr(_MUL, factors)


def div(num, den) -> Expr:
    return Expr(_DIV, (_wrap(num), _wrap(den)))


def pow_int(base, n: int) -> Expr:
    if not isinstance(n, int):
        raise TypeError("exponent must be an integer")
    return Expr(_POW, (_wrap(base),), exponent=n)


def neg(e) -> Expr:
    return Expr(_NEG, (_wrap(e),))


def sin(e) -> Expr:
    return Expr("sin", (_wrap(e),))


def cos(e) -> Expr:
    return Expr("cos", (_wrap(e),))


def exp(e) -> Expr:
    return Expr("exp", (_wrap(e),))


def log(e) -> Expr:
    return Expr("log", (_wrap(e),))


ZERO = const(0)
ONE = const(1)


def is_zero(e: Expr) -> bool:
    return e.op == _CONST and e.value == 0


def is_one(e: Expr) -> bool:
    return e.op == _CONST and e.value == 1


_fold_cache: dict[Expr, Expr] = {}


def fold(e: Expr) -> Expr:
    """Constant folding and neutral-element elimination.

    Idempotent: fold(fold(e)) is structurally equal to fold(e).  No
    canonical simplification beyond this is attempted.
    """
    cached = _fold_cache.get(e)
    if cached is not None:
        return cached
    out = _fold(e)
    _fold_cache[e] = out
    _fold_cache[out] = out
    return out


def _exact(v) -> bool:
    return isinstance(v, Fraction)


def _fold(e: Expr) -> Expr:
    op = e.op
    if op in (_CONST, _COORD):
        return e
    args = tuple(fold(a) for a in e.args)

    if op == _ADD:
        flat = []
        acc = Fraction(0)
        acc_float = 0.0
        any_float = False
        for a in args:
            sub_terms = a.args if a.op == _ADD else (a,)
            for t in sub_terms:
                if t.op == _CONST:
                    if _exact(t.value):
                        acc += t.value
                    else:
                        any_float = True
                        acc_float += t.value
                else:
                    flat.append(t)
        if any_float:
            c = float(acc) + acc_float
            if c != 0.0:
                flat.append(const(c))
        elif acc != 0:
            flat.append(const(acc))
        if not flat:
            return ZERO
        if len(flat) == 1:
            return flat[0]
        return Expr(_ADD, tuple(flat))

    if op == _MUL:
        flat = []
        acc = Fraction(1)
        acc_float = 1.0
        any_float = False
        for a in args:
            sub_factors = a.args if a.op == _MUL else (a,)
            for f in sub_factors:
                if f.op == _CONST:
                    if _exact(f.value):
                        acc *= f.value
                    else:
                        any_float = True
                        acc_float *= f.value
                else:
                    flat.append(f)
        if (not any_float and acc == 0) or (any_float and float(acc) * acc_float == 0.0):
            return ZERO
        if any_float:
            c = float(acc) * acc_float
            if c != 1.0:
                flat.insert(0, const(c))
        elif acc != 1:
            flat.insert(0, const(acc))
        if not flat:
            return ONE
        if len(flat) == 1:
            return flat[0]
        return Expr(_MUL, tuple(flat))

    if op == _DIV:
        num, den = args
        if is_zero(num):
            return ZERO
        if is_one(den):
            return num
        if num.op == _CONST and den.op == _CONST:
            if _exact(num.value) and _exact(den.value) and den.value != 0:
                return const(num.value / den.value)
            if den.value != 0:
                return const(float(num.value) / float(den.value))
        return Expr(_DIV, (num, den))

    if op == _POW:
        (base,) = args
        n = e.exponent
        if n == 0:
            return ONE
        if n == 1:
            return base
        if base.op == _CONST:
            v = base.value
            if _exact(v):
                if v == 0 and n < 0:
                    return Expr(_POW, (base,), exponent=n)
                return const(v**n)
            return const(float(v) ** n)
        return Expr(_POW, (base,), exponent=n)

    if op == _NEG:
        (a,) = args
        if a.op == _CONST:
            return const(-a.value)
        if a.op == _NEG:
            return a.args[0]
        return Expr(_NEG, (a,))

    if op in _FUNCS:
        (a,) = args
        if a.op == _CONST and _exact(a.value):
            if op == "sin" and a.value == 0:
                return ZERO
            if op == "cos" and a.value == 0:
                return ONE
            if op == "exp" and a.value == 0:
                return ONE
            if op == "log" and a.value == 1:
                return ZERO
        return Expr(op, (a,))

    raise ValueError(f"unknown node {op!r}")


_diff_cache: dict[tuple[Expr, int], Expr] = {}


def differentiate(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to coordinate ``i``
    (0-indexed), constant-folded."""
    if i < 0:
        raise ValueError("coordinate index must be >= 0")
    key = (e, i)
    cached = _diff_cache.get(key)
    if cached is not None:
        return cached
    out = fold(_diff(e, i))
    _diff_cache[key] = out
    return out


def _diff(e: Expr, i: int) -> Expr:
    op = e.op
    if op == _CONST:
        return ZERO
    if op == _COORD:
        return ONE if e.index == i else ZERO
    if op == _ADD:
        return add(*(differentiate(a, i) for a in e.args))
    if op == _MUL:
        terms = []
        for k, a in enumerate(e.args):
            da = differentiate(a, i)
            if is_zero(da):
                continue
            factors = list(e.args)
            factors[k] = da
            terms.append(mul(*factors))
        return add(*terms) if terms else ZERO
    if op == _DIV:
        u, v = e.args
        du, dv = differentiate(u, i), differentiate(v, i)
        return sub(div(du, v), div(mul(u, dv), pow_int(v, 2)))
    if op == _POW:
        (b,) = e.args
        n = e.exponent
        db = differentiate(b, i)
        if is_zero(db):
            return ZERO
        return mul(const(n), pow_int(b, n - 1), db)
    if op == _NEG:
        return neg(differentiate(e.args[0], i))
    if op == "sin":
        return mul(cos(e.args[0]), differentiate(e.args[0], i))
    if op == "cos":
        return neg(mul(sin(e.args[0]), differentiate(e.args[0], i)))
    if op == "exp":
        return mul(e, differentiate(e.args[0], i))
    if op == "log":
        return div(differentiate(e.args[0], i), e.args[0])
    raise ValueError(f"unknown node {op!r}")


def evaluate(e: Expr, p: Sequence[float]) -> float:
    """Evaluate at a point (sequence of chart.dim floats).

    Raises PoleError for division by a near-zero denominator and
    DomainError for log of a nonpositive argument, each reporting the
    offending subtree.
    """
    op = e.op
    if op == _CONST:
        return float(e.value)
    if op == _COORD:
        return float(p[e.index])
    if op == _ADD:
        return math.fsum(evaluate(a, p) for a in e.args)
    if op == _MUL:
        r = 1.0
        for a in e.args:
            r *= evaluate(a, p)
        return r
    if op == _DIV:
        den = evaluate(e.args[1], p)
        if abs(den) < _POLE_TOL:
            raise PoleError("division by (near-)zero", e)
        return evaluate(e.args[0], p) / den
    if op == _POW:
        b = evaluate(e.args[0], p)
        if e.exponent < 0 and abs(b) < _POLE_TOL:
            raise PoleError("negative power of (near-)zero", e)
        return b**e.exponent
    if op == _NEG:
        return -evaluate(e.args[0], p)
    if op == "sin":
        return math.sin(evaluate(e.args[0], p))
    if op == "cos":
        return math.cos(evaluate(e.args[0], p))
    if op == "exp":
        a = evaluate(e.args[0], p)
        if a > 700.0:
            raise DomainError("exp overflow", e)
        return math.exp(a)
    if op == "log":
        a = evaluate(e.args[0], p)
        if a <= 0.0:
            raise DomainError("log of nonpositive argument", e)
        return math.log(a)
    raise ValueError(f"unknown node {op!r}")


def gradient(e: Expr, dim: int) -> tuple[Expr, ...]:
    return tuple(differentiate(e, i) for i in range(dim))


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace coordinate nodes by expressions; indices not in the
    mapping are kept as-is.  Result is folded."""
    def rec(x: Expr) -> Expr:
        if x.op == _COORD:
            return mapping.get(x.index, x)
        if x.op in (_CONST,):
            return x
        new_args = tuple(rec(a) for a in x.args)
        if new_args == x.args:
            return x
        return Expr(x.op, new_args, value=x.value, index=x.index, exponent=x.exponent)

    return fold(rec(e))


# Printing.  Precedence levels: add < mul/div < pow < atom.
_P_ADD, _P_MUL, _P_POW, _P_ATOM = 1, 2, 3, 4


def to_str(e: Expr) -> str:
    return _render(e, _P_ADD)


def _render(e: Expr, ctx: int) -> str:
    op = e.op
    if op == _CONST:
        v = e.value
        if isinstance(v, Fraction):
            s = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
        else:
            s = repr(v)
        if (v < 0 or "/" in s) and ctx > _P_ADD:
            return f"({s})"
        if v < 0 and ctx > _P_ADD:
            return f"({s})"
        return s
    if op == _COORD:
        return f"x{e.index + 1}"
    if op == _ADD:
        parts = [_render(e.args[0], _P_ADD + 0)]
        for t in e.args[1:]:
            if t.op == _NEG:
                parts.append(" - " + _render(t.args[0], _P_MUL))
            elif t.op == _CONST and t.value < 0:
                parts.append(" - " + _render(const(-t.value), _P_MUL))
            else:
                parts.append(" + " + _render(t, _P_MUL))
        s = "".join(parts)
        return f"({s})" if ctx > _P_ADD else s
    if op == _MUL:
        s = "*".join(_render(a, _P_MUL + 1) if a.op in (_ADD, _DIV) else _render(a, _P_MUL) for a in e.args)
        return f"({s})" if ctx > _P_MUL else s
    if op == _DIV:
        num = _render(e.args[0], _P_MUL + 1) if e.args[0].op in (_ADD, _DIV) else _render(e.args[0], _P_MUL)
        den = _render(e.args[1], _P_POW) if e.args[1].op in (_ADD, _MUL, _DIV, _NEG) else _render(e.args[1], _P_POW)
        s = f"{num}/{den}"
        return f"({s})" if ctx > _P_MUL else s
    if op == _POW:
        b = _render(e.args[0], _P_ATOM)
        s = f"{b}^{e.exponent}"
        return f"({s})" if ctx > _P_POW else s
    if op == _NEG:
        inner = _render(e.args[0], _P_ATOM)
        s = f"-{inner}"
        return f"({s})" if ctx > _P_ADD else s
    if op in _FUNCS:
        return f"{op}({_render(e.args[0], _P_ADD)})"
    raise ValueError(f"unknown node {op!r}")


# Tokenizer / recursive-descent parser for the surface grammar:
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := base ('^' integer)?
#   base   := number | ident | '(' expr ')' | func '(' expr ')' | '-' base
#   func in {sin, cos, exp, log}; ident matches x[1-9][0-9]*
# The integer after '^' may carry a sign.

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_COORD_RE = re.compile(r"^x[1-9][0-9]*$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            off = n - len(stripped)
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", off)
        off = m.start("num") if m.group("num") else (m.start("ident") if m.group("ident") else m.start("op"))
        if m.group("num"):
            txt = m.group("num")
            if any(c in txt for c in ".eE"):
                tokens.append(("num", float(txt), off))
            else:
                tokens.append(("num", Fraction(int(txt)), off))
        elif m.group("ident"):
            tokens.append(("ident", m.group("ident"), off))
        else:
            tokens.append(("op", m.group("op"), off))
        pos = m.end()
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text: str, chart: Chart):
        self.text = text
        self.chart = chart
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect_op(self, symbol: str):
        kind, val, off = self.peek()
        if kind != "op" or val != symbol:
            raise ParseError(f"expected {symbol!r}", off)
        return self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.parse_term()
                node = add(node, rhs) if val == "+" else sub(node, rhs)
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.parse_factor()
                node = mul(node, rhs) if val == "*" else div(node, rhs)
            else:
                return node

    def parse_factor(self) -> Expr:
        base = self.parse_base()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            sign = 1
            kind, val, off = self.peek()
            if kind == "op" and val == "-":
                self.advance()
                sign = -1
                kind, val, off = self.peek()
            if kind != "num" or not isinstance(val, Fraction) or val.denominator != 1:
                raise ParseError("expected integer exponent", off)
            self.advance()
            return pow_int(base, sign * int(val))
        return base

    def parse_base(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return const(val)
        if kind == "op" and val == "-":
            self.i -= 1
            self.advance()
            return neg(self.parse_base())
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Expr(val, (arg,))
            if _COORD_RE.match(val):
                idx = int(val[1:])
                if idx > self.chart.dim:
                    raise CoordinateRangeError(
                        f"coordinate {val} out of range for chart of dimension {self.chart.dim}",
                        off,
                    )
                return coord(idx - 1)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off)
        raise ParseError("expected number, identifier or '('", off)


def parse(text: str, chart: Chart) -> Expr:
    """Parse ``text`` against the surface grammar, folding the result."""
    p = _Parser(text, chart)
    node = p.parse_expr()
    kind, _, off = p.peek()
    if kind != "end":
        raise ParseError("trailing input", off)
    return fold(node)


def expr_equal(
    a: Expr,
    b: Expr,
    chart: Chart,
    tol: float = 1e-10,
    n_points: int = 32,
    seed: int = 7,
) -> bool:
    """Probabilistic expression equality: evaluate both sides on random
    chart points and compare within ``tol``.  Points at which either
    side fails to evaluate (poles) are resampled."""
    rng = np.random.default_rng(seed)
    checked = 0
    attempts = 0
    while checked < n_points:
        attempts += 1
        if attempts > 50 * n_points:
            raise EvalError("could not find enough pole-free sample points", a)
        p = _sample_point(chart, rng)
        try:
            va = evaluate(a, p)
            vb = evaluate(b, p)
        except EvalError:
            continue
        if abs(va - vb) > tol * (1.0 + max(abs(va), abs(vb))):
            return False
        checked += 1
    return True


def _sample_point(chart: Chart, rng: np.random.Generator) -> np.ndarray:
    for _ in range(10000):
        p = np.array(
            [rng.uniform(lo, hi) for lo, hi in chart.bounds], dtype=float
        )
        if chart.excluded_origin and float(np.linalg.norm(p)) < 0.1:
            continue
        return p
    raise ValueError(
        "could not sample a chart point outside the excluded ball; "
        "the bounds may lie entirely inside it"
    )
