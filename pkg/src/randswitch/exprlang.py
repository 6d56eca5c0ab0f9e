"""Scalar expression mini-language for vector fields, Lyapunov functions and rates.

Grammar (precedence high to low)::

    atom   := number | 't' | 'x'K | func '(' expr ')' | '(' expr ')'
    power  := atom ('^' unary)?            right-associative
    unary  := '-' unary | power
    term   := unary (('*' | '/') unary)*
    expr   := term (('+' | '-') term)*

Functions: ``sin cos exp ln abs sqrt``. Angles are radians.

Parsed trees are immutable. Evaluation goes through a generated Python
function for speed; when that raises, the tree is re-walked to name the
offending sub-expression.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Call",
    "ExprSyntaxError", "ExprEvalError",
    "parse_expr", "eval_expr", "free_vars", "to_source", "compile_vector",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "abs", "sqrt")


class ExprSyntaxError(ValueError):
    """Raised for malformed source, unknown identifiers and out-of-range variables."""

    def __init__(self, message: str, source: str, offset: int):
        self.source = source
        self.offset = offset
        super().__init__(f"{message} at offset {offset} in {source!r}")


class ExprEvalError(ArithmeticError):
    """Raised when evaluation hits a domain error; ``subexpr`` is the failing node."""

    def __init__(self, message: str, subexpr: "Expr"):
        self.subexpr = subexpr
        super().__init__(f"{message} in '{to_source(subexpr)}'")


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str  # 't' or 'x1', 'x2', ...


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


# ------------------------------------------------------------------------ parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[start]!r}", source, start)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, dim: int):
        self.source = source
        self.dim = dim
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, offset: int | None = None):
        raise ExprSyntaxError(message, self.source, self.tok.offset if offset is None else offset)

    def expect(self, text: str):
        if self.tok.text != text or self.tok.kind != "op":
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        self.i += 1

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.i += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            if name == "t":
                return Var("t")
            m = re.fullmatch(r"x([1-9]\d*)", name)
            if m:
                k = int(m.group(1))
                if k > self.dim:
                    self.error(f"variable {name} exceeds dimension {self.dim}", tok.offset)
                return Var(name)
            self.error(f"unknown identifier {name!r}", tok.offset)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        self.error(f"unexpected {tok.text!r}" if tok.text else "unexpected end of input")


def parse_expr(source: str, dim: int) -> Expr:
    """Parse ``source`` into an expression over ``t`` and ``x1..x{dim}``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", source, 0)
    return _Parser(source, dim).parse()


# ------------------------------------------------------------------- inspection

def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return free_vars(e.operand)
    if isinstance(e, Call):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


def max_var_index(e: Expr) -> int:
    return max((int(v[1:]) for v in free_vars(e) if v != "t"), default=0)


def to_source(e: Expr) -> str:
    """Fully parenthesized source text that reparses to the same tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    return f"({to_source(e.left)} {e.op} {to_source(e.right)})"


# ------------------------------------------------------------------- evaluation

def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _pow(a: float, b: float) -> float:
    if a == 0.0 and b < 0.0:
        raise ZeroDivisionError("0 raised to a negative power")
    try:
        return math.pow(a, b)
    except OverflowError:
        if a < 0.0 and b == int(b) and int(b) % 2 == 1:
            return -math.inf
        return math.inf


def _ln(a: float) -> float:
    if not a > 0.0:
        raise ValueError("ln of non-positive value")
    return math.log(a)


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise ValueError("sqrt of negative value")
    return math.sqrt(a)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise ZeroDivisionError("division by zero")
    return a / b


_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin, "cos": math.cos, "exp": _exp, "ln": _ln, "abs": abs, "sqrt": _sqrt,
}
_NAMESPACE = {"_f_" + k: v for k, v in _FUNCS.items()} | {"_pow": _pow, "_div": _div, "inf": math.inf}


def _codegen(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_codegen(e.operand)})"
    if isinstance(e, Call):
        return f"_f_{e.func}({_codegen(e.arg)})"
    a, b = _codegen(e.left), _codegen(e.right)
    if e.op == "^":
        return f"_pow({a}, {b})"
    if e.op == "/":
        return f"_div({a}, {b})"
    return f"({a} {e.op} {b})"


def _interpret(e: Expr, t: float, x: Sequence[float]) -> float:
    """Slow tree walk; raises ExprEvalError naming the failing node."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return t if e.name == "t" else float(x[int(e.name[1:]) - 1])
    if isinstance(e, Neg):
        return -_interpret(e.operand, t, x)
    if isinstance(e, Call):
        a = _interpret(e.arg, t, x)
        try:
            return _FUNCS[e.func](a)
        except (ValueError, ZeroDivisionError) as exc:
            raise ExprEvalError(str(exc), e) from None
    a = _interpret(e.left, t, x)
    b = _interpret(e.right, t, x)
    try:
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return _div(a, b)
        return _pow(a, b)
    except (ValueError, ZeroDivisionError) as exc:
        raise ExprEvalError(str(exc), e) from None


def _compile(exprs: Sequence[Expr], dim: int) -> Callable:
    names = [f"x{k}" for k in range(1, dim + 1)]
    unpack = f"    {', '.join(names)}, = x[:{dim}]\n" if dim else ""
    body = ", ".join(_codegen(e) for e in exprs)
    src = f"def _generated(t, x):\n{unpack}    return ({body},)\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, "<exprlang>", "exec"), ns)
    return ns["_generated"]


_cache: dict[tuple, Callable] = {}


def _compiled(exprs: tuple[Expr, ...], dim: int) -> Callable:
    key = (exprs, dim)
    fn = _cache.get(key)
    if fn is None:
        fn = _cache[key] = _compile(exprs, dim)
    return fn


def eval_expr(e: Expr, t: float, x: Sequence[float] = ()) -> float:
    """Evaluate ``e`` at time ``t`` and state ``x`` in IEEE double precision."""
    dim = max_var_index(e)
    if len(x) < dim:
        raise ValueError(f"state has length {len(x)} but expression uses x{dim}")
    try:
        return _compiled((e,), dim)(float(t), x)[0]
    except (ValueError, ZeroDivisionError):
        return _interpret(e, float(t), x)


def compile_vector(exprs: Sequence[Expr], dim: int) -> Callable[[float, Sequence[float]], tuple]:
    """Return ``f(t, x) -> tuple`` evaluating every expression at once.

    Domain errors are re-raised as :class:`ExprEvalError`.
    """
    exprs = tuple(exprs)
    fast = _compiled(exprs, dim)

    def evaluate(t, x):
        try:
            return fast(t, x)
        except (ValueError, ZeroDivisionError):
            for e in exprs:
                _interpret(e, t, x)
            raise  # pragma: no cover - the fast and slow paths disagree

    return evaluate


def compile_scalar(e: Expr, dim: int) -> Callable[[float, Sequence[float]], float]:
    vec = compile_vector((e,), dim)
    return lambda t, x=(): vec(t, x)[0]
