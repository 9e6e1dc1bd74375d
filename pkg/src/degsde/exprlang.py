"""Tiny expression language for declaring coefficient fields in config files.

Grammar (lowest to highest precedence)::

    expr     := sum (cmp sum)?          cmp in  <  <=  >  >=  ==
    sum      := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | power
    power    := atom ("^" atom)*        left-associative: 2^3^2 == (2^3)^2 == 64
    atom     := number | x[i] | name "(" args ")" | "(" expr ")"

Available calls: abs, sqrt, exp, log, step (one argument), pow, min, max
(two arguments), norm(x) (Euclidean norm of the point) and if(cond, a, b).
Comparisons evaluate to 1.0 or 0.0; ``if`` takes ``a`` when ``cond != 0``.
``step(t)`` is 1 for ``t >= 0`` and 0 otherwise.

Numbers in an AST are always non-negative; a leading minus is a ``Neg`` node.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .coeff import ScalarField
from .errors import ArityError, DomainError, ExprSyntaxError, IndexOutOfRange

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Norm:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Compare:
    op: str  # one of < <= > >= ==
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class If:
    cond: "Node"
    then: "Node"
    other: "Node"


Node = Union[Num, Var, Norm, Neg, BinOp, Compare, Call, If]

ARITY = {"abs": 1, "sqrt": 1, "exp": 1, "log": 1, "step": 1, "pow": 2, "min": 2, "max": 2}
COMPARISONS = ("<=", ">=", "==", "<", ">")

# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|[-+*/^(),<>\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int  # byte offset


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, text, byte_pos))
        pos = m.end()
        byte_pos += len(text.encode("utf-8"))
    toks.append(_Tok("end", "", byte_pos))
    return toks


class _Parser:
    def __init__(self, source: str, d: int):
        self.toks = _tokenize(source)
        self.i = 0
        self.d = d

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        left = self.sum()
        if self.tok.text in COMPARISONS:
            op = self.advance().text
            left = Compare(op, left, self.sum())
            if self.tok.text in COMPARISONS:
                raise ExprSyntaxError("chained comparisons are not allowed", self.tok.offset)
        return left

    def sum(self) -> Node:
        left = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Node:
        left = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Node:
        if self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        left = self.atom()
        while self.tok.text == "^":
            self.advance()
            # a signed exponent such as 2^-1 is accepted
            right = Neg(self.unary()) if self._eat("-") else self.atom()
            left = BinOp("^", left, right)
        return left

    def _eat(self, text: str) -> bool:
        if self.tok.text == text:
            self.advance()
            return True
        return False

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "name":
            self.advance()
            if t.text == "x":
                self.expect("[")
                idx = self.tok
                if idx.kind != "num" or not idx.text.isdigit():
                    raise ExprSyntaxError("coordinate index must be a non-negative integer", idx.offset)
                self.advance()
                self.expect("]")
                i = int(idx.text)
                if i >= self.d:
                    raise IndexOutOfRange(f"x[{i}] out of range for dimension {self.d} (at byte {idx.offset})")
                return Var(i)
            return self.call(t)
        raise ExprSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.offset)

    def call(self, name_tok: _Tok) -> Node:
        name = name_tok.text
        self.expect("(")
        if name == "norm":
            arg = self.tok
            if arg.text != "x":
                raise ArityError(f"norm takes the point 'x' as its only argument (at byte {arg.offset})")
            self.advance()
            self.expect(")")
            return Norm()
        if name != "if" and name not in ARITY:
            raise ExprSyntaxError(f"unknown function {name!r}", name_tok.offset)
        args = []
        if self.tok.text != ")":
            args.append(self.expr())
            while self._eat(","):
                args.append(self.expr())
        self.expect(")")
        want = 3 if name == "if" else ARITY[name]
        if len(args) != want:
            raise ArityError(f"{name} expects {want} argument(s), got {len(args)} (at byte {name_tok.offset})")
        if name == "if":
            return If(*args)
        return Call(name, tuple(args))


def parse(source: str, d: int) -> Node:
    """Parse ``source`` into an AST for points in ``R^d``."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, d).parse()


def to_source(node: Node) -> str:
    """Print an AST back to source. Every operator is parenthesized."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x[{node.index}]"
    if isinstance(node, Norm):
        return "norm(x)"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, (BinOp, Compare)):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, If):
        return f"if({to_source(node.cond)}, {to_source(node.then)}, {to_source(node.other)})"
    raise TypeError(f"not an AST node: {node!r}")


def max_index(node: Node) -> int:
    """Largest coordinate index referenced, or -1 when none is."""
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Norm):
        return 0
    return max((max_index(c) for c in _children(node)), default=-1)


def _children(node: Node) -> tuple:
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare)):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    if isinstance(node, If):
        return (node.cond, node.then, node.other)
    return ()


def is_constant(node: Node) -> bool:
    return max_index(node) < 0


# ---------------------------------------------------------------------------
# Scalar semantics shared by the interpreter and the compiled point path


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _pow(a: float, b: float) -> float:
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power")
    try:
        return math.pow(a, b)
    except (ValueError, OverflowError) as exc:
        raise DomainError(f"pow({a!r}, {b!r}): {exc}") from None


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError("sqrt of a negative value")
    return math.sqrt(a)


def _log(a: float) -> float:
    if a <= 0.0:
        raise DomainError("log of a non-positive value")
    return math.log(a)


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        raise DomainError(f"exp({a!r}) overflows") from None


_SCALAR_CALLS: dict[str, Callable] = {
    "abs": abs,
    "sqrt": _sqrt,
    "exp": _exp,
    "log": _log,
    "step": lambda t: 1.0 if t >= 0.0 else 0.0,
    "pow": _pow,
    "min": min,
    "max": max,
}

_SCALAR_BINOPS: dict[str, Callable] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}

_SCALAR_CMP: dict[str, Callable] = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


def _norm(x) -> float:
    s = 0.0
    for v in x:
        s = s + v * v
    return math.sqrt(s)


def interpret(node: Node, x) -> float:
    """Reference tree-walking interpreter at a single point."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index])
    if isinstance(node, Norm):
        return _norm([float(v) for v in x])
    if isinstance(node, Neg):
        return -interpret(node.operand, x)
    if isinstance(node, BinOp):
        return _SCALAR_BINOPS[node.op](interpret(node.left, x), interpret(node.right, x))
    if isinstance(node, Compare):
        return 1.0 if _SCALAR_CMP[node.op](interpret(node.left, x), interpret(node.right, x)) else 0.0
    if isinstance(node, Call):
        return float(_SCALAR_CALLS[node.name](*(interpret(a, x) for a in node.args)))
    if isinstance(node, If):
        if interpret(node.cond, x) != 0.0:
            return interpret(node.then, x)
        return interpret(node.other, x)
    raise TypeError(f"not an AST node: {node!r}")


def _compile_point(node: Node) -> Callable:
    """Closure tree over plain floats, same operation order as :func:`interpret`."""
    if isinstance(node, Num):
        v = node.value
        return lambda x: v
    if isinstance(node, Var):
        i = node.index
        return lambda x: x[i]
    if isinstance(node, Norm):
        return _norm
    if isinstance(node, Neg):
        f = _compile_point(node.operand)
        return lambda x: -f(x)
    if isinstance(node, BinOp):
        op, fl, fr = _SCALAR_BINOPS[node.op], _compile_point(node.left), _compile_point(node.right)
        return lambda x: op(fl(x), fr(x))
    if isinstance(node, Compare):
        op, fl, fr = _SCALAR_CMP[node.op], _compile_point(node.left), _compile_point(node.right)
        return lambda x: 1.0 if op(fl(x), fr(x)) else 0.0
    if isinstance(node, Call):
        fn = _SCALAR_CALLS[node.name]
        fs = [_compile_point(a) for a in node.args]
        if len(fs) == 1:
            f0 = fs[0]
            return lambda x: float(fn(f0(x)))
        f0, f1 = fs
        return lambda x: float(fn(f0(x), f1(x)))
    if isinstance(node, If):
        fc, ft, fo = _compile_point(node.cond), _compile_point(node.then), _compile_point(node.other)
        return lambda x: ft(x) if fc(x) != 0.0 else fo(x)
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Vectorized semantics over batches of points, shape (n, d) -> (n,)


def _vdiv(a, b):
    if np.any(b == 0.0):
        raise DomainError("division by zero")
    return a / b


def _vpow(a, b):
    if np.any((a == 0.0) & (b < 0.0)):
        raise DomainError("zero raised to a negative power")
    if np.any((a < 0.0) & (b != np.floor(b))):
        raise DomainError("negative base with non-integer exponent")
    out = np.power(a, b)
    if not np.all(np.isfinite(out)):
        raise DomainError("pow overflows")
    return out


def _vsqrt(a):
    if np.any(a < 0.0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(a)


def _vlog(a):
    if np.any(a <= 0.0):
        raise DomainError("log of a non-positive value")
    return np.log(a)


def _vexp(a):
    out = np.exp(a)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflows")
    return out


_VEC_CALLS: dict[str, Callable] = {
    "abs": np.abs,
    "sqrt": _vsqrt,
    "exp": _vexp,
    "log": _vlog,
    "step": lambda t: np.where(t >= 0.0, 1.0, 0.0),
    "pow": _vpow,
    "min": np.minimum,
    "max": np.maximum,
}

_VEC_BINOPS: dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _vdiv,
    "^": _vpow,
}

_VEC_CMP: dict[str, Callable] = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "==": np.equal,
}


def _vnorm(X):
    s = np.zeros(X.shape[0])
    for i in range(X.shape[1]):
        s = s + X[:, i] * X[:, i]
    return np.sqrt(s)


def _compile_vec(node: Node) -> Callable:
    if isinstance(node, Num):
        v = node.value
        return lambda X: np.full(X.shape[0], v)
    if isinstance(node, Var):
        i = node.index
        return lambda X: X[:, i].astype(float)
    if isinstance(node, Norm):
        return _vnorm
    if isinstance(node, Neg):
        f = _compile_vec(node.operand)
        return lambda X: -f(X)
    if isinstance(node, BinOp):
        op, fl, fr = _VEC_BINOPS[node.op], _compile_vec(node.left), _compile_vec(node.right)
        return lambda X: op(fl(X), fr(X))
    if isinstance(node, Compare):
        op, fl, fr = _VEC_CMP[node.op], _compile_vec(node.left), _compile_vec(node.right)
        return lambda X: np.where(op(fl(X), fr(X)), 1.0, 0.0)
    if isinstance(node, Call):
        fn = _VEC_CALLS[node.name]
        fs = [_compile_vec(a) for a in node.args]
        return lambda X: fn(*(f(X) for f in fs))
    if isinstance(node, If):
        fc, ft, fo = _compile_vec(node.cond), _compile_vec(node.then), _compile_vec(node.other)

        def branch(X):
            # untaken branches are never evaluated, so they cannot raise
            take = fc(X) != 0.0
            out = np.empty(X.shape[0])
            if take.any():
                out[take] = ft(X[take])
            if not take.all():
                out[~take] = fo(X[~take])
            return out

        return branch
    raise TypeError(f"not an AST node: {node!r}")


def compile(ast: Node, d: int, source: str | None = None) -> ScalarField:  # noqa: A001
    """Compile an AST into a :class:`ScalarField` on ``R^d``.

    Single points go through a float closure tree that performs exactly the
    operations of :func:`interpret`; batches use numpy.
    """
    if max_index(ast) >= d:
        raise IndexOutOfRange(f"expression references x[{max_index(ast)}] but d = {d}")
    point = _compile_point(ast)
    vec = _compile_vec(ast)

    def point_fn(x):
        with np.errstate(all="ignore"):
            v = point([float(c) for c in x])
        if not math.isfinite(v):
            raise DomainError(f"non-finite value {v!r}")
        return v

    def batch_fn(X):
        with np.errstate(all="ignore"):
            v = vec(X)
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite value")
        return v

    const = point_fn(np.zeros(d)) if is_constant(ast) else None
    return ScalarField(
        dim=d,
        fn=batch_fn,
        point_fn=point_fn,
        constant=const,
        label=source if source is not None else to_source(ast),
    )


def field(source: str, d: int) -> ScalarField:
    """Parse and compile in one step."""
    return compile(parse(source, d), d, source)
