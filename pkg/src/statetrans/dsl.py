"""Rate expressions: tokenizer, recursive-descent parser, printer, evaluator.

Grammar (whitespace-insensitive, ``#`` starts a comment)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | NAME | NAME "(" [expr ("," expr)*] ")" | "(" expr ")"

Values are scalars, length-M vectors or M x M matrices.  Compartment
names and ``sumstate`` (per-stratum total) are vectors, ``t`` and
parameters are scalars, named arrays keep their own shape.  Scalars
broadcast; matrices only combine with scalars, other matrices, or as the
first argument of ``matvec``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EvalError, ParseError, UnknownIdentifierError

FUNCTIONS = {"exp": 1, "log": 1, "pow": 2, "sum": 1, "matvec": 2}
RESERVED = frozenset({"t", "sumstate"} | set(FUNCTIONS))

SCALAR, VECTOR, MATRIX = "scalar", "vector", "matrix"


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float
    pos: tuple = field(default=(1, 1), compare=False, repr=False)


@dataclass(frozen=True)
class Name:
    id: str
    pos: tuple = field(default=(1, 1), compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object
    pos: tuple = field(default=(1, 1), compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: tuple = field(default=(1, 1), compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: tuple = field(default=(1, 1), compare=False, repr=False)


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str, line: int = 1, column: int = 1) -> list[Token]:
    """Split ``text`` into tokens; ``line``/``column`` give the origin of ``text``."""
    out = []
    pos = 0
    line_start = 0
    base = column
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = base + pos - line_start
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
            base = 1
        elif kind not in ("ws", "comment"):
            out.append(Token(kind, m.group(), line, col))
        pos = m.end()
    out.append(Token("eof", "", line, base + len(text) - line_start))
    return out


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, expected=()):
        tok = self.tok
        what = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"{message}, found {what}", tok.line, tok.column, expected)

    def expect_op(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            return self.advance()
        self.error(f"expected '{text}'", (repr(text),))

    def parse(self):
        node = self.expr()
        if self.tok.kind != "eof":
            self.error("unexpected token", ("operator", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance()
            node = BinOp(op.text, node, self.term(), (op.line, op.column))
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance()
            node = BinOp(op.text, node, self.unary(), (op.line, op.column))
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            op = self.advance()
            return Unary("-", self.unary(), (op.line, op.column))
        return self.primary()

    def primary(self):
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text), (tok.line, tok.column))
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                self.advance()
                args = []
                if not (self.tok.kind == "op" and self.tok.text == ")"):
                    args.append(self.expr())
                    while self.tok.kind == "op" and self.tok.text == ",":
                        self.advance()
                        args.append(self.expr())
                self.expect_op(")")
                return Call(tok.text, tuple(args), (tok.line, tok.column))
            return Name(tok.text, (tok.line, tok.column))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        self.error("expected an operand", ("number", "identifier", "'('", "'-'"))


def parse_expression(text: str, line: int = 1, column: int = 1):
    """Parse a rate expression into an AST.

    >>> parse_expression("gamma")
    Name(id='gamma')
    """
    return _Parser(tokenize(text, line, column)).parse()


# --- printing and inspection -----------------------------------------------

def format_expr(node) -> str:
    """Source text that reparses to an equal AST (binary ops fully parenthesized)."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Unary):
        return f"-{format_expr(node.operand)}"
    if isinstance(node, BinOp):
        return f"({format_expr(node.left)} {node.op} {format_expr(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(format_expr(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def walk(node):
    yield node
    if isinstance(node, Unary):
        yield from walk(node.operand)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def identifiers(node) -> set[str]:
    return {n.id for n in walk(node) if isinstance(n, Name)}


def check_calls(node):
    """Reject unknown functions and wrong argument counts."""
    for n in walk(node):
        if isinstance(n, Call):
            if n.func not in FUNCTIONS:
                raise UnknownIdentifierError(n.func, *n.pos)
            if len(n.args) != FUNCTIONS[n.func]:
                raise ParseError(
                    f"{n.func}() takes {FUNCTIONS[n.func]} argument(s), got {len(n.args)}", *n.pos
                )


def resolve(node, names: Mapping[str, str]):
    """Check every identifier is ``t``, ``sumstate`` or a key of ``names``.

    ``names`` maps identifier to its kind (``scalar``/``vector``/``matrix``).
    """
    check_calls(node)
    for n in walk(node):
        if isinstance(n, Name) and n.id not in ("t", "sumstate") and n.id not in names:
            raise UnknownIdentifierError(n.id, *n.pos)


def _combine(a, b, what, pos):
    if a == b:
        return a
    if SCALAR in (a, b):
        return a if b == SCALAR else b
    raise EvalError(f"line {pos[0]}, column {pos[1]}: cannot combine {a} and {b} in {what}")


def infer_type(node, kinds: Mapping[str, str]) -> str:
    """Static shape kind of ``node``; raises :class:`EvalError` on a mismatch."""
    if isinstance(node, Num):
        return SCALAR
    if isinstance(node, Name):
        if node.id == "t":
            return SCALAR
        if node.id == "sumstate":
            return VECTOR
        if node.id not in kinds:
            raise UnknownIdentifierError(node.id, *node.pos)
        return kinds[node.id]
    if isinstance(node, Unary):
        return infer_type(node.operand, kinds)
    if isinstance(node, BinOp):
        return _combine(infer_type(node.left, kinds), infer_type(node.right, kinds), f"'{node.op}'", node.pos)
    if isinstance(node, Call):
        check_calls(node)
        args = [infer_type(a, kinds) for a in node.args]
        if node.func in ("exp", "log"):
            return args[0]
        if node.func == "pow":
            return _combine(args[0], args[1], "pow()", node.pos)
        if node.func == "sum":
            return SCALAR
        if node.func == "matvec":
            if args != [MATRIX, VECTOR]:
                raise EvalError(
                    f"line {node.pos[0]}, column {node.pos[1]}: matvec needs (matrix, vector), got ({args[0]}, {args[1]})"
                )
            return VECTOR
    raise TypeError(f"not an expression node: {node!r}")


def kind_of(value) -> str:
    nd = np.ndim(value)
    return (SCALAR, VECTOR, MATRIX)[nd] if nd <= 2 else "array"


# --- compilation -----------------------------------------------------------

Compiled = Callable[[float, np.ndarray, Mapping, Mapping], object]


def _lookup(p, a, name, pos):
    if name in p:
        return np.float64(p[name])
    try:
        return a[name]
    except KeyError:
        raise UnknownIdentifierError(name, *pos) from None


def _batch_sum(v):
    v = np.asarray(v)
    return v.sum(axis=-1, keepdims=True) if v.ndim == 2 else v


def _source(n, index, batched, consts):
    """Python source for ``n``; literals and positions go into ``consts``."""
    if isinstance(n, Num):
        consts.append(np.float64(n.value))
        return f"_c[{len(consts) - 1}]"
    if isinstance(n, Name):
        if n.id == "t":
            return "_f64(t)"
        if n.id == "sumstate":
            return "_s"
        if n.id in index:
            return f"x[..., {index[n.id]}]"
        consts.append((n.id, n.pos))
        k = len(consts) - 1
        return f"_lookup(p, a, _c[{k}][0], _c[{k}][1])"
    if isinstance(n, Unary):
        return f"(-{_source(n.operand, index, batched, consts)})"
    if isinstance(n, BinOp):
        left = _source(n.left, index, batched, consts)
        right = _source(n.right, index, batched, consts)
        return f"({left} {n.op} {right})"
    if isinstance(n, Call):
        check_calls(n)
        args = [_source(arg, index, batched, consts) for arg in n.args]
        if n.func in ("exp", "log"):
            return f"_np.{n.func}({args[0]})"
        if n.func == "pow":
            return f"_np.power({args[0]}, {args[1]})"
        if n.func == "sum":
            return f"_batch_sum({args[0]})" if batched else f"_f64(_np.sum({args[0]}))"
        if n.func == "matvec":
            if batched:
                return f"_np.matmul({args[1]}, _np.transpose({args[0]}))"
            return f"_np.matmul({args[0]}, {args[1]})"
    raise TypeError(f"not an expression node: {n!r}")


def compile_expr(node, compartments: Sequence[str] = (), batched: bool = False) -> Compiled:
    """Turn an AST into a function ``f(t, state, params, arrays)``.

    The AST is translated to a single Python expression over numpy
    operations (only node types produced by the parser are accepted, so
    no user text reaches the code generator).  Compartment references
    become column slices of ``state``; any other name is looked up in
    ``params`` first, then ``arrays``.  Numpy floating point warnings are
    not suppressed here; see :func:`evaluate`.

    With ``batched=True`` the function takes a stack of states
    ``(n, M, X)`` and times of shape ``(n, 1)`` and returns values
    broadcastable to ``(n, M)``.
    """
    index = {c: j for j, c in enumerate(compartments)}
    consts = []
    body = _source(node, index, batched, consts)
    env = {"_np": np, "_f64": np.float64, "_lookup": _lookup, "_batch_sum": _batch_sum, "_c": tuple(consts),
           "_total": np.add.reduce}
    if "_s" in body:
        # stratum totals are computed once per call
        src = f"lambda t, x, p, a: (lambda _s: {body})(_total(x, -1))"
    else:
        src = f"lambda t, x, p, a: {body}"
    return eval(compile(src, "<rate expression>", "eval"), env)


def to_vector(value, M: int, where: str = "expression") -> np.ndarray:
    """Broadcast a scalar/vector result to a finite length-M float vector."""
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        if not math.isfinite(v):
            raise EvalError(f"{where} evaluated to a non-finite value")
        return np.full(M, float(v))
    if v.shape != (M,):
        raise EvalError(f"{where} evaluated to shape {v.shape}, expected ({M},)")
    if not np.isfinite(v).all():
        raise EvalError(f"{where} evaluated to a non-finite value")
    return v


def evaluate(expr, t, state, params: Mapping[str, float], arrays: Mapping[str, np.ndarray] | None = None,
             compartments: Sequence[str] = ()) -> np.ndarray:
    """Evaluate ``expr`` to a length-M vector for an ``(M, X)`` state.

    ``expr`` may be source text or an AST.  Raises :class:`EvalError` on
    shape mismatches or a non-finite result (for example division by zero).
    """
    if isinstance(expr, str):
        expr = parse_expression(expr)
    arrays = arrays or {}
    state = np.asarray(state)
    if state.ndim == 1:
        state = state[np.newaxis, :]
    kinds = {c: VECTOR for c in compartments}
    kinds.update({k: SCALAR for k in params})
    for k, v in arrays.items():
        kinds.setdefault(k, kind_of(v))
    resolve(expr, kinds)
    if infer_type(expr, kinds) == MATRIX:
        raise EvalError("rate expression evaluates to a matrix")
    for k, v in arrays.items():
        if kinds[k] == VECTOR and np.shape(v) != (state.shape[0],):
            raise EvalError(f"array '{k}' has length {np.shape(v)[0]}, expected {state.shape[0]}")
        if kinds[k] == MATRIX and np.shape(v) != (state.shape[0],) * 2:
            raise EvalError(f"array '{k}' has shape {np.shape(v)}, expected {(state.shape[0],) * 2}")
    f = compile_expr(expr, compartments)
    with np.errstate(all="ignore"):
        value = f(t, state, params, arrays)
    return to_vector(value, state.shape[0])


class RateExpression:
    """A compiled expression bound to parameter and array values.

    Instances are rate functions: ``rate(t, state) -> (M,) array``.
    ``rate.batch(times, states)`` evaluates a stack of states at once.
    """

    __slots__ = ("expr", "source", "_f", "_fb", "params", "arrays", "compartments")

    def __init__(self, expr, compiled: Compiled, params, arrays, source=None, compartments=None,
                 batched: Compiled | None = None):
        self.expr = expr
        self.source = source if source is not None else format_expr(expr)
        self._f = compiled
        self._fb = batched
        self.params = dict(params)
        self.arrays = arrays
        self.compartments = compartments

    def __call__(self, t, state):
        # floating point warnings are silenced by the caller (evaluate_rates);
        # non-finite results are caught here
        value = self._f(t, state, self.params, self.arrays)
        return to_vector(value, state.shape[0], self.source)

    def unchecked(self, t, state):
        """Raw value (scalar or vector) without shape or finiteness checks."""
        return self._f(t, state, self.params, self.arrays)

    def batch(self, times, states) -> np.ndarray:
        """Values for ``states`` ``(n, M, X)`` at ``times`` ``(n,)``, shape ``(n, M)``."""
        if self._fb is None:
            if self.compartments is None:
                raise TypeError("batch evaluation needs the compartment names")
            self._fb = compile_expr(self.expr, self.compartments, batched=True)
        states = np.asarray(states)
        t = np.asarray(times, dtype=np.float64).reshape(-1, 1)
        with np.errstate(all="ignore"):
            value = self._fb(t, states, self.params, self.arrays)
        try:
            out = np.broadcast_to(np.asarray(value, dtype=np.float64), states.shape[:2])
        except ValueError:
            raise EvalError(f"rate '{self.source}' evaluated to shape {np.shape(value)}, "
                            f"expected {states.shape[:2]}") from None
        if not np.all(np.isfinite(out)):
            raise EvalError(f"rate '{self.source}' evaluated to a non-finite value")
        return out

    def __repr__(self):
        return f"RateExpression({self.source!r})"
