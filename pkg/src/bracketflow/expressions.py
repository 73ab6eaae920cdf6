"""Parser and evaluators for the scalar expression grammar.

Grammar (EBNF, also reproduced in the README):

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("+" | "-") unary | power ;
    power   = atom [ ("^" | "**") unary ] ;          (right associative)
    atom    = NUMBER | IDENT | IDENT "(" expr { "," expr } ")" | "(" expr ")" ;

Identifiers are the variables ``x1 .. xd``, the constants ``pi`` and ``e``,
and the functions ``sin cos exp sqrt abs min max pow``. Parsed trees
evaluate on batches of points (shape ``(n, d)``) with plain numpy, or with
:class:`~bracketflow.dual.Dual` inputs for exact forward-mode derivatives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .dual import Dual

__all__ = [
    "ExpressionError",
    "parse_expression",
    "eval_array",
    "eval_dual",
    "has_nonsmooth",
    "kink_arguments",
]


class ExpressionError(ValueError):
    """Syntax or name error in an expression, with source position."""

    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


# AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, matching x1..xd


@dataclass(frozen=True)
class Unary:
    op: str  # "neg"
    child: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # "+", "-", "*", "/", "pow"
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str  # "sin", "cos", "exp", "sqrt", "abs", "min", "max"
    args: tuple


Node = Union[Const, Var, Unary, Binary, Call]

_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1,
              "min": 2, "max": 2, "pow": 2}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_NONSMOOTH = {"abs", "min", "max"}

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
  | (?P<ws>\s+)
""", re.VERBOSE)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", text, pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            raise ExpressionError(f"expected {value!r}, found {text!r}", self.text, pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing {text!r}", self.text, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        if self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(text, pos)
            if text in _CONSTANTS:
                return Const(_CONSTANTS[text])
            m = re.fullmatch(r"x(\d+)", text)
            if m is None:
                raise ExpressionError(f"unknown variable {text!r}", self.text, pos)
            index = int(m.group(1))
            if not 1 <= index <= self.dim:
                raise ExpressionError(
                    f"variable {text!r} out of range for dimension {self.dim}",
                    self.text, pos)
            return Var(index)
        raise ExpressionError(f"unexpected token {text!r}", self.text, pos)

    def call(self, name: str, pos: int) -> Node:
        if name not in _FUNCTIONS:
            raise ExpressionError(f"unknown function {name!r}", self.text, pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != _FUNCTIONS[name]:
            raise ExpressionError(
                f"{name} takes {_FUNCTIONS[name]} argument(s), got {len(args)}",
                self.text, pos)
        if name == "pow":
            return Binary("pow", args[0], args[1])
        return Call(name, tuple(args))


def parse_expression(text: str, dim: int) -> Node:
    """Parse ``text`` over variables x1..x<dim>."""
    return _Parser(text, dim).parse()


# evaluation ----------------------------------------------------------------

def _apply(name, a, b=None):
    dual = isinstance(a, Dual) or isinstance(b, Dual)
    if dual and not isinstance(a, Dual):
        a = Dual.constant(a, b)
    if name == "abs":
        return a.abs() if dual else np.abs(a)
    if name == "sin":
        return a.sin() if dual else np.sin(a)
    if name == "cos":
        return a.cos() if dual else np.cos(a)
    if name == "exp":
        return a.exp() if dual else np.exp(a)
    if name == "sqrt":
        return a.sqrt() if dual else np.sqrt(a)
    if name == "min":
        return a.minimum(b) if dual else np.minimum(a, b)
    if name == "max":
        return a.maximum(b) if dual else np.maximum(a, b)
    raise AssertionError(name)


def _eval(node: Node, variables) -> object:
    if isinstance(node, Const):
        sample = variables[0]
        if isinstance(sample, Dual):
            return Dual.constant(node.value, sample)
        return np.full_like(sample, node.value)
    if isinstance(node, Var):
        return variables[node.index - 1]
    if isinstance(node, Unary):
        return -_eval(node.child, variables)
    if isinstance(node, Binary):
        a = _eval(node.left, variables)
        b = _eval(node.right, variables)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            with np.errstate(all="ignore"):
                return a / b
        if node.op == "pow":
            if isinstance(node.right, Const) and isinstance(a, Dual):
                return a ** node.right.value
            with np.errstate(all="ignore"):
                return a ** b
        raise AssertionError(node.op)
    if isinstance(node, Call):
        args = [_eval(arg, variables) for arg in node.args]
        with np.errstate(all="ignore"):
            return _apply(node.name, *args)
    raise AssertionError(type(node))


def eval_array(node: Node, points: np.ndarray) -> np.ndarray:
    """Evaluate on a batch of points with shape (n, d); returns shape (n,).

    Non-finite results are returned as-is; callers decide whether to raise.
    """
    points = np.asarray(points, dtype=float)
    columns = [points[:, j] for j in range(points.shape[1])]
    return np.asarray(_eval(node, columns), dtype=float)


def eval_dual(node: Node, points: np.ndarray) -> Dual:
    """Evaluate with seeded duals; returns value (n,) and gradient (n, d)."""
    points = np.asarray(points, dtype=float)
    return _eval(node, Dual.seed_variables(points))


# structure queries ----------------------------------------------------------

def has_nonsmooth(node: Node) -> bool:
    """True if the tree contains abs/min/max anywhere."""
    if isinstance(node, Call):
        if node.name in _NONSMOOTH:
            return True
        return any(has_nonsmooth(a) for a in node.args)
    if isinstance(node, Unary):
        return has_nonsmooth(node.child)
    if isinstance(node, Binary):
        return has_nonsmooth(node.left) or has_nonsmooth(node.right)
    return False


def _collect_kink_nodes(node: Node, out: list):
    if isinstance(node, Call):
        if node.name == "abs":
            out.append(node.args[0])
        elif node.name in ("min", "max"):
            out.append(Binary("-", node.args[0], node.args[1]))
        for a in node.args:
            _collect_kink_nodes(a, out)
    elif isinstance(node, Unary):
        _collect_kink_nodes(node.child, out)
    elif isinstance(node, Binary):
        _collect_kink_nodes(node.left, out)
        _collect_kink_nodes(node.right, out)


def kink_arguments(node: Node) -> list:
    """Sub-expressions whose sign changes mark kinks: the argument of every
    abs and the difference of every min/max pair."""
    out: list = []
    _collect_kink_nodes(node, out)
    return out
