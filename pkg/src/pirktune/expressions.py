"""Restricted C-like expression and statement grammar.

This grammar is shared by every place the description documents embed code:
Butcher-table coefficient arithmetic, data-structure dimension expressions,
working-set expressions, kernel computations and IVP right-hand sides.

Supported forms: numeric literals, identifiers, multi-dimensional array
accesses with expression indices, unary minus, the binary operators
``+ - * /``, parentheses and calls to a small whitelist of math functions.
Statements are single assignments (``=`` or the ``+=`` shorthand).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

from .errors import (
    BoundsError,
    DocumentError,
    DomainError,
    UnboundIdentifierError,
)

CALL_WHITELIST = {
    "exp": math.exp,
    "pow": math.pow,
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": math.sqrt,
    "fabs": math.fabs,
}


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Index:
    """Array access ``base[i0][i1]...``."""

    base: str
    indices: tuple["Expr", ...]


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Expr", ...]


Expr = Union[Num, Name, Index, Neg, Bin, Call]


@dataclass(frozen=True)
class Assign:
    """``lhs = rhs``; ``lhs`` is an array cell or a scalar name."""

    lhs: Union[Name, Index]
    rhs: Expr


# --------------------------------------------------------------------------
# Lexing and parsing (precedence climbing)
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\+=|[-+*/()=\[\],]))"
)

_BINARY_PRECEDENCE = {"+": 10, "-": 10, "*": 20, "/": 20}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = self._tokenize(text)
        self.pos = 0

    @staticmethod
    def _tokenize(text: str) -> list[str]:
        tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                if text[pos:].strip() == "":
                    break
                raise DocumentError(
                    f"unexpected character {text[pos:].lstrip()[0]!r} in {text!r}"
                )
            tokens.append(m.group(m.lastgroup))
            pos = m.end()
        return tokens

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise DocumentError(f"unexpected end of expression in {self.text!r}")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise DocumentError(f"expected {tok!r} but found {got!r} in {self.text!r}")

    def parse_expr(self, min_prec: int = 0) -> Expr:
        left = self.parse_unary()
        while True:
            tok = self.peek()
            prec = _BINARY_PRECEDENCE.get(tok or "")
            if prec is None or prec < min_prec:
                return left
            self.next()
            right = self.parse_expr(prec + 1)
            left = Bin(tok, left, right)

    def parse_unary(self) -> Expr:
        if self.peek() == "-":
            self.next()
            return Neg(self.parse_unary())
        if self.peek() == "+":
            self.next()
            return self.parse_unary()
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.next()
        if tok == "(":
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if re.fullmatch(r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?", tok):
            return Num(float(tok))
        if re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", tok):
            if self.peek() == "(":
                if tok not in CALL_WHITELIST:
                    raise DocumentError(f"call to unknown function {tok!r}")
                self.next()
                args = []
                if self.peek() != ")":
                    args.append(self.parse_expr())
                    while self.peek() == ",":
                        self.next()
                        args.append(self.parse_expr())
                self.expect(")")
                return Call(tok, tuple(args))
            if self.peek() == "[":
                indices = []
                while self.peek() == "[":
                    self.next()
                    indices.append(self.parse_expr())
                    self.expect("]")
                return Index(tok, tuple(indices))
            return Name(tok)
        raise DocumentError(f"unexpected token {tok!r} in {self.text!r}")


def parse_expr(text: str) -> Expr:
    parser = _Parser(text)
    expr = parser.parse_expr()
    if parser.peek() is not None:
        raise DocumentError(f"trailing input {parser.tokens[parser.pos:]!r} in {text!r}")
    return expr


def parse_statement(text: str) -> Assign:
    """Parse an assignment; ``a += x`` desugars to ``a = a + x``."""
    parser = _Parser(text)
    lhs = parser.parse_primary()
    if not isinstance(lhs, (Name, Index)):
        raise DocumentError(f"assignment target must be a name or array cell: {text!r}")
    op = parser.next()
    if op not in ("=", "+="):
        raise DocumentError(f"expected assignment operator in {text!r}, found {op!r}")
    rhs = parser.parse_expr()
    if parser.peek() is not None:
        raise DocumentError(f"trailing input after statement {text!r}")
    if op == "+=":
        rhs = Bin("+", lhs, rhs)
    return Assign(lhs, rhs)


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

def _fmt_num(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _prec_of(expr: Expr) -> int:
    if isinstance(expr, Bin):
        return _BINARY_PRECEDENCE[expr.op]
    if isinstance(expr, Neg):
        return 25
    return 100


def to_c(expr: Expr) -> str:
    """Render an expression as C-style text; ``parse(to_c(e)) == e`` holds."""
    if isinstance(expr, Num):
        return _fmt_num(expr.value)
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, Index):
        return expr.base + "".join(f"[{to_c(i)}]" for i in expr.indices)
    if isinstance(expr, Neg):
        inner = to_c(expr.operand)
        if _prec_of(expr.operand) < 25:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(to_c(a) for a in expr.args)})"
    if isinstance(expr, Bin):
        left = to_c(expr.left)
        right = to_c(expr.right)
        prec = _BINARY_PRECEDENCE[expr.op]
        if _prec_of(expr.left) < prec:
            left = f"({left})"
        # the parser is left-associative, so a right operand of equal
        # precedence must keep its parentheses to reparse identically
        if _prec_of(expr.right) <= prec:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    raise TypeError(f"not an expression node: {expr!r}")


def statement_to_c(stmt: Assign) -> str:
    """Render a statement, re-sugaring ``a = a + x`` to ``a += x``."""
    if isinstance(stmt.rhs, Bin) and stmt.rhs.op == "+" and stmt.rhs.left == stmt.lhs:
        return f"{to_c(stmt.lhs)} += {to_c(stmt.rhs.right)};"
    return f"{to_c(stmt.lhs)} = {to_c(stmt.rhs)};"


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _as_int_index(value: float, expr: Expr) -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise BoundsError(f"array index {to_c(expr)} is not integral: {value!r}")


def eval_expr(expr: Expr, env: Mapping[str, object]) -> float:
    """Evaluate under ``env`` (names -> scalar or ndarray). Never returns NaN."""
    value = _eval(expr, env)
    if not math.isfinite(value):
        raise DomainError(f"expression {to_c(expr)} evaluated to {value!r}")
    return value


def _eval(expr: Expr, env: Mapping[str, object]) -> float:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Name):
        try:
            value = env[expr.ident]
        except KeyError:
            raise UnboundIdentifierError(f"unbound identifier {expr.ident!r}") from None
        return float(value)
    if isinstance(expr, Index):
        try:
            array = env[expr.base]
        except KeyError:
            raise UnboundIdentifierError(f"unbound array {expr.base!r}") from None
        for idx_expr in expr.indices:
            idx = _as_int_index(_eval(idx_expr, env), idx_expr)
            length = len(array)
            if not 0 <= idx < length:
                raise BoundsError(
                    f"index {idx} out of range [0, {length}) in {to_c(expr)}"
                )
            array = array[idx]
        return float(array)
    if isinstance(expr, Neg):
        return -_eval(expr.operand, env)
    if isinstance(expr, Call):
        args = [_eval(a, env) for a in expr.args]
        try:
            return CALL_WHITELIST[expr.fn](*args)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise DomainError(f"{to_c(expr)}: {exc}") from None
    if isinstance(expr, Bin):
        left = _eval(expr.left, env)
        right = _eval(expr.right, env)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        try:
            return left / right
        except ZeroDivisionError:
            raise DomainError(f"division by zero in {to_c(expr)}") from None
    raise TypeError(f"not an expression node: {expr!r}")


def eval_scalar(text: str, bindings: Mapping[str, float] | None = None) -> float:
    """Parse and evaluate arithmetic text such as a coefficient or dimension."""
    return eval_expr(parse_expr(text), bindings or {})


# --------------------------------------------------------------------------
# Substitution and folding
# --------------------------------------------------------------------------

def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace free identifiers by expressions (array bases are untouched)."""
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, Name):
        return mapping.get(expr.ident, expr)
    if isinstance(expr, Index):
        return Index(expr.base, tuple(substitute(i, mapping) for i in expr.indices))
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, mapping))
    if isinstance(expr, Call):
        return Call(expr.fn, tuple(substitute(a, mapping) for a in expr.args))
    if isinstance(expr, Bin):
        return Bin(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    raise TypeError(f"not an expression node: {expr!r}")


def transform_indices(expr: Expr, fn: Callable[[Index], Expr]) -> Expr:
    """Rewrite every array access bottom-up through ``fn``."""
    if isinstance(expr, (Num, Name)):
        return expr
    if isinstance(expr, Index):
        rewritten = Index(expr.base, tuple(transform_indices(i, fn) for i in expr.indices))
        return fn(rewritten)
    if isinstance(expr, Neg):
        return Neg(transform_indices(expr.operand, fn))
    if isinstance(expr, Call):
        return Call(expr.fn, tuple(transform_indices(a, fn) for a in expr.args))
    if isinstance(expr, Bin):
        return Bin(
            expr.op,
            transform_indices(expr.left, fn),
            transform_indices(expr.right, fn),
        )
    raise TypeError(f"not an expression node: {expr!r}")


def fold(expr: Expr) -> Expr:
    """Constant-fold and simplify. Comparisons against 0.0/1.0 are exact by
    design: structural Butcher zeros must vanish, nothing else may."""
    if isinstance(expr, (Num, Name)):
        return expr
    if isinstance(expr, Index):
        return Index(expr.base, tuple(fold(i) for i in expr.indices))
    if isinstance(expr, Neg):
        inner = fold(expr.operand)
        if isinstance(inner, Num):
            return Num(-inner.value)
        if isinstance(inner, Neg):
            return inner.operand
        return Neg(inner)
    if isinstance(expr, Call):
        args = tuple(fold(a) for a in expr.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return Num(CALL_WHITELIST[expr.fn](*[a.value for a in args]))
            except (ValueError, OverflowError, ZeroDivisionError):
                pass
        return Call(expr.fn, args)
    if isinstance(expr, Bin):
        left = fold(expr.left)
        right = fold(expr.right)
        if isinstance(left, Num) and isinstance(right, Num):
            if expr.op == "+":
                return Num(left.value + right.value)
            if expr.op == "-":
                return Num(left.value - right.value)
            if expr.op == "*":
                return Num(left.value * right.value)
            if right.value != 0.0:
                return Num(left.value / right.value)
            return Bin("/", left, right)
        if expr.op == "*":
            if _is_num(left, 0.0) or _is_num(right, 0.0):
                return Num(0.0)
            if _is_num(left, 1.0):
                return right
            if _is_num(right, 1.0):
                return left
        elif expr.op == "+":
            if _is_num(left, 0.0):
                return right
            if _is_num(right, 0.0):
                return left
        elif expr.op == "-":
            if _is_num(right, 0.0):
                return left
            if _is_num(left, 0.0):
                return fold(Neg(right))
        elif expr.op == "/":
            if _is_num(right, 1.0):
                return left
            if _is_num(left, 0.0):
                return Num(0.0)
        return Bin(expr.op, left, right)
    raise TypeError(f"not an expression node: {expr!r}")


def _is_num(expr: Expr, value: float) -> bool:
    return isinstance(expr, Num) and expr.value == value


def iter_nodes(expr: Expr) -> Iterator[Expr]:
    """Pre-order walk over all nodes of an expression."""
    yield expr
    if isinstance(expr, Index):
        for idx in expr.indices:
            yield from iter_nodes(idx)
    elif isinstance(expr, Neg):
        yield from iter_nodes(expr.operand)
    elif isinstance(expr, Call):
        for arg in expr.args:
            yield from iter_nodes(arg)
    elif isinstance(expr, Bin):
        yield from iter_nodes(expr.left)
        yield from iter_nodes(expr.right)


def free_names(expr: Expr) -> set[str]:
    """Free scalar identifiers (array base names excluded)."""
    return {n.ident for n in iter_nodes(expr) if isinstance(n, Name)}


def array_names(expr: Expr) -> set[str]:
    return {n.base for n in iter_nodes(expr) if isinstance(n, Index)}
