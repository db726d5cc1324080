"""A small arithmetic expression language for configuration files.

Grammar (left-associative, usual precedence):

    expr   := term  (("+" | "-") term)*
    term   := factor (("*" | "x-mult" | "/" | "x-div") factor)*
    factor := ("+" | "-") factor | atom
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Variables are ``t``, ``x``, ``y1`` .. ``yn`` and ``z11`` .. ``znd``;
functions are ``exp``, ``tanh``, ``min``, ``max``; constants are ``pi``
and ``e``.  The multiplication and division signs also accept their
unicode forms.  Errors carry 1-based line and column positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ExpressionError

_FUNCTIONS = {
    "exp": (1, 1, lambda args: np.exp(args[0])),
    "tanh": (1, 1, lambda args: np.tanh(args[0])),
    "min": (2, None, lambda args: _reduce(np.minimum, args)),
    "max": (2, None, lambda args: _reduce(np.maximum, args)),
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_VAR_RE = re.compile(r"^(t|x|y[1-9][0-9]*|z[1-9][0-9]*)$")

_TOKEN_RE = re.compile(
    r"""
    (?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[+\-*/×÷(),])
  | (?P<ws>[ \t]+)
  | (?P<newline>\n)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


def _reduce(fn, args):
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


@dataclass(frozen=True)
class Token:
    kind: str      # "number" | "name" | "op" | "end"
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        text = m.group()
        if kind == "newline":
            line += 1
            col = 1
            continue
        if kind == "ws":
            col += len(text)
            continue
        if kind == "bad":
            raise ExpressionError(f"unexpected character {text!r}", line, col)
        tokens.append(Token(kind, text, line, col))
        col += len(text)
    tokens.append(Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            shown = tok.text or "end of input"
            raise ExpressionError(f"expected {text!r}, found {shown!r}", tok.line, tok.column)
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExpressionError(f"unexpected {tok.text!r}", tok.line, tok.column)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = ("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/×÷":
            op = self.advance().text
            node = ("mul" if op in "*×" else "div", node, self.factor())
        return node

    def factor(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            inner = self.factor()
            return inner if tok.text == "+" else ("neg", inner)
        return self.atom()

    def atom(self):
        tok = self.advance()
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if tok.kind == "number":
            return ("const", float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if self.peek().kind == "op" and self.peek().text == "(":
                if name not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {name!r}", tok.line, tok.column)
                self.advance()
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                lo, hi, _ = _FUNCTIONS[name]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    wanted = str(lo) if hi == lo else f"at least {lo}"
                    raise ExpressionError(
                        f"{name} takes {wanted} argument(s), got {len(args)}",
                        tok.line, tok.column,
                    )
                return ("call", name, args)
            if name in _CONSTANTS:
                return ("const", _CONSTANTS[name])
            if not _VAR_RE.match(name):
                raise ExpressionError(f"unknown name {name!r}", tok.line, tok.column)
            return ("var", name, tok.line, tok.column)
        shown = tok.text or "end of input"
        raise ExpressionError(f"unexpected {shown!r}", tok.line, tok.column)


def _collect_vars(node, out: set):
    tag = node[0]
    if tag == "var":
        out.add(node[1])
    elif tag in ("add", "sub", "mul", "div"):
        _collect_vars(node[1], out)
        _collect_vars(node[2], out)
    elif tag == "neg":
        _collect_vars(node[1], out)
    elif tag == "call":
        for a in node[2]:
            _collect_vars(a, out)


def _evaluate(node, env: dict):
    tag = node[0]
    if tag == "const":
        return node[1]
    if tag == "var":
        return env[node[1]]
    if tag == "neg":
        return -_evaluate(node[1], env)
    if tag == "add":
        return _evaluate(node[1], env) + _evaluate(node[2], env)
    if tag == "sub":
        return _evaluate(node[1], env) - _evaluate(node[2], env)
    if tag == "mul":
        return _evaluate(node[1], env) * _evaluate(node[2], env)
    if tag == "div":
        return _evaluate(node[1], env) / _evaluate(node[2], env)
    if tag == "call":
        _, _, fn = _FUNCTIONS[node[1]]
        return fn([_evaluate(a, env) for a in node[2]])
    raise AssertionError(f"unreachable node tag {tag!r}")


@dataclass(frozen=True)
class Expression:
    """A parsed expression evaluable over numpy arrays."""

    source: str
    ast: tuple
    variables: frozenset

    def __call__(self, **env):
        return _evaluate(self.ast, env)

    def evaluate(self, env: dict):
        return _evaluate(self.ast, env)


def compile_expression(source: str, allowed: Sequence[str] | None = None) -> Expression:
    """Parse ``source``; if ``allowed`` is given, restrict the variables it
    may mention (e.g. a diffusion expression may only use ``t``)."""
    if not isinstance(source, str):
        raise ExpressionError(f"expression must be a string, got {type(source).__name__}", 1, 1)
    ast = _Parser(tokenize(source)).parse()
    used: set = set()
    _collect_vars(ast, used)
    if allowed is not None:
        extra = sorted(used - set(allowed))
        if extra:
            pos = _find_var(ast, extra[0])
            raise ExpressionError(
                f"variable {extra[0]!r} is not available here "
                f"(allowed: {', '.join(sorted(allowed))})",
                pos[0], pos[1],
            )
    return Expression(source=source, ast=ast, variables=frozenset(used))


def _find_var(node, name):
    tag = node[0]
    if tag == "var" and node[1] == name:
        return (node[2], node[3])
    if tag in ("add", "sub", "mul", "div"):
        return _find_var(node[1], name) or _find_var(node[2], name)
    if tag == "neg":
        return _find_var(node[1], name)
    if tag == "call":
        for a in node[2]:
            hit = _find_var(a, name)
            if hit:
                return hit
    return None
