"""Tiny arithmetic expression language for coefficient fields.

Grammar (recursive descent, right-associative power):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := ('-' | '+') factor | power
    power   := primary ('^' factor)?
    primary := NUMBER | NAME '(' expr ')' | NAME | '(' expr ')'

Known names: the coordinates ``x``, ``y``, the time ``t``, the constant
``pi``, and the functions ``sin``, ``cos``, ``cosh``, ``exp``.  Parsing
produces a closed-over evaluator, so configs stay declarative while
evaluation costs one Python call per quadrature point.
"""

from __future__ import annotations

import math
import re

_FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "cosh": math.cosh,
    "exp": math.exp,
}
_CONSTANTS = {"pi": math.pi}
_VARIABLES = ("x", "y", "t")

_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    """The expression text does not parse or uses an unknown name."""


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ExpressionError(
                f"unexpected character {rest[0]!r} at position {pos} in {text!r}"
            )
        if m.lastgroup == "number":
            tokens.append(("number", float(m.group("number"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect_op(self, op: str):
        kind, value = self.take()
        if kind != "op" or value != op:
            raise ExpressionError(f"expected {op!r} in {self.text!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            node = (_add if op == "+" else _sub)(node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.factor()
            node = (_mul if op == "*" else _div)(node, rhs)
        return node

    def factor(self):
        # unary sign binds looser than the power operator: -x^2 == -(x^2)
        if self.peek() == ("op", "-"):
            self.take()
            operand = self.factor()
            return lambda env, f=operand: -f(env)
        if self.peek() == ("op", "+"):
            self.take()
            return self.factor()
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek() == ("op", "^"):
            self.take()
            exponent = self.factor()
            return _pow(base, exponent)
        return base

    def primary(self):
        kind, value = self.take()
        if kind == "number":
            return lambda env, c=value: c
        if kind == "name":
            if self.peek() == ("op", "("):
                if value not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {value!r} in {self.text!r}")
                self.take()
                arg = self.expr()
                self.expect_op(")")
                fn = _FUNCTIONS[value]
                return lambda env, f=fn, a=arg: f(a(env))
            if value in _CONSTANTS:
                c = _CONSTANTS[value]
                return lambda env, c=c: c
            if value in _VARIABLES:
                return lambda env, n=value: env[n]
            raise ExpressionError(f"unknown name {value!r} in {self.text!r}")
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token in {self.text!r}")


def _add(a, b):
    return lambda env: a(env) + b(env)


def _sub(a, b):
    return lambda env: a(env) - b(env)


def _mul(a, b):
    return lambda env: a(env) * b(env)


def _div(a, b):
    return lambda env: a(env) / b(env)


def _pow(a, b):
    return lambda env: a(env) ** b(env)


class Expression:
    """A compiled expression over (x, y, t)."""

    def __init__(self, text: str):
        self.text = text
        self._eval = _Parser(text).parse()

    def __call__(self, x=0.0, y=0.0, t=0.0) -> float:
        return self._eval({"x": x, "y": y, "t": t})

    def at_point(self, point, t: float = 0.0) -> float:
        point = list(point)
        x = float(point[0])
        y = float(point[1]) if len(point) > 1 else 0.0
        return self._eval({"x": x, "y": y, "t": t})

    @property
    def time_dependent(self) -> bool:
        return bool(re.search(r"\bt\b", self.text))

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_expression(text: str) -> Expression:
    return Expression(text)
