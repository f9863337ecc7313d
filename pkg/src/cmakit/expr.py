"""A small expression language for densities, weights and boundary data.

Grammar (whitespace ignored)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?            # right associative
    atom    := NUMBER | NAME | NAME '(' args ')' | '(' expr ')' | '|' expr '|'
    args    := expr (',' expr)?

Names are the coordinates ``z1 .. zn``, the constants ``pi`` and ``i`` and
any parameters passed to :meth:`Expression.__call__`.  Functions are
``log, exp, sqrt, abs2, re, im, conj`` (one argument) and ``max, min``
(two arguments, real).  ``|e|`` is the modulus and
``abs2(e) = |e|^2``.  Arithmetic is complex; a result is accepted when its
imaginary part is at most ``1e-12`` times its modulus (plus ``1e-300``).
"""
from __future__ import annotations

import re
from typing import Callable, Dict

import numpy as np

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)|(\S))")

_FUNCS: Dict[str, Callable] = {
    "log": np.log, "exp": np.exp, "sqrt": np.sqrt,
    "abs2": lambda v: np.abs(v) ** 2, "re": np.real, "im": np.imag, "conj": np.conj,
}
_FUNCS2: Dict[str, Callable] = {"max": np.maximum, "min": np.minimum}


class ExpressionError(ValueError):
    def __init__(self, message: str, source: str, pos: int):
        super().__init__(f"{message} at column {pos + 1} in {source!r}")
        self.pos = pos


def _tokenize(src: str) -> list:
    out, pos = [], 0
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:  # pragma: no cover - the pattern always matches non-space
            raise ExpressionError("unexpected input", src, pos)
        num, name, op = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            out.append(("num", float(num), start))
        elif name is not None:
            out.append(("name", name, start))
        else:
            if op not in "+-*/^()|,":
                raise ExpressionError(f"unexpected character {op!r}", src, start)
            out.append(("op", op, start))
        pos = m.end()
    out.append(("end", None, len(src)))
    return out


class _Parser:
    def __init__(self, src: str, n: int):
        self.src, self.n = src, n
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, op=None):
        tok = self.toks[self.i]
        if op is not None and not (tok[0] == "op" and tok[1] == op):
            raise ExpressionError(f"expected {op!r}", self.src, tok[2])
        self.i += 1
        return tok

    def is_op(self, *ops):
        tok = self.peek()
        return tok[0] == "op" and tok[1] in ops

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError("unexpected trailing input", self.src, tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.is_op("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = (lambda a, b: lambda env: a(env) + b(env))(node, rhs) if op == "+" else \
                (lambda a, b: lambda env: a(env) - b(env))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.is_op("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = (lambda a, b: lambda env: a(env) * b(env))(node, rhs) if op == "*" else \
                (lambda a, b: lambda env: a(env) / b(env))(node, rhs)
        return node

    def unary(self):
        if self.is_op("-"):
            self.take()
            inner = self.unary()
            return lambda env: -inner(env)
        if self.is_op("+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.is_op("^"):
            self.take()
            expo = self.unary()
            return lambda env: _pow(base(env), expo(env))
        return base

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return lambda env: val
        if kind == "name":
            self.take()
            if val in _FUNCS:
                fn = _FUNCS[val]
                self.take("(")
                arg = self.expr()
                self.take(")")
                return lambda env: fn(arg(env))
            if val in _FUNCS2:
                fn2 = _FUNCS2[val]
                self.take("(")
                a = self.expr()
                self.take(",")
                b = self.expr()
                self.take(")")
                return lambda env: fn2(_real(a(env), val), _real(b(env), val))
            m = re.fullmatch(r"z([1-9])", val)
            if m:
                k = int(m.group(1))
                if k > self.n:
                    raise ExpressionError(f"coordinate {val} exceeds dimension {self.n}", self.src, pos)
                return lambda env: env["__z__"][..., k - 1]
            if val == "pi":
                return lambda env: np.pi
            if val == "i":
                return lambda env: 1j
            return _lookup(val, self.src, pos)
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "op" and val == "|":
            self.take()
            node = self.expr()
            self.take("|")
            return lambda env: np.abs(node(env))
        raise ExpressionError("expected a value", self.src, pos)


def _real(v, name):
    if np.iscomplexobj(v):
        if np.any(np.abs(np.imag(v)) > 1e-12 * np.abs(v) + 1e-300):
            raise ValueError(f"{name} needs real arguments")
        return np.real(v)
    return v


def _lookup(name, src, pos):
    def get(env):
        if name not in env:
            raise ExpressionError(f"unknown name {name!r}", src, pos)
        return env[name]
    return get


def _pow(a, b):
    # Real bases with real exponents stay real where that is defined.
    if np.isrealobj(a) and np.isrealobj(b) and np.all(np.asarray(a) >= 0):
        return np.power(np.asarray(a, dtype=float), b)
    return np.power(np.asarray(a, dtype=complex), b)


class Expression:
    """A parsed expression over ``z1 .. zn`` evaluated on arrays of points.

    Examples
    --------
    >>> e = Expression("abs2(z1) + 2", n=1)
    >>> float(e(np.array([[1j]]))[0])
    3.0
    """

    def __init__(self, source: str, n: int):
        if n not in (1, 2):
            raise ValueError("expressions are defined for n in {1, 2}")
        self.source, self.n = source, n
        self._fn = _Parser(source, n).parse()

    def __call__(self, z: np.ndarray, **params) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        env = dict(params)
        env["__z__"] = z
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.broadcast_to(np.asarray(self._fn(env)), z.shape[:-1])
        if np.iscomplexobj(val):
            bad = np.abs(val.imag) > 1e-12 * np.abs(val) + 1e-300
            if np.any(bad & np.isfinite(val)):
                raise ValueError(f"expression {self.source!r} is not real-valued")
            val = val.real
        return np.array(val, dtype=float)

    def __repr__(self) -> str:
        return f"Expression({self.source!r}, n={self.n})"
