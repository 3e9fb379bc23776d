"""Arithmetic expressions over (t, x, y) for scenario data.

Grammar is the Python expression subset: numbers, ``+ - * / **`` (``^`` is
accepted as power), unary minus, comparisons, and calls to the functions in
:data:`FUNCTIONS`.  Piecewise data uses ``step(z)`` (1 for z >= 0, else 0)
or ``where(cond, a, b)``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ScenarioError


def _step(z):
    return np.where(np.asarray(z) >= 0, 1.0, 0.0)


def _min(*args):
    return _fold(np.minimum, args)


def _max(*args):
    return _fold(np.maximum, args)


def _fold(op, args):
    if len(args) < 2:
        raise ValueError("min/max need at least two arguments")
    out = args[0]
    for a in args[1:]:
        out = op(out, a)
    return out


FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "atan2": np.arctan2,
    "min": _min, "max": _max, "step": _step, "where": np.where, "clip": np.clip,
}
CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("t", "x", "y")

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
            ast.Compare, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
            ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Mod)


def _caret_to_pow(text: str) -> tuple[str, list[int]]:
    """Rewrite ``^`` as ``**`` and map each new column back to the source column."""
    out, cols = [], []
    for k, ch in enumerate(text):
        out.append("**" if ch == "^" else ch)
        cols.extend([k, k] if ch == "^" else [k])
    cols.append(len(text))
    return "".join(out), cols


@dataclass(frozen=True, eq=False)
class Expr:
    """Compiled scalar expression; call as ``expr(t, x, y)``."""

    source: str
    names: frozenset = field(default_factory=frozenset)
    _fn: Callable = field(default=None, repr=False)

    def __call__(self, t, x, y):
        return self._fn(t, x, y)

    @property
    def depends_on_t(self) -> bool:
        return "t" in self.names

    @property
    def is_constant(self) -> bool:
        return not (self.names & set(VARIABLES))

    def __eq__(self, other):
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self):
        return hash(self.source)


def compile_expr(source: str, *, line: int | None = None, col_offset: int = 0, key: str | None = None) -> Expr:
    text = source.strip()
    if not text:
        raise ScenarioError("empty expression", line, col_offset + 1, key)
    code_text, cols = _caret_to_pow(text)

    def column(offset: int) -> int:
        return col_offset + cols[min(max(offset, 0), len(cols) - 1)] + 1

    try:
        tree = ast.parse(code_text, mode="eval")
    except SyntaxError as exc:
        col = column((exc.offset or 1) - 1)
        raise ScenarioError(f"syntax error in expression {text!r}: {exc.msg}", line, col, key) from None
    names = set()
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ScenarioError(f"construct {type(node).__name__} not allowed in {text!r}", line,
                                column(getattr(node, "col_offset", 0)), key)
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ScenarioError(f"only numeric literals allowed in {text!r}", line,
                                column(node.col_offset), key)
        if isinstance(node, ast.Compare) and len(node.ops) > 1:
            raise ScenarioError("chained comparisons not allowed", line, column(node.col_offset), key)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                fname = getattr(node.func, "id", "?")
                raise ScenarioError(f"unknown function {fname!r}", line, column(node.col_offset), key)
            if node.keywords:
                raise ScenarioError("keyword arguments not allowed", line, column(node.col_offset), key)
    callees = {id(n.func) for n in ast.walk(tree) if isinstance(n, ast.Call)}
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and id(node) not in callees:
            if node.id in VARIABLES or node.id in CONSTANTS:
                names.add(node.id)
            else:
                raise ScenarioError(f"unknown variable {node.id!r} in {text!r}", line,
                                    column(node.col_offset), key)
    code = compile(tree, "<scenario>", "eval")
    namespace = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}

    def fn(t, x, y):
        return eval(code, namespace, {"t": t, "x": x, "y": y})

    return Expr(text, frozenset(names), fn)


def constant(value: float) -> Expr:
    return compile_expr(repr(float(value)))
