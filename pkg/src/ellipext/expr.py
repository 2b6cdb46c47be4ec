"""Closed-form expression language for scenario coefficients and data.

Expressions use arithmetic (``+ - * / **``, ``^`` is accepted as power),
the functions ``exp log sin cos tan sinh cosh tanh sqrt abs``, the
variables ``x1 .. xn`` and the constants ``pi`` and ``e``.  Parsing goes
through :mod:`ast` with a whitelist and is translated node by node into
:mod:`sympy`, so nothing is ever passed to ``eval``.
"""

from __future__ import annotations

import ast
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import ScenarioError

FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "sqrt": sp.sqrt,
    "abs": sp.Abs,
    "atan2": sp.atan2,
}
CONSTANTS = {"pi": sp.pi, "e": sp.E}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


@lru_cache(maxsize=None)
def symbols(n: int) -> tuple:
    """The coordinate symbols ``x1 .. xn``."""
    return tuple(sp.Symbol(f"x{i + 1}", real=True) for i in range(n))


def parse(text, n: int) -> sp.Expr:
    """Parse ``text`` into a sympy expression in the variables ``x1 .. xn``.

    Numbers are accepted as well and turned into constants.
    """
    if isinstance(text, (int, float)):
        return sp.Float(text) if isinstance(text, float) else sp.Integer(text)
    if isinstance(text, sp.Expr):
        return text
    if not isinstance(text, str):
        raise ScenarioError(f"expression must be a string or number, got {type(text).__name__}")
    try:
        # ``^`` binds like ``**``; the ast operator of the same glyph does not
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = {f"x{i + 1}": s for i, s in enumerate(symbols(n))}
    return _translate(tree.body, names, text)


def _translate(node, names, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.Integer(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ScenarioError(f"unknown name {node.id!r} in expression {text!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_translate(node.left, names, text), _translate(node.right, names, text))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        operand = _translate(node.operand, names, text)
        return -operand if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in FUNCTIONS:
            raise ScenarioError(f"unknown function {node.func.id!r} in expression {text!r}")
        args = [_translate(a, names, text) for a in node.args]
        return FUNCTIONS[node.func.id](*args)
    raise ScenarioError(f"unsupported syntax in expression {text!r}")


def lambdify(expr: sp.Expr, n: int):
    """Vectorised numpy evaluator for ``expr``.

    The returned callable takes points of shape ``(..., n)`` and returns an
    array of shape ``(...)``.
    """
    xs = symbols(n)
    raw = sp.lambdify(xs, expr, modules="numpy")

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        out = raw(*(pts[..., i] for i in range(n)))
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    return evaluate
