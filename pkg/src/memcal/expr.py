"""Tiny arithmetic expression evaluator for column transforms like ``exp(x1)``.

Only numeric literals, named columns, ``+ - * / **`` and a fixed set of
numpy functions are accepted; anything else is rejected before evaluation.
"""

from __future__ import annotations

import ast
from typing import Mapping

import numpy as np

FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise ExpressionError(f"unknown column {node.id!r}")
        return env[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in FUNCTIONS
        and len(node.args) == 1
        and not node.keywords
    ):
        return FUNCTIONS[node.func.id](_eval(node.args[0], env))
    raise ExpressionError(f"unsupported syntax in expression: {ast.dump(node)[:60]}")


def evaluate(expression: str, columns: Mapping[str, np.ndarray], length: int | None = None) -> np.ndarray:
    """Evaluate ``expression`` over named columns; constants broadcast to ``length``."""
    try:
        tree = ast.parse(expression.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expression!r}") from exc
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(tree, columns), dtype=float)
    if length is None:
        length = len(next(iter(columns.values()))) if columns else 1
    out = np.broadcast_to(out, (length,)).copy()
    if not np.all(np.isfinite(out)):
        raise ExpressionError(f"{expression!r} produced non-finite values")
    return out


def design_matrix(expressions, columns: Mapping[str, np.ndarray], length: int | None = None) -> np.ndarray:
    """Stack several expressions as columns of an ``n x k`` matrix."""
    return np.column_stack([evaluate(e, columns, length) for e in expressions])
