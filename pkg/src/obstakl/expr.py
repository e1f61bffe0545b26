"""A small arithmetic expression language for problem data in config files.

Grammar: numbers, the variables ``t, x, y, z``, the constants ``pi, e, inf``,
``+ - * / **``, unary minus and the functions

    exp sin cos tanh sqrt abs max min ind

where ``ind(v, lo, hi)`` is 1 on the half-open interval lo <= v < hi.
Expressions are parsed with :mod:`ast` and anything outside the grammar is
rejected before evaluation.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    pass


def _ind(v, lo, hi):
    v = np.asarray(v, dtype=float)
    return ((v >= lo) & (v < hi)).astype(float)


FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "max": np.maximum,
    "min": np.minimum,
    "ind": _ind,
}
CONSTANTS = {"pi": np.pi, "e": np.e, "inf": np.inf}
VARIABLES = ("t", "x", "y", "z")

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ARITY = {"max": 2, "min": 2, "ind": 3}


def _check(node: ast.AST, allowed_vars: tuple[str, ...], source: str):
    if isinstance(node, ast.Expression):
        return _check(node.body, allowed_vars, source)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id in allowed_vars or node.id in CONSTANTS:
            return
        raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, allowed_vars, source)
        _check(node.right, allowed_vars, source)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _check(node.operand, allowed_vars, source)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS:
        if node.keywords:
            raise ExpressionError(f"keyword arguments not allowed in {source!r}")
        want = _ARITY.get(node.func.id, 1)
        if len(node.args) != want:
            raise ExpressionError(f"{node.func.id} takes {want} argument(s) in {source!r}")
        for arg in node.args:
            _check(arg, allowed_vars, source)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        raise ExpressionError(f"unknown function {node.func.id!r} in {source!r}")
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {source!r}")


@dataclass(frozen=True)
class Expression:
    """Compiled expression; call with keyword arrays for its variables."""

    source: str
    variables: tuple[str, ...]

    def __post_init__(self):
        try:
            tree = ast.parse(self.source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        _check(tree, self.variables, self.source)
        object.__setattr__(self, "_code", compile(tree, "<expr>", "eval"))

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"expected {len(self.variables)} arguments")
        env = dict(CONSTANTS)
        env.update(FUNCTIONS)
        env.update(zip(self.variables, (np.asarray(a, dtype=float) for a in args)))
        with np.errstate(over="ignore", invalid="ignore"):
            out = eval(self._code, {"__builtins__": {}}, env)
        shape = np.broadcast(*args).shape if args else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).astype(float)

    def __reduce__(self):
        return (Expression, (self.source, self.variables))


def compile_expr(source: str | float, variables: tuple[str, ...]) -> Expression:
    return Expression(str(source), tuple(variables))
