"""Radial potentials V(r): constants and parsed expressions.

Config files specify the potential either as `const <value>` or as
`expr <expression>`.  The expression grammar is deliberately small and
stable:

    expression := term (('+' | '-') term)*
    term       := factor (('*' | '/') factor)*
    factor     := base ('^' exponent)?
    base       := number | 'r' | 'exp' '(' expression ')'
                | 'log' '(' expression ')' | '(' expression ')'
                | '-' factor

`r` is the radial coordinate; `^` is exponentiation.  Expressions are
differentiated symbolically, which gives the exact radial drift
r V'(r) needed by the Pohozaev audit.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy

from .geometry import RadialGrid


class PotentialError(ValueError):
    """Malformed potential specification."""


_ALLOWED_CALLS = {"exp", "log"}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub, ast.Mult,
    ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Constant, ast.Name, ast.Call,
    ast.Load,
)


def _validate_expression(text: str) -> None:
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise PotentialError(f"cannot parse potential expression {text!r}: {exc.msg}")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise PotentialError(
                f"disallowed construct {type(node).__name__} in potential {text!r}"
            )
        if isinstance(node, ast.Name) and node.id != "r":
            raise PotentialError(f"unknown name {node.id!r} in potential {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_CALLS:
                raise PotentialError(f"only exp() and log() may be called, in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise PotentialError(f"non-numeric constant in potential {text!r}")


@dataclass
class Potential:
    """Radial potential with optional exact derivative and a declared floor.

    `declared_floor` is the stated infimum of V over the domain; solver
    hypotheses are checked against it.  When built from an expression the
    floor is estimated as the minimum over a dense radial sample unless
    given explicitly.
    """

    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray] | None
    declared_floor: float
    spec_string: str

    def sample(self, grid: RadialGrid) -> np.ndarray:
        vals = np.asarray(self.func(grid.nodes), dtype=float)
        vals = np.broadcast_to(vals, grid.nodes.shape).copy()
        if not np.all(np.isfinite(vals)):
            raise PotentialError("potential is not finite on the grid nodes")
        if self.declared_floor > vals.min() + 1e-12 * max(1.0, abs(vals.min())):
            raise PotentialError(
                f"declared floor {self.declared_floor} exceeds sampled minimum {vals.min()}"
            )
        return vals

    def radial_drift(self, grid: RadialGrid) -> np.ndarray:
        """r V'(r) at the nodes; symbolic when available, else central FD."""
        r = grid.nodes
        if self.deriv is not None:
            return r * np.broadcast_to(np.asarray(self.deriv(r), dtype=float), r.shape)
        v = self.sample(grid)
        dv = np.gradient(v, r)
        return r * dv


def constant_potential(value: float) -> Potential:
    v = float(value)
    return Potential(
        func=lambda r: np.full_like(np.asarray(r, dtype=float), v),
        deriv=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        declared_floor=v,
        spec_string=f"const {v!r}",
    )


def expression_potential(text: str, declared_floor: float | None = None,
                         floor_scan: tuple[float, float] | None = None) -> Potential:
    """Potential from the documented arithmetic grammar, e.g. ``1 + r^2 / 4``."""
    text = text.strip()
    _validate_expression(text)
    r = sympy.Symbol("r", positive=True)
    expr = sympy.sympify(text.replace("^", "**"),
                         locals={"r": r, "exp": sympy.exp, "log": sympy.log})
    dexpr = sympy.diff(expr, r)
    func = sympy.lambdify(r, expr, modules="numpy")
    deriv = sympy.lambdify(r, dexpr, modules="numpy")
    if declared_floor is None:
        if floor_scan is None:
            raise PotentialError("expression potential needs a floor or a scan range")
        rs = np.linspace(floor_scan[0], floor_scan[1], 4097)
        vals = np.asarray(func(rs), dtype=float)
        vals = np.broadcast_to(vals, rs.shape)
        if not np.all(np.isfinite(vals)):
            raise PotentialError(f"potential {text!r} is not finite on the domain")
        declared_floor = float(vals.min())
    return Potential(func=func, deriv=deriv, declared_floor=float(declared_floor),
                     spec_string=f"expr {text}")


def parse_potential_spec(spec: str, floor_scan: tuple[float, float]) -> Potential:
    """Parse a config potential value: ``const <value>`` or ``expr <expression>``."""
    parts = spec.strip().split(None, 1)
    if len(parts) != 2:
        raise PotentialError(f"potential spec must be 'const <v>' or 'expr <e>', got {spec!r}")
    kind, rest = parts
    if kind == "const":
        try:
            return constant_potential(float(rest))
        except ValueError as exc:
            raise PotentialError(f"bad constant potential {rest!r}") from exc
    if kind == "expr":
        return expression_potential(rest, floor_scan=floor_scan)
    raise PotentialError(f"unknown potential kind {kind!r}")
