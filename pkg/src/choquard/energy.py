"""Quadratic energy, nonlocal interaction functional, and their gradients.

The minimisation works with two functionals of a nodal field u:

* the quadratic energy
      Q(u) = 1/2 int (|grad u|^2 + V u^2) dx,
  discretised with piecewise-linear elements under the radial measure
  (stiffness from exact cell moments of r^(N-1), V mass by nodal
  quadrature), and

* the interaction integral
      D(u) = int (I_a * |u|^p) |u|^p dx,
  whose constraint level set defines the minimisation manifold.

Gradients are Riesz representatives in the weighted L2 inner product
  <f, g> = omega sum_i w_i f_i g_i,
so the directional derivative of either functional along v is <grad, v>.
With that convention the discrete gradients below are the exact
derivatives of the discrete functionals, which the finite-difference
oracles in the test suite verify.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import EXTERIOR, Field, GridError, RadialDomain, RadialGrid
from .potentials import Potential
from .riesz import RieszKernel

NEUMANN = "neumann"
DIRICHLET = "dirichlet"


class ProblemError(ValueError):
    """Invalid problem data."""


class TheoremRangeWarning(UserWarning):
    """Parameters outside the range covered by the existence theorems."""


@dataclass
class Problem:
    """Domain, boundary condition, potential, and exponents of one run."""

    domain: RadialDomain
    bc: str
    potential: Potential
    p: float
    alpha: float

    def __post_init__(self):
        N = self.domain.dimension
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ProblemError(f"bc must be neumann or dirichlet, got {self.bc!r}")
        if not self.p >= 1.0:
            raise ProblemError(f"nonlinearity exponent must satisfy p >= 1, got {self.p}")
        if not 0.0 < self.alpha < N:
            raise ProblemError(f"alpha must lie in (0, N)=(0, {N}), got {self.alpha}")
        if self.domain.kind == EXTERIOR and self.p <= (N + self.alpha) / N:
            warnings.warn(
                f"exterior domain with p={self.p} outside theorem range "
                f"p > (N+alpha)/N = {(N + self.alpha) / N:.6g}; existence not guaranteed",
                TheoremRangeWarning, stacklevel=2,
            )

    @property
    def existence_floor_ok(self) -> bool:
        """Whether the declared inf V meets the existence hypotheses.

        inf V > 0 is required except for the Dirichlet annulus with N >= 3,
        where V >= 0 suffices.
        """
        floor = self.potential.declared_floor
        if floor > 0:
            return True
        relaxed = (self.bc == DIRICHLET and self.domain.kind != EXTERIOR
                   and self.domain.dimension >= 3)
        return relaxed and floor >= 0


def free_node_mask(problem: Problem, grid: RadialGrid) -> np.ndarray:
    """Nodes not pinned by the Dirichlet condition.

    The condition applies on the physical boundary: both spheres of an
    annulus, only the inner sphere of an exterior domain (the truncation
    radius keeps the natural condition; solutions decay there).
    """
    mask = np.ones(len(grid.nodes), dtype=bool)
    if problem.bc == DIRICHLET:
        mask[0] = False
        if problem.domain.kind != EXTERIOR:
            mask[-1] = False
    return mask


def constrained_values_ok(problem: Problem, grid: RadialGrid, values: np.ndarray,
                          tol: float = 0.0) -> bool:
    fixed = ~free_node_mask(problem, grid)
    return bool(np.all(np.abs(values[fixed]) <= tol))


def weighted_inner(grid: RadialGrid, f: np.ndarray, g: np.ndarray) -> float:
    return grid.sphere_measure * float((grid.quad_weights * f) @ g)


def weighted_norm(grid: RadialGrid, f: np.ndarray) -> float:
    return float(np.sqrt(max(weighted_inner(grid, f, f), 0.0)))


def stiffness_apply(grid: RadialGrid, values: np.ndarray) -> np.ndarray:
    """A @ values with the P1 stiffness matrix under the radial measure.

    The quadratic form values @ A @ values equals int |grad u|^2 r^(N-1) dr
    exactly for the piecewise-linear interpolant.
    """
    coef = grid.cell_moments / grid.spacings**2
    jumps = np.diff(values)
    out = np.zeros_like(values)
    out[:-1] -= coef * jumps
    out[1:] += coef * jumps
    return out


def operator_bands(problem: Problem, grid: RadialGrid) -> np.ndarray:
    """Symmetric tridiagonal B = stiffness + diag(w V) in banded storage.

    B represents the bilinear form int (grad u . grad v + V u v) dx up to
    the sphere-measure factor; it is the Hessian of Q in the same scaling.
    Returned in scipy solveh_banded layout (upper form, 2 x n).
    """
    coef = grid.cell_moments / grid.spacings**2
    v = problem.potential.sample(grid)
    n = len(grid.nodes)
    bands = np.zeros((2, n))
    bands[1, :-1] += coef
    bands[1, 1:] += coef
    bands[1] += grid.quad_weights * v
    bands[0, 1:] = -coef
    return bands


def quadratic_energy(u: Field, problem: Problem) -> float:
    """Q(u) = 1/2 int (|grad u|^2 + V u^2) dx on the problem's grid."""
    g = u.grid
    v = problem.potential.sample(g)
    slopes = np.diff(u.values) / g.spacings
    grad2 = float(g.cell_moments @ slopes**2)
    mass = float(g.quad_weights @ (v * u.values**2))
    return 0.5 * g.sphere_measure * (grad2 + mass)


def quadratic_gradient(u: Field, problem: Problem) -> Field:
    """Weighted-L2 gradient of Q; Dirichlet-constrained entries are zeroed."""
    g = u.grid
    v = problem.potential.sample(g)
    out = stiffness_apply(g, u.values) / g.quad_weights + v * u.values
    free = free_node_mask(problem, g)
    out = np.where(free, out, 0.0)
    return Field(g, out)


def _signed_power(values: np.ndarray, expo: float) -> np.ndarray:
    """sign(u) |u|^expo, vanishing where u = 0 (covers p < 2 cleanly)."""
    if expo == 1.0:
        return values.copy()
    if expo == 0.0:
        return np.sign(values)
    return np.sign(values) * np.abs(values) ** expo


def interaction_integral(u: Field, kernel: RieszKernel, p: float) -> float:
    """D(u) = int (I_a * |u|^p) |u|^p dx via the symmetrised bilinear form."""
    kernel._check_field(u)
    g = u.grid
    f = np.abs(u.values) ** p
    return g.sphere_measure * float((g.quad_weights * f) @ kernel.apply_sym_values(f))


def interaction_gradient(u: Field, kernel: RieszKernel, p: float) -> Field:
    """Weighted-L2 gradient of D: 2p (I_a * |u|^p) sign(u) |u|^(p-1)."""
    kernel._check_field(u)
    f = np.abs(u.values) ** p
    conv = kernel.apply_sym_values(f)
    return Field(u.grid, 2.0 * p * conv * _signed_power(u.values, p - 1.0))


def power_integral(u: Field, p: float) -> float:
    """int |u|^(2p) dx, the local counterpart of the interaction integral."""
    return u.grid.integrate_values(np.abs(u.values) ** (2.0 * p))


def power_gradient(u: Field, p: float) -> Field:
    """Weighted-L2 gradient of int |u|^(2p) dx."""
    return Field(u.grid, 2.0 * p * _signed_power(u.values, 2.0 * p - 1.0))
