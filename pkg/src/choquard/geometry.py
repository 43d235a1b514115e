"""Radial geometry: domains, graded grids, and weighted quadrature.

Integrals of radial functions over an N-dimensional annulus or truncated
exterior domain reduce to weighted 1D sums,

    int_Omega f dx = omega_{N-1} * int_a^R f(r) r^(N-1) dr
                  ~= omega_{N-1} * sum_i w_i f(r_i),

where omega_{N-1} = 2 pi^(N/2) / Gamma(N/2) is the surface measure of the
unit sphere.  The node weights w_i are exact moments of r^(N-1) against the
piecewise-linear hat basis, so every piecewise-linear function (in
particular every constant and every linear function) integrates exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

ANNULUS = "annulus"
EXTERIOR = "exterior"


class GridError(ValueError):
    """Invalid domain or grid construction."""


def sphere_measure(dimension: int) -> float:
    """Surface measure of the unit sphere S^(N-1) in R^N."""
    if dimension < 2:
        raise GridError(f"dimension must be >= 2, got {dimension}")
    return 2.0 * pi ** (dimension / 2.0) / gamma(dimension / 2.0)


@dataclass(frozen=True)
class RadialDomain:
    """An annulus a < |x| < b or the truncated exterior a < |x| < R.

    Both geometries exclude the origin; `a > 0` always.  For exterior
    domains `truncation_R` is the outer computational radius of the
    truncated problem (the physical domain is unbounded).
    """

    kind: str
    a: float
    b: float | None = None
    truncation_R: float | None = None
    dimension: int = 3

    def __post_init__(self):
        if self.kind not in (ANNULUS, EXTERIOR):
            raise GridError(f"unknown domain kind {self.kind!r}")
        if self.dimension < 2 or int(self.dimension) != self.dimension:
            raise GridError(f"dimension must be an integer >= 2, got {self.dimension}")
        if not self.a > 0:
            raise GridError(f"inner radius must be positive, got a={self.a}")
        if self.kind == ANNULUS:
            if self.b is None or not self.b > self.a:
                raise GridError(f"annulus needs b > a, got a={self.a}, b={self.b}")
            if self.truncation_R is not None:
                raise GridError("annulus takes no truncation_R")
        else:
            if self.truncation_R is None or not self.truncation_R > self.a:
                raise GridError(
                    f"exterior domain needs truncation_R > a, got a={self.a}, "
                    f"truncation_R={self.truncation_R}"
                )
            if self.b is not None:
                raise GridError("exterior domain takes no outer radius b")

    @property
    def outer(self) -> float:
        """Outer computational radius (b for annuli, truncation_R otherwise)."""
        return self.b if self.kind == ANNULUS else self.truncation_R

    @property
    def volume(self) -> float:
        """N-dimensional volume of the (truncated) domain."""
        n = self.dimension
        return sphere_measure(n) * (self.outer**n - self.a**n) / n


def annulus(a: float, b: float, dimension: int = 3) -> RadialDomain:
    return RadialDomain(ANNULUS, a, b=b, dimension=dimension)


def exterior(a: float, truncation_R: float | None = None, dimension: int = 3) -> RadialDomain:
    """Exterior domain |x| > a, truncated at R (default 16 a)."""
    if truncation_R is None:
        truncation_R = 16.0 * a
    return RadialDomain(EXTERIOR, a, truncation_R=truncation_R, dimension=dimension)


@dataclass(frozen=True)
class RadialGrid:
    """Nodes and hat-basis quadrature weights for one radial domain.

    `quad_weights[i]` is the exact moment  int phi_i(r) r^(N-1) dr  of the
    hat function at node i, so `sphere_measure * quad_weights @ f(nodes)`
    reproduces the volume integral of the piecewise-linear interpolant of f
    exactly.  `cell_moments[j]` is  int_{r_j}^{r_{j+1}} r^(N-1) dr, used by
    the stiffness form (gradients are cellwise constant).
    """

    domain: RadialDomain
    nodes: np.ndarray
    quad_weights: np.ndarray
    cell_moments: np.ndarray
    sphere_measure: float

    def __post_init__(self):
        for arr in (self.nodes, self.quad_weights, self.cell_moments):
            arr.flags.writeable = False

    @property
    def n_cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    def integrate_values(self, values: np.ndarray) -> float:
        return self.sphere_measure * float(self.quad_weights @ values)

    @property
    def grid_hash(self) -> str:
        h = hashlib.sha256()
        d = self.domain
        h.update(f"{d.kind},{d.a!r},{d.outer!r},{d.dimension}".encode())
        h.update(self.nodes.tobytes())
        return h.hexdigest()[:16]


def build_grid(domain: RadialDomain, n: int, grading: str = "uniform",
               ratio: float = 1.04) -> RadialGrid:
    """Build a grid with n cells (n+1 nodes) on the domain.

    grading "uniform" gives equal spacing; "geometric" grows cell widths by
    `ratio` per cell, which concentrates nodes near the inner boundary when
    ratio > 1 (the useful setting for exterior domains).
    """
    if n < 16:
        raise GridError(f"need at least 16 cells, got n={n}")
    lo, hi = domain.a, domain.outer
    if grading == "uniform":
        nodes = np.linspace(lo, hi, n + 1)
    elif grading == "geometric":
        if not ratio > 0:
            raise GridError(f"geometric grading needs ratio > 0, got {ratio}")
        if abs(ratio - 1.0) < 1e-12:
            nodes = np.linspace(lo, hi, n + 1)
        else:
            # first cell width from the geometric-sum closure to hi
            h1 = (hi - lo) * (ratio - 1.0) / (ratio**n - 1.0)
            k = np.arange(n + 1)
            nodes = lo + h1 * (ratio**k - 1.0) / (ratio - 1.0)
            nodes[-1] = hi
    else:
        raise GridError(f"unknown grading {grading!r}")

    N = domain.dimension
    rl, rr = nodes[:-1], nodes[1:]
    h = rr - rl
    m0 = (rr**N - rl**N) / N           # int_cell r^(N-1) dr
    m1 = (rr ** (N + 1) - rl ** (N + 1)) / (N + 1)  # int_cell r^N dr
    w_left = (rr * m0 - m1) / h        # hat decreasing over the cell
    w_right = (m1 - rl * m0) / h       # hat increasing over the cell
    weights = np.zeros(n + 1)
    weights[:-1] += w_left
    weights[1:] += w_right
    return RadialGrid(domain, nodes, weights, m0, sphere_measure(N))


@dataclass
class Field:
    """A radial function sampled at the grid nodes."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise GridError(
                f"field has {vals.size} values for {self.grid.nodes.size} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: RadialGrid, fn) -> "Field":
        return cls(grid, fn(grid.nodes))

    @classmethod
    def constant(cls, grid: RadialGrid, c: float) -> "Field":
        return cls(grid, np.full_like(grid.nodes, float(c)))

    def _check_same_grid(self, other: "Field"):
        if other.grid is not self.grid and other.grid.grid_hash != self.grid.grid_hash:
            raise GridError("fields live on different grids")

    def __add__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


def integrate(f: Field) -> float:
    """int_Omega f dx for radial f, via the weighted nodal quadrature."""
    return f.grid.integrate_values(f.values)


def gradient_square_integral(f: Field) -> float:
    """int_Omega |grad f|^2 dx with cellwise difference-quotient gradients.

    Exact for piecewise-linear f, since the gradient is constant per cell
    and the cell moments of r^(N-1) are exact.
    """
    g = f.grid
    slopes = np.diff(f.values) / g.spacings
    return g.sphere_measure * float(g.cell_moments @ slopes**2)


def h1_norm(f: Field, bc: str | None = None) -> float:
    """Sobolev norm (int f^2 + |f'|^2 dx)^(1/2) under the radial measure.

    The mass term uses the nodal quadrature, the gradient term cellwise
    difference quotients.  When bc="dirichlet" is passed the constrained
    endpoint values are checked to vanish.
    """
    if bc == "dirichlet":
        endpoints = [f.values[0]]
        if f.grid.domain.kind == ANNULUS:
            endpoints.append(f.values[-1])
        if any(abs(v) > 0 for v in endpoints):
            raise GridError("dirichlet field must vanish on the boundary")
    mass = f.grid.integrate_values(f.values**2)
    return float(np.sqrt(mass + gradient_square_integral(f)))


def lp_norm(f: Field, q: float) -> float:
    """Lebesgue norm (int |f|^q dx)^(1/q), q >= 1."""
    if q < 1:
        raise GridError(f"lp_norm needs exponent q >= 1, got {q}")
    return float(f.grid.integrate_values(np.abs(f.values) ** q) ** (1.0 / q))
