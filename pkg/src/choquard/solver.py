"""Constrained minimisation of the quadratic energy over the interaction
manifold, Lagrange multiplier extraction, and rescaling to a PDE solution.

The iteration is projected gradient with an exact retraction: the search
direction is the gradient of Q projected onto the tangent space of the
constraint manifold at the current iterate, a backtracking (Armijo) line
search guarantees energy descent, non-negativity is enforced by taking
|u| (which never increases Q), and the homogeneity of the constraint makes
renormalisation an exact projection back onto the manifold.

Two gradient metrics are available.  `preconditioner="none"` uses the
weighted-L2 metric, in which the gradient of Q is W^-1 B u; its conditioning
degrades like the square of the node count, so reaching tight tolerances on
fine grids is impractical.  The default `preconditioner="energy"` measures
gradients in the inner product induced by B itself (the Hessian of Q), which
makes the step an almost-Newton fixed-point update and converges in a
grid-independent number of iterations.  Convergence is always *declared* on
the weighted-L2 tangent-gradient norm, independent of the stepping metric.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import linalg as _sl

from . import energy as _en
from .geometry import Field, GridError, RadialGrid, h1_norm
from .riesz import RieszKernel


class SolverError(RuntimeError):
    """Solver misuse or numerical failure."""


class ZeroFieldError(SolverError):
    """Renormalisation of the zero field requested."""


class NoRescalingError(SolverError):
    """p = 1 has no homogeneous rescaling to the unmultiplied equation."""


@dataclass
class SolveOptions:
    max_iters: int = 50000
    tol_grad: float = 1e-9
    tol_constraint: float = 1e-12
    step_rule: str = "armijo"          # "armijo" | "fixed"
    tau: float = 1.0                   # initial (armijo) or constant (fixed) step
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    seed: int = 0
    enforce_nonneg: bool = True
    preconditioner: str = "energy"     # "energy" | "none"
    log_history: bool = False

    def __post_init__(self):
        if self.tol_grad <= 0 or self.tol_constraint <= 0:
            raise SolverError("tolerances must be positive")
        if self.step_rule not in ("armijo", "fixed"):
            raise SolverError(f"unknown step rule {self.step_rule!r}")
        if not (0.0 < self.armijo_c < 1.0 and 0.0 < self.armijo_shrink < 1.0):
            raise SolverError("armijo parameters must lie in (0, 1)")
        if self.tau <= 0:
            raise SolverError("step size must be positive")
        if self.preconditioner not in ("energy", "none"):
            raise SolverError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveResult:
    u: Field                  # constrained minimiser, constraint value 1
    J: float                  # Q(u) at the minimiser
    mu: float                 # least-squares Lagrange multiplier
    v: Field | None           # rescaled PDE solution (None for p = 1)
    iterations: int
    grad_norm: float
    converged: bool
    constraint_value: float
    history: list = dc_field(default_factory=list)


class InteractionConstraint:
    """Level set D(u) = int (I_a * |u|^p)|u|^p dx = 1; homogeneity degree 2p."""

    def __init__(self, kernel: RieszKernel, p: float):
        self.kernel = kernel
        self.p = float(p)

    def value_and_gradient(self, u: Field):
        g = u.grid
        f = np.abs(u.values) ** self.p
        conv = self.kernel.apply_sym_values(f)
        val = g.sphere_measure * float((g.quad_weights * f) @ conv)
        grad = 2.0 * self.p * conv * _en._signed_power(u.values, self.p - 1.0)
        return val, grad

    def value(self, u: Field) -> float:
        g = u.grid
        f = np.abs(u.values) ** self.p
        return g.sphere_measure * float((g.quad_weights * f) @ self.kernel.apply_sym_values(f))


class PowerConstraint:
    """Level set int |u|^(2p) dx = 1 (unit L^(2p) norm); degree 2p."""

    def __init__(self, p: float):
        self.p = float(p)

    def value_and_gradient(self, u: Field):
        val = _en.power_integral(u, self.p)
        grad = 2.0 * self.p * _en._signed_power(u.values, 2.0 * self.p - 1.0)
        return val, grad

    def value(self, u: Field) -> float:
        return _en.power_integral(u, self.p)


def renormalize(u: Field, constraint) -> Field:
    """Scale u onto the constraint manifold: sigma = D(u)^(-1/(2p))."""
    val = constraint.value(u)
    if val <= 0.0:
        raise ZeroFieldError("cannot renormalise a zero (or degenerate) field")
    sigma = val ** (-1.0 / (2.0 * constraint.p))
    return Field(u.grid, sigma * u.values)


def initial_guess(problem: _en.Problem, grid: RadialGrid, seed: int,
                  constraint=None) -> Field:
    """Strictly positive seeded bump, zero on Dirichlet-pinned nodes.

    With a constraint given, the guess is renormalised onto the manifold.
    """
    r = grid.nodes
    lo, hi = grid.domain.a, grid.domain.outer
    width = hi - lo
    if problem.bc == _en.DIRICHLET:
        if grid.domain.kind == _en.EXTERIOR:
            base = (r - lo) * np.exp(-4.0 * (r - lo) / width)
        else:
            base = (r - lo) * (hi - r) / (0.25 * width**2)
    else:
        if grid.domain.kind == _en.EXTERIOR:
            base = np.exp(-4.0 * (r - lo) / width) + 0.05
        else:
            base = 1.0 + np.exp(-(((r - 0.5 * (lo + hi)) / (0.3 * width)) ** 2))
    rng = np.random.default_rng(seed)
    vals = base * (1.0 + 0.05 * (2.0 * rng.random(len(r)) - 1.0))
    vals[~_en.free_node_mask(problem, grid)] = 0.0
    guess = Field(grid, vals)
    if constraint is not None:
        guess = renormalize(guess, constraint)
    return guess


class _EnergyMetric:
    """Factorised action of B^-1 on the free nodes (tridiagonal Cholesky)."""

    def __init__(self, problem: _en.Problem, grid: RadialGrid):
        bands = _en.operator_bands(problem, grid)
        free = _en.free_node_mask(problem, grid)
        idx = np.flatnonzero(free)
        self.lo, self.hi = int(idx[0]), int(idx[-1]) + 1
        sub = bands[:, self.lo:self.hi].copy()
        sub[0, 0] = 0.0
        try:
            self.chol = _sl.cholesky_banded(sub)
        except _sl.LinAlgError as exc:
            raise SolverError(
                "energy operator is not positive definite; the existence "
                "hypotheses require inf V > 0 (or V >= 0 with a Dirichlet "
                "annulus in dimension >= 3)"
            ) from exc
        self.n = len(grid.nodes)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.lo:self.hi] = _sl.cho_solve_banded((self.chol, False),
                                                    rhs[self.lo:self.hi])
        return out


_STALL_WINDOW = 1000


def _minimize(problem: _en.Problem, grid: RadialGrid, constraint,
              opts: SolveOptions, initial: Field | None = None) -> SolveResult:
    if not problem.existence_floor_ok:
        raise SolverError(
            f"declared potential floor {problem.potential.declared_floor} violates "
            "the existence hypothesis (inf V > 0, weakened to V >= 0 only for the "
            "Dirichlet annulus with N >= 3)"
        )
    g = grid
    w = g.quad_weights
    vpot = problem.potential.sample(g)
    free = _en.free_node_mask(problem, g)
    metric = _EnergyMetric(problem, g) if opts.preconditioner == "energy" else None

    def q_energy(vals: np.ndarray) -> float:
        slopes = np.diff(vals) / g.spacings
        return 0.5 * g.sphere_measure * (
            float(g.cell_moments @ slopes**2) + float(w @ (vpot * vals**2))
        )

    def q_gradient(vals: np.ndarray) -> np.ndarray:
        out = _en.stiffness_apply(g, vals) / w + vpot * vals
        return np.where(free, out, 0.0)

    def retract(vals: np.ndarray) -> Field:
        if opts.enforce_nonneg:
            vals = np.abs(vals)
        return renormalize(Field(g, vals), constraint)

    if initial is not None:
        vals = np.where(free, initial.values, 0.0)
        if opts.enforce_nonneg:
            vals = np.abs(vals)
        u = renormalize(Field(g, vals), constraint)
    else:
        u = initial_guess(problem, g, opts.seed, constraint)
    Q = q_energy(u.values)
    history = []
    mu_ls = np.nan
    grad_norm = np.inf
    converged = False
    iterations = 0
    best_norm = np.inf
    best_at = 0

    for it in range(opts.max_iters):
        iterations = it
        dval, gD = constraint.value_and_gradient(u)
        gQ = q_gradient(u.values)
        gd_norm2 = _en.weighted_inner(g, gD, gD)
        if gd_norm2 <= 0.0:
            raise SolverError("degenerate constraint gradient")
        lam_l2 = _en.weighted_inner(g, gQ, gD) / gd_norm2
        gtan = gQ - lam_l2 * gD
        grad_norm = _en.weighted_norm(g, gtan)
        mu_ls = 2.0 * constraint.p * lam_l2
        if opts.log_history:
            history.append((it, Q, dval, grad_norm))
        if grad_norm <= opts.tol_grad:
            converged = True
            break
        if grad_norm < 0.67 * best_norm:
            best_norm, best_at = grad_norm, it
        elif it - best_at >= _STALL_WINDOW:
            break  # round-off floor of the gradient norm; converged stays False

        if metric is not None:
            hQ = u.values
            hD = metric.solve(w * gD)
        else:
            hQ, hD = gQ, gD
        denom = _en.weighted_inner(g, gD, hD)
        if denom == 0.0:
            raise SolverError("constraint gradient orthogonal to search metric")
        lam = _en.weighted_inner(g, gD, hQ) / denom
        h = hQ - lam * hD
        slope = _en.weighted_inner(g, gQ, h)  # directional derivative of Q along h

        if opts.step_rule == "fixed":
            u = retract(u.values - opts.tau * h)
            Q = q_energy(u.values)
            continue

        tau = opts.tau
        accepted = False
        for _ in range(60):
            trial = retract(u.values - tau * h)
            Qt = q_energy(trial.values)
            if Qt <= Q - opts.armijo_c * tau * slope or Qt <= Q * (1.0 + 1e-15):
                u, Q = trial, Qt
                accepted = True
                break
            tau *= opts.armijo_shrink
        if not accepted:
            raise SolverError(f"Armijo step-size underflow at iteration {it}")

    dval = constraint.value(u)
    result = SolveResult(
        u=u, J=Q, mu=float(mu_ls), v=None, iterations=iterations,
        grad_norm=grad_norm, converged=converged, constraint_value=dval,
        history=history,
    )
    if constraint.p > 1.0:
        result.v = rescale_to_solution(u, result.mu, constraint.p)
    return result


def minimize_constrained(problem: _en.Problem, grid: RadialGrid,
                         kernel: RieszKernel, opts: SolveOptions,
                         initial: Field | None = None) -> SolveResult:
    """Minimise Q over the nonlocal constraint manifold D_alpha(u) = 1.

    `initial` warm-starts the iteration from a given field (renormalised
    onto the manifold first); otherwise a seeded bump is used.
    """
    if kernel.grid is not grid and kernel.grid.grid_hash != grid.grid_hash:
        raise GridError("kernel was assembled on a different grid")
    if abs(kernel.alpha - problem.alpha) > 0:
        raise SolverError(
            f"kernel order {kernel.alpha} does not match problem alpha {problem.alpha}"
        )
    return _minimize(problem, grid, InteractionConstraint(kernel, problem.p), opts,
                     initial=initial)


def solve_local(problem: _en.Problem, grid: RadialGrid, opts: SolveOptions,
                initial: Field | None = None) -> SolveResult:
    """Minimise Q over the local manifold ||u||_{L^2p} = 1 (the alpha -> 0 limit)."""
    return _minimize(problem, grid, PowerConstraint(problem.p), opts, initial=initial)


def lagrange_multiplier(result: SolveResult) -> float:
    """Multiplier mu = 2 Q(u), from testing the Euler-Lagrange equation with u.

    Cross-checked against the least-squares multiplier stored on the result;
    the two agree at stationarity.
    """
    if not result.converged:
        raise SolverError("multiplier is only meaningful for a converged solve")
    return 2.0 * result.J


def rescale_to_solution(u: Field, mu: float, p: float) -> Field:
    """v = |mu|^(1/(2p-2)) u solves the unmultiplied equation; needs p > 1."""
    if p == 1.0:
        raise NoRescalingError(
            "p = 1 admits no homogeneous rescaling; report (u, mu) and the "
            "multiplier form of the equation instead"
        )
    return Field(u.grid, abs(mu) ** (1.0 / (2.0 * p - 2.0)) * u.values)


def pde_residual(v: Field, problem: _en.Problem, kernel: RieszKernel) -> float:
    """Weighted norm of the discrete weak-form residual of the full equation,

        grad_Q(v) - (I_a * |v|^p)|v|^(p-2) v,

    over the free test space, normalised by ||v||_H1.  Zero fields return 0.
    """
    scale = h1_norm(v)
    if scale == 0.0:
        return 0.0
    g = v.grid
    gq = _en.quadratic_gradient(v, problem).values
    f = np.abs(v.values) ** problem.p
    nonlocal_term = kernel.apply_sym_values(f) * _en._signed_power(v.values, problem.p - 1.0)
    resid = np.where(_en.free_node_mask(problem, g), gq - nonlocal_term, 0.0)
    return _en.weighted_norm(g, resid) / scale


# ---------------------------------------------------------------------------
# solution interchange (JSON)


def solution_to_dict(result: SolveResult, problem: _en.Problem, grid: RadialGrid,
                     opts: SolveOptions, timestamp: str = "") -> dict:
    dom = grid.domain
    return {
        "meta": {
            "N": dom.dimension,
            "alpha": problem.alpha,
            "p": problem.p,
            "bc": problem.bc,
            "domain": {
                "kind": dom.kind,
                "a": dom.a,
                "b": dom.b,
                "truncation_R": dom.truncation_R,
            },
            "V-spec": problem.potential.spec_string,
            "seed": opts.seed,
            "tolerances": {
                "tol_grad": opts.tol_grad,
                "tol_constraint": opts.tol_constraint,
            },
            "timestamp": timestamp,
        },
        "grid": {"nodes": grid.nodes.tolist()},
        "u": {"values": result.u.values.tolist()},
        "v": {"values": result.v.values.tolist()} if result.v is not None else None,
        "J": result.J,
        "mu": result.mu,
        "iterations": result.iterations,
        "grad_norm": result.grad_norm,
        "converged": result.converged,
    }


def write_solution(data: dict, path) -> None:
    """Atomic JSON write (temp file + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(data, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_solution(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
