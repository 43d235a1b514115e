"""Analytic audits of computed solutions.

* Pohozaev identity: a Dirichlet solution v of the full equation satisfies

      (2 - N + (a+N)/p) int |grad v|^2  -  (N - (a+N)/p) int V v^2
          - int v^2 (grad V . x)  =  int_dOmega v_nu^2 (x . nu) dsigma,

  with the boundary integral reducing for radial fields on an annulus to
  omega_{N-1} (b^N v'(b)^2 - a^N v'(a)^2).  The identity is exact in the
  continuum, so the normalised residual of a converged discrete solution
  must fall under mesh refinement.

* Criticality classification of (N, alpha, p) against the nonexistence
  threshold (N + alpha)/(N - 2), next to which Dirichlet solutions on
  strictly star-shaped domains are forced to vanish.  Annuli and exterior
  domains are not star-shaped, so existence there does not contradict the
  threshold; the classifier reports the regime only.

* Limit sweep alpha -> 0: the constrained level J_alpha converges to the
  local level J_0 (unit L^2p constraint) and minimisers converge in H1.
  The sweep solves along a decreasing alpha ladder, warm-starting each
  solve from the previous minimiser rescaled onto the new manifold.

* Decay fit on exterior domains: least-squares exponent of |v| ~ C r^-beta
  over the outer half of the grid, reported against the radial-embedding
  floor beta >= N/2 - 1.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import energy as _en
from . import solver as _sv
from .geometry import EXTERIOR, Field, RadialGrid, gradient_square_integral, h1_norm
from .riesz import RieszKernel, assemble_kernel


class DiagnosticsError(ValueError):
    """Invalid diagnostic request."""


class DirichletOnlyError(DiagnosticsError):
    """The Pohozaev identity as audited assumes u = 0 on the boundary."""


@dataclass(frozen=True)
class PohozaevReport:
    grad_term: float        # (2 - N + (a+N)/p) int |grad v|^2
    potential_term: float   # -(N - (a+N)/p) int V v^2
    drift_term: float       # -int v^2 (grad V . x)
    boundary_term: float    # omega (b^N v'(b)^2 - a^N v'(a)^2)
    residual: float         # |sum of volume terms - boundary| / scale
    scale: float            # sum of |terms|


def _one_sided_derivative(nodes: np.ndarray, values: np.ndarray) -> float:
    """Second-order one-sided derivative at nodes[0] (non-uniform 3-point)."""
    x0, x1, x2 = nodes[:3]
    f0, f1, f2 = values[:3]
    c0 = (2 * x0 - x1 - x2) / ((x0 - x1) * (x0 - x2))
    c1 = (x0 - x2) / ((x1 - x0) * (x1 - x2))
    c2 = (x0 - x1) / ((x2 - x0) * (x2 - x1))
    return float(c0 * f0 + c1 * f1 + c2 * f2)


def pohozaev_residual(v: Field, problem: _en.Problem,
                      kernel: RieszKernel | None = None) -> PohozaevReport:
    """Term-by-term audit of the Pohozaev identity for a Dirichlet solution.

    `v` must be the rescaled solution of the unmultiplied equation.  The
    kernel argument is accepted for interface symmetry and only checked for
    consistency; the identity itself involves no convolution once the
    equation has been tested with u.
    """
    if problem.bc != _en.DIRICHLET:
        raise DirichletOnlyError(
            "dirichlet-only: the audited identity assumes u = 0 on the boundary"
        )
    if kernel is not None and abs(kernel.alpha - problem.alpha) > 0:
        raise DiagnosticsError("kernel order does not match the problem")
    g = v.grid
    N = g.domain.dimension
    coeff = (problem.alpha + N) / problem.p

    grad2 = gradient_square_integral(v)
    vv = problem.potential.sample(g)
    mass = g.integrate_values(vv * v.values**2)
    drift = g.integrate_values(problem.potential.radial_drift(g) * v.values**2)

    grad_term = (2.0 - N + coeff) * grad2
    potential_term = -(N - coeff) * mass
    drift_term = -drift

    a, b = g.domain.a, g.domain.outer
    du_a = _one_sided_derivative(g.nodes, v.values)
    du_b = _one_sided_derivative(g.nodes[::-1], v.values[::-1])
    boundary = g.sphere_measure * (b**N * du_b**2 - a**N * du_a**2)

    lhs = grad_term + potential_term + drift_term
    scale = abs(grad_term) + abs(potential_term) + abs(drift_term) + abs(boundary)
    residual = abs(lhs - boundary) / scale if scale > 0 else 0.0
    return PohozaevReport(grad_term, potential_term, drift_term, boundary,
                          residual, scale)


@dataclass(frozen=True)
class Classification:
    label: str
    threshold: float
    note: str


SUBCRITICAL = "SubcriticalForIdentity"
CRITICAL = "CriticalThreshold"
SUPERCRITICAL = "SupercriticalThreshold"

_STARSHAPE_NOTE = (
    "nonexistence at and above the threshold applies to strictly star-shaped "
    "domains; annuli and exterior domains are not star-shaped, so existence "
    "there does not contradict it"
)


def classify_nonexistence(N: int, alpha: float, p: float) -> Classification:
    """Regime of p against the Dirichlet nonexistence threshold (N+a)/(N-2)."""
    if N < 3:
        raise DiagnosticsError("threshold (N+alpha)/(N-2) is undefined for N = 2")
    if not 0.0 < alpha < N:
        raise DiagnosticsError(f"alpha must lie in (0, N), got {alpha}")
    threshold = (N + alpha) / (N - 2.0)
    if abs(p - threshold) <= 1e-12 * max(1.0, threshold):
        label = CRITICAL
    elif p < threshold:
        label = SUBCRITICAL
    else:
        label = SUPERCRITICAL
    return Classification(label, threshold, _STARSHAPE_NOTE)


@dataclass(frozen=True)
class GammaSweepRow:
    alpha: float
    J_alpha: float
    J0: float
    h1_dist: float
    mu_alpha: float


def _nonneg_orientation(u: Field) -> Field:
    if u.grid.integrate_values(u.values) < 0.0:
        return Field(u.grid, -u.values)
    return u


def gamma_sweep(problem: _en.Problem, grid: RadialGrid, alphas, opts: _sv.SolveOptions,
                warm_start: bool = True, kernels: dict | None = None):
    """Solve along a decreasing alpha ladder and against the local limit.

    Returns (rows, local_result).  Each row reports J_alpha, the limit level
    J0, the H1 distance between the minimisers (both oriented non-negative),
    and mu_alpha.  A non-converged inner solve aborts the sweep with the
    failing alpha named.  `kernels` optionally caches assembled kernels
    keyed by alpha.
    """
    if grid.domain.kind == EXTERIOR:
        raise DiagnosticsError("the limit sweep is formulated on annuli")
    alphas = [float(a) for a in alphas]
    if any(a2 >= a1 for a1, a2 in zip(alphas, alphas[1:])):
        raise DiagnosticsError("alphas must be strictly decreasing")

    local = _sv.solve_local(replace(problem, alpha=alphas[0]), grid, opts)
    if not local.converged:
        raise _sv.SolverError("local limit solve did not converge")
    u0 = _nonneg_orientation(local.u)

    rows = []
    previous = None
    for a in alphas:
        prob_a = replace(problem, alpha=a)
        if kernels is not None and a in kernels:
            kern = kernels[a]
        else:
            kern = assemble_kernel(grid, a)
            if kernels is not None:
                kernels[a] = kern
        res = _sv.minimize_constrained(prob_a, grid, kern, opts,
                                       initial=previous if warm_start else None)
        if not res.converged:
            raise _sv.SolverError(
                f"sweep solve at alpha={a} did not converge "
                f"(grad norm {res.grad_norm:.3e} after {res.iterations} iterations)"
            )
        ua = _nonneg_orientation(res.u)
        rows.append(GammaSweepRow(
            alpha=a,
            J_alpha=res.J,
            J0=local.J,
            h1_dist=h1_norm(ua - u0),
            mu_alpha=res.mu,
        ))
        previous = res.u
    return rows, local


@dataclass(frozen=True)
class DecayFit:
    beta: float           # fitted exponent of |v| ~ C r^-beta
    amplitude: float      # fitted C
    strauss_floor: float  # N/2 - 1, the radial-embedding decay floor
    r_lo: float
    r_hi: float


def decay_fit(v: Field, window_fraction: float = 0.5) -> DecayFit:
    """Least-squares power-law fit of log |v| against log r, outer window.

    Requires an exterior-domain field, strictly positive on the fit window
    (sign changes or zeros raise).  The reported floor N/2 - 1 is the decay
    the radial embedding guarantees can be controlled; computed ground
    states typically fall off much faster.
    """
    g = v.grid
    if g.domain.kind != EXTERIOR:
        raise DiagnosticsError("decay fit expects an exterior-domain field")
    if not 0.0 < window_fraction <= 1.0:
        raise DiagnosticsError("window_fraction must lie in (0, 1]")
    start = int(np.floor(len(g.nodes) * (1.0 - window_fraction)))
    r = g.nodes[start:]
    vals = v.values[start:]
    if np.any(vals <= 0.0):
        raise DiagnosticsError("sign/zero in window: cannot fit a power law")
    slope, intercept = np.polyfit(np.log(r), np.log(vals), 1)
    N = g.domain.dimension
    return DecayFit(beta=float(-slope), amplitude=float(np.exp(intercept)),
                    strauss_floor=N / 2.0 - 1.0, r_lo=float(r[0]), r_hi=float(r[-1]))


# ---------------------------------------------------------------------------
# delimited output


def _atomic_write_text(text: str, path) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_gamma_csv(rows, path) -> None:
    lines = ["alpha,J_alpha,J0,h1_dist,mu_alpha"]
    for row in rows:
        lines.append(f"{row.alpha!r},{row.J_alpha!r},{row.J0!r},"
                     f"{row.h1_dist!r},{row.mu_alpha!r}")
    _atomic_write_text("\n".join(lines) + "\n", path)


def write_pohozaev_csv(report: PohozaevReport, path) -> None:
    lines = [
        "term,value",
        f"grad_term,{report.grad_term!r}",
        f"potential_term,{report.potential_term!r}",
        f"drift_term,{report.drift_term!r}",
        f"boundary_term,{report.boundary_term!r}",
        f"residual,{report.residual!r}",
    ]
    _atomic_write_text("\n".join(lines) + "\n", path)
