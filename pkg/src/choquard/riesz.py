"""Radial reduction of the Riesz potential and its discrete convolution.

For radial f supported on the domain, the N-dimensional convolution with
the Riesz kernel C_{N,a} |x|^(a-N) collapses to one radial integral,

    (I_a * f)(r) = int k_a(r, s) f(s) s^(N-1) ds,

where the reduced kernel k_a(r, s) carries the angular integral over the
sphere.  Three routes to k_a are implemented and cross-checked against
each other:

* `angular_kernel` - direct adaptive quadrature of the angular integral
  (the defining formula; slow, used for validation),
* the elementary closed form for N = 3,
      k_a(r,s) = C 2 pi [(r+s)^(a-1) - |r-s|^(a-1)] / ((a-1) r s),
  with the logarithmic limit at a = 1,
* a Gauss hypergeometric reduction valid for every N >= 2,
      k_a(r,s) = C_{N,a} omega_{N-1} (r^2+s^2)^((a-N)/2)
                 2F1(lam/2, (lam+1)/2; N/2; z^2),
  lam = (N-a)/2, z = 2 r s / (r^2 + s^2).

`assemble_kernel` turns k_a into a dense matrix acting on nodal values:
M[i, j] integrates k_a(r_i, s) s^(N-1) against the hat function at node j,
with the integration split at s = r_i so the diagonal stays finite for
every a in (0, N) even though k_a(r, r) = inf for a <= 1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from math import gamma, pi, sqrt

import numpy as np
from scipy import integrate as _si
from scipy import special as _sp

from .geometry import Field, GridError, RadialGrid, sphere_measure


class RieszError(ValueError):
    """Invalid Riesz order or kernel usage."""


class SingularDiagonal(RieszError):
    """Pointwise kernel requested on the diagonal where it diverges."""


def riesz_constant(N: int, alpha: float) -> float:
    """Normalisation C_{N,a} = Gamma((N-a)/2) / (Gamma(a/2) pi^(N/2) 2^a)."""
    if not 0.0 < alpha < N:
        raise RieszError(f"Riesz order must lie in (0, N)=(0, {N}), got {alpha}")
    return gamma((N - alpha) / 2.0) / (gamma(alpha / 2.0) * pi ** (N / 2.0) * 2.0**alpha)


# ---------------------------------------------------------------------------
# pointwise kernel evaluators


def _kernel_n3(r, s, alpha, const):
    """Elementary N=3 closed form; vectorised, +inf on the diagonal for a<=1."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    d = np.abs(r - s)
    with np.errstate(divide="ignore"):
        if alpha == 1.0:
            val = np.log((r + s) / d) / (r * s)
        else:
            val = ((r + s) ** (alpha - 1.0) - d ** (alpha - 1.0)) / ((alpha - 1.0) * r * s)
    return const * 2.0 * pi * val


def _hyp2f1_near_one(a, b, c, u):
    """2F1(a, b; c; 1-u) for tiny u, via the leading connection terms.

    Used only when 1 - z^2 underflows the direct argument; the dropped
    corrections are O(u) and O(u^(c-a-b+1)).
    """
    eps = c - a - b
    if abs(eps) < 1e-6:
        # logarithmic case c = a + b
        psi = _sp.digamma
        return (gamma(c) / (gamma(a) * gamma(b))) * (2.0 * psi(1.0) - psi(a) - psi(b) - np.log(u))
    head = gamma(c) * gamma(eps) / (gamma(c - a) * gamma(c - b))
    s = a + b - c
    if abs(s - round(s)) < 1e-9 and round(s) <= 0:
        return head  # Gamma pole; the u^eps correction is O(u^eps log u)
    tail = gamma(c) * gamma(s) / (gamma(a) * gamma(b))
    return head + tail * u**eps


def _f21_series(a, b, c, x, terms=90):
    """Direct Gauss series, vectorised; geometric convergence for |x| <= 0.6."""
    x = np.asarray(x, dtype=float)
    term = np.ones_like(x)
    acc = np.ones_like(x)
    for k in range(terms):
        term = term * ((a + k) * (b + k) / ((c + k) * (k + 1.0))) * x
        acc += term
    return acc


def _f21_log_case(a, b, u, terms=90):
    """2F1(a, b; a+b; 1-u) via the logarithmic connection series."""
    u = np.asarray(u, dtype=float)
    lu = np.log(u)
    pref = gamma(a + b) / (gamma(a) * gamma(b))
    psi = _sp.digamma
    coef = 1.0
    acc = np.zeros_like(u)
    upow = np.ones_like(u)
    for k in range(terms):
        acc += coef * (2.0 * psi(k + 1.0) - psi(a + k) - psi(b + k) - lu) * upow
        coef *= (a + k) * (b + k) / ((k + 1.0) ** 2)
        upow = upow * u
    return pref * acc


def _f21_fast(a, b, c, x, u, alpha):
    """2F1(a, b; c; x) vectorised over x = 1 - u, tuned for x in [0, 1).

    Direct series away from 1; connection formula (or its logarithmic
    limit at alpha = 1) near 1.  Falls back to scipy's evaluator in the
    thin band 0 < |alpha - 1| < 1e-5 where the connection coefficients
    would lose accuracy through Gamma-pole cancellation.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty_like(x)
    lo = x <= 0.6
    if np.any(lo):
        out[lo] = _f21_series(a, b, c, x[lo])
    hi = ~lo
    if np.any(hi):
        uh = u[hi]
        eps = c - a - b
        if alpha == 1.0:
            out[hi] = _f21_log_case(a, b, uh)
        elif abs(eps) < 5e-6:
            out[hi] = _sp.hyp2f1(a, b, c, x[hi])
        else:
            g1 = gamma(c) * gamma(eps) / (gamma(c - a) * gamma(c - b))
            g2 = gamma(c) * gamma(-eps) / (gamma(a) * gamma(b))
            out[hi] = g1 * _f21_series(a, b, 1.0 - eps, uh) + \
                g2 * uh**eps * _f21_series(c - a, c - b, 1.0 + eps, uh)
    return out


def _kernel_hyp(r, s, N, alpha, const):
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    lam = (N - alpha) / 2.0
    a, b, c = lam / 2.0, (lam + 1.0) / 2.0, N / 2.0
    q = r * r + s * s
    u = ((r - s) * (r + s)) ** 2 / (q * q)  # 1 - z^2, computed stably
    x = 1.0 - u
    shape = np.broadcast(r, s).shape
    flat_u = np.broadcast_to(u, shape)
    flat_x = np.broadcast_to(x, shape)
    near = flat_u < 1e-12
    if N == 2:
        F = _f21_fast(a, b, c, np.where(near, 0.0, flat_x),
                      np.where(near, 0.5, flat_u), alpha)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            F = _sp.hyp2f1(a, b, c, np.where(near, 0.0, flat_x))
    if np.any(near):
        un = np.where(near, flat_u, 1.0)
        with np.errstate(divide="ignore"):
            Fn = _hyp2f1_near_one(a, b, c, un)
        F = np.where(near, Fn, F)
    return const * sphere_measure(N) * q ** ((alpha - N) / 2.0) * F


def radial_kernel(r, s, N: int, alpha: float):
    """Reduced radial kernel k_a(r, s); vectorised in r and s.

    Diverges on the diagonal for a <= 1 (returns inf there).  Accuracy is
    limited to ~1e-10 relative for |r-s| below 1e-6 max(r,s) when N != 3;
    cell integrals never resolve that region, so assembled kernels are
    unaffected.
    """
    const = riesz_constant(N, alpha)
    if N == 3:
        return _kernel_n3(r, s, alpha, const)
    return _kernel_hyp(r, s, N, alpha, const)


def angular_kernel(r: float, s: float, N: int, alpha: float) -> float:
    """k_a(r, s) by adaptive quadrature of the defining angular integral.

    For N >= 3 this is C |S^(N-2)| int_0^pi sin^(N-2)t (r^2+s^2-2rs cos t)^((a-N)/2) dt
    and for N = 2 the same expression with |S^0| = 2 doubling the half-range
    integral.  Raises SingularDiagonal for r = s with a <= 1.
    """
    const = riesz_constant(N, alpha)
    if r <= 0 or s <= 0:
        raise RieszError("radii must be positive")
    if r == s and alpha <= 1.0:
        raise SingularDiagonal(
            f"angular kernel diverges at r=s={r} for alpha={alpha} <= 1"
        )
    surf = 2.0 * pi ** ((N - 1) / 2.0) / gamma((N - 1) / 2.0)

    def integrand(t):
        return np.sin(t) ** (N - 2) * (r * r + s * s - 2 * r * s * np.cos(t)) ** ((alpha - N) / 2.0)

    points = None
    if r != s:
        # integrand changes character where (r-s)^2 ~ 4 r s sin^2(t/2)
        t0 = 2.0 * np.arcsin(min(1.0, abs(r - s) / (2.0 * sqrt(r * s))))
        if 0.0 < t0 < pi:
            points = [t0]
    val, _ = _si.quad(integrand, 0.0, pi, epsabs=1e-13, epsrel=1e-11,
                      limit=400, points=points)
    return const * surf * val


# ---------------------------------------------------------------------------
# dense kernel matrix


@dataclass
class RieszKernel:
    """Dense matrix M with (I_a * f)(r_i) ~= sum_j M[i, j] f_j.

    Entries integrate the reduced kernel against the hat basis in s and
    collocate in r, so a row applied to nodal values of f returns the
    convolution at that node.  `apply_sym` gives the action of the
    symmetrised bilinear form (exact weighted symmetry), which is what the
    energy functional and its gradient use.
    """

    alpha: float
    grid: RadialGrid
    entries: np.ndarray

    def __post_init__(self):
        self.entries.flags.writeable = False

    def _check_field(self, f: Field):
        if f.grid is not self.grid and f.grid.grid_hash != self.grid.grid_hash:
            raise GridError("field grid does not match kernel grid")

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return self.entries @ values

    def apply_sym_values(self, values: np.ndarray) -> np.ndarray:
        """Symmetrised convolution 1/2 (M + W^-1 M^T W) @ values."""
        w = self.grid.quad_weights
        return 0.5 * (self.entries @ values + (self.entries.T @ (w * values)) / w)

    def apply(self, f: Field) -> Field:
        self._check_field(f)
        return Field(self.grid, self.apply_values(f.values))


def apply(kernel: RieszKernel, f: Field) -> Field:
    """Convolution I_a * f on the kernel's grid."""
    return kernel.apply(f)


def pairing(kernel: RieszKernel, f: Field, g: Field | None = None) -> float:
    """Bilinear form int (I_a * f) g dx (g defaults to f).

    Uses the symmetrised action, so pairing(k, f, g) == pairing(k, g, f)
    to round-off.
    """
    kernel._check_field(f)
    gv = f.values if g is None else g.values
    if g is not None:
        kernel._check_field(g)
    w = kernel.grid.quad_weights
    return kernel.grid.sphere_measure * float((w * gv) @ kernel.apply_sym_values(f.values))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _gl_points(lo: float, hi: float, panels: int):
    """Gauss-Legendre nodes/weights on `panels` equal panels of [lo, hi]."""
    edges = np.linspace(lo, hi, panels + 1)
    return _gl_on_edges(edges)


def _gl_on_edges(edges: np.ndarray):
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    pts = (mid + half * _GL_NODES).ravel()
    wts = (half * _GL_WEIGHTS).ravel()
    return pts, wts


def _graded_points(sing: float, far: float, alpha: float):
    """Quadrature for a cell with an endpoint singularity, alpha >= 1.

    Geometric panels (ratio 1/4) refine toward the singular endpoint; the
    neglected tip scales like (1/4)^(levels * alpha) of the cell integral,
    below 1e-11 for alpha >= 1 at the float-safe depth.  12-point
    Gauss-Legendre resolves each panel.
    """
    d = far - sing
    # keep the innermost edge representable: sing + d/4^L must differ from sing
    cap = int(np.log(abs(d) / (16.0 * np.finfo(float).eps * max(1.0, abs(sing))))
              / np.log(4.0))
    levels = max(4, min(cap, int(np.ceil(19.0 / min(alpha, 2.0))) + 2))
    edges = sing + d * 0.25 ** np.arange(levels + 1, dtype=float)
    return _gl_on_edges(np.sort(edges))


def _singular_split(N: int, alpha: float):
    """Split k_a(r, s) = A(r, s) + |r-s|^(a-1) F(r, s) near the diagonal.

    A and F are smooth in s; used with Gauss-Jacobi quadrature to absorb
    the endpoint singularity exactly when alpha < 1.  For N = 3 the split
    is the elementary closed form; otherwise it comes from the 1-x
    connection formula of the hypergeometric reduction (well conditioned
    away from alpha = 1).
    """
    const = riesz_constant(N, alpha)
    if N == 3:
        c = const * 2.0 * pi / (alpha - 1.0)

        def a_fn(r, s):
            return c * (r + s) ** (alpha - 1.0) / (r * s)

        def f_fn(r, s):
            return -c / (r * s) * np.ones_like(np.asarray(s, dtype=float))

        return a_fn, f_fn

    lam = (N - alpha) / 2.0
    a, b, c = lam / 2.0, (lam + 1.0) / 2.0, N / 2.0
    eps = c - a - b  # = (alpha - 1) / 2 < 0 here
    g1 = gamma(c) * gamma(eps) / (gamma(c - a) * gamma(c - b))
    g2 = gamma(c) * gamma(-eps) / (gamma(a) * gamma(b))
    pref = const * sphere_measure(N)

    def a_fn(r, s):
        s = np.asarray(s, dtype=float)
        q = r * r + s * s
        u = ((r - s) * (r + s)) ** 2 / (q * q)
        return pref * q ** ((alpha - N) / 2.0) * g1 * _f21_series(a, b, 1.0 - eps, u)

    def f_fn(r, s):
        s = np.asarray(s, dtype=float)
        q = r * r + s * s
        u = ((r - s) * (r + s)) ** 2 / (q * q)
        return (pref * q ** ((alpha - N) / 2.0) * g2 *
                _f21_series(c - a, c - b, 1.0 + eps, u) * ((r + s) / q) ** (alpha - 1.0))

    return a_fn, f_fn


def assemble_kernel(grid: RadialGrid, alpha: float) -> RieszKernel:
    """Assemble the dense Riesz matrix for the grid's domain and order alpha.

    Entry (i, j) integrates k_a(r_i, s) s^(N-1) against the hat function at
    node j.  The two cells meeting the collocation node are integrated with
    the interval split exactly at s = r_i and geometrically graded panels
    absorbing the endpoint singularity (the integrand is locally integrable
    for every a in (0, N), so the diagonal stays finite); remaining smooth
    cells use fixed Gauss-Legendre panels whose error sits far below the
    1e-9 kernel tolerance.
    """
    N = grid.domain.dimension
    if not 0.0 < alpha < N:
        raise RieszError(f"Riesz order must lie in (0, N)=(0, {N}), got {alpha}")
    nodes = grid.nodes
    n_nodes = len(nodes)
    n_cells = n_nodes - 1
    h = grid.spacings
    M = np.zeros((n_nodes, n_nodes))

    use_jacobi = alpha < 1.0
    if use_jacobi:
        a_fn, f_fn = _singular_split(N, alpha)
        # Jacobi rules with the singularity weight at the left / right endpoint
        xj_lo, wj_lo = _sp.roots_jacobi(12, 0.0, alpha - 1.0)
        xj_hi, wj_hi = _sp.roots_jacobi(12, alpha - 1.0, 0.0)

    cell_quad = [_gl_points(nodes[j], nodes[j + 1], 1) for j in range(n_cells)]
    power = N - 1
    all_cells = range(n_cells)
    for i in range(n_nodes):
        ri = nodes[i]
        singular = {i - 1, i} & set(all_cells)
        refine = ({i - 3, i - 2, i + 1, i + 2} & set(all_cells)) - singular

        pts_list, wts_list, cell_of = [], [], []
        for j in all_cells:
            if j in singular:
                if use_jacobi:
                    continue  # handled by the Jacobi split below
                other = nodes[j + 1] if j == i else nodes[j]
                pts, wts = _graded_points(ri, other, alpha)
            elif j in refine:
                pts, wts = _gl_points(nodes[j], nodes[j + 1], 3)
            else:
                pts, wts = cell_quad[j]
            pts_list.append(pts)
            wts_list.append(wts)
            cell_of.append(np.full(len(pts), j))
        if pts_list:
            pts = np.concatenate(pts_list)
            wts = np.concatenate(wts_list)
            cells = np.concatenate(cell_of)
            vals = radial_kernel(ri, pts, N, alpha) * pts**power * wts
            lam = (pts - nodes[cells]) / h[cells]
            np.add.at(M[i], cells, vals * (1.0 - lam))
            np.add.at(M[i], cells + 1, vals * lam)

        if use_jacobi:
            for j in singular:
                lo, hi = nodes[j], nodes[j + 1]
                half = 0.5 * (hi - lo)
                # smooth component over the whole cell
                pa, wa = _gl_points(lo, hi, 2)
                va = a_fn(ri, pa) * pa**power * wa
                # singular component with |s - r_i|^(alpha-1) folded into
                # the Jacobi weight; r_i is an endpoint of this cell
                if ri == lo:
                    sj = lo + half * (xj_lo + 1.0)
                    wj = wj_lo * half**alpha
                else:
                    sj = lo + half * (xj_hi + 1.0)
                    wj = wj_hi * half**alpha
                vf = f_fn(ri, sj) * sj**power * wj
                for p_, v_ in ((pa, va), (sj, vf)):
                    lam = (p_ - lo) / h[j]
                    M[i, j] += float(v_ @ (1.0 - lam))
                    M[i, j + 1] += float(v_ @ lam)

    return RieszKernel(alpha, grid, M)


# ---------------------------------------------------------------------------
# oracles and limit checks


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    samples: int


def mc_oracle(f: Field, alpha: float, r: float, samples: int = 10**6,
              seed: int = 0) -> MCEstimate:
    """Unbiased N-dimensional Monte Carlo estimate of (I_a * f)(r e_1).

    Direct integration of the convolution, independent of the radial
    reduction: y is drawn uniformly in the (truncated) domain by inverse-CDF
    radius sampling and a Gaussian direction, the integrand
    C_{N,a} |x-y|^(a-N) f(|y|) is averaged (f linearly interpolated between
    nodes) and scaled by the domain volume.  The sample mean comes with its
    standard error; a seeded generator makes the estimate reproducible.
    Restricted to N in {2, 3}.
    """
    grid = f.grid
    dom = grid.domain
    N = dom.dimension
    if N not in (2, 3):
        raise RieszError("Monte Carlo oracle supports N in {2, 3} only")
    if samples < 10**5:
        raise RieszError("need at least 1e5 samples")
    const = riesz_constant(N, alpha)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = dom.a, dom.outer
    if not np.any(f.values):
        return MCEstimate(0.0, 0.0, samples)

    x = np.zeros(N)
    x[0] = r
    vol = dom.volume
    est_chunks = []
    chunk = 250_000
    total = 0
    acc_sum = 0.0
    acc_sq = 0.0
    while total < samples:
        m = min(chunk, samples - total)
        u = rng.random(m)
        radii = (lo**N + u * (hi**N - lo**N)) ** (1.0 / N)
        direc = rng.standard_normal((m, N))
        direc /= np.linalg.norm(direc, axis=1)[:, None]
        y = radii[:, None] * direc
        dist = np.linalg.norm(y - x[None, :], axis=1)
        fy = np.interp(radii, grid.nodes, f.values)
        g = const * dist ** (alpha - N) * fy
        acc_sum += g.sum()
        acc_sq += (g * g).sum()
        total += m
    mean = acc_sum / total
    var = max(acc_sq / total - mean * mean, 0.0)
    stderr = vol * sqrt(var / total)
    return MCEstimate(vol * mean, stderr, total)


def identity_limit_table(grid: RadialGrid, f: Field, alphas, interior_margin: float = 0.25):
    """Sup deviation |I_a * f - f| at interior nodes, per alpha.

    The Riesz kernel is an approximation of the identity as a -> 0+, but
    only away from the boundary where the cut-off field chi_Omega f is
    discontinuous; nodes within `interior_margin` of either boundary
    (as a fraction of the domain width) are excluded.
    """
    alphas = list(alphas)
    if any(a2 >= a1 for a1, a2 in zip(alphas, alphas[1:])):
        raise RieszError("alphas must be strictly decreasing")
    lo, hi = grid.domain.a, grid.domain.outer
    width = hi - lo
    mask = (grid.nodes >= lo + interior_margin * width) & (grid.nodes <= hi - interior_margin * width)
    if not np.any(mask):
        raise RieszError("interior window is empty")
    rows = []
    for a in alphas:
        kern = assemble_kernel(grid, a)
        dev = np.abs(kern.apply_values(f.values) - f.values)
        rows.append((a, float(dev[mask].max())))
    return rows


def comparison_constant(alpha_high: float, outer_radius: float) -> float:
    """Constant (max{1, 2b})^a1 bounding the a1-pairing by the a2-pairing."""
    return max(1.0, 2.0 * outer_radius) ** alpha_high


# ---------------------------------------------------------------------------
# kernel cache

_CACHE_MAGIC = "riesz-kernel v1"


def save_kernel(kernel: RieszKernel, path) -> None:
    """Dump the kernel to `path`; round-trips bit-exactly via load_kernel."""
    header = (
        f"{_CACHE_MAGIC} N={kernel.grid.domain.dimension} "
        f"alpha={kernel.alpha!r} gridhash={kernel.grid.grid_hash}\n"
    )
    buf = io.BytesIO()
    buf.write(header.encode("ascii"))
    buf.write(np.ascontiguousarray(kernel.entries, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_kernel(path, grid: RadialGrid) -> RieszKernel:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = raw[:nl].decode("ascii")
    parts = header.split()
    if " ".join(parts[:2]) != _CACHE_MAGIC:
        raise RieszError(f"not a kernel cache file: {header!r}")
    fields = dict(p.split("=", 1) for p in parts[2:])
    if int(fields["N"]) != grid.domain.dimension:
        raise RieszError("cached kernel dimension does not match grid")
    if fields["gridhash"] != grid.grid_hash:
        raise RieszError("cached kernel was built for a different grid")
    alpha = float(fields["alpha"])
    body = raw[nl + 1:]
    m = len(grid.nodes)
    if len(body) != 8 * m * m:
        raise RieszError("cache payload size does not match grid")
    entries = np.frombuffer(body, dtype="<f8").reshape(m, m).copy()
    return RieszKernel(alpha, grid, entries)
