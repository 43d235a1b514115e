"""Figure rendering for the report paths.

Every CLI command that writes delimited output also renders a matplotlib
figure next to it (disable with [output] figures = false or --no-figures).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def solution_figure(nodes, u_values, v_values, meta: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    ax.plot(nodes, u_values, "b-", lw=2, label="constrained minimizer u")
    if v_values is not None:
        ax.plot(nodes, v_values, "r--", lw=2, label="rescaled solution v")
    ax.set_xlabel("r")
    ax.set_ylabel("field value")
    ax.set_title(
        f"N={meta.get('N')}, alpha={meta.get('alpha')}, p={meta.get('p')}, "
        f"{meta.get('bc')}"
    )
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def gamma_figure(rows, path) -> None:
    alphas = np.array([r.alpha for r in rows])
    dj = np.array([abs(r.J_alpha - r.J0) for r in rows])
    h1 = np.array([r.h1_dist for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.0))
    axes[0].loglog(alphas, dj, "bo-", lw=1.5)
    axes[0].set_xlabel("alpha")
    axes[0].set_ylabel("|J_alpha - J0|")
    axes[0].set_title("energy level convergence")
    axes[1].loglog(alphas, h1, "rs-", lw=1.5)
    axes[1].set_xlabel("alpha")
    axes[1].set_ylabel("H1 distance to the limit minimizer")
    axes[1].set_title("minimizer convergence")
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def pohozaev_figure(report, path) -> None:
    names = ["grad", "potential", "drift", "boundary"]
    values = [report.grad_term, report.potential_term, report.drift_term,
              report.boundary_term]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.bar(names, values, color=["#3465a4", "#4e9a06", "#75507b", "#cc0000"])
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_ylabel("term value")
    ax.set_title(f"Pohozaev identity audit (residual {report.residual:.3e})")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def kernel_check_figure(checks, path) -> None:
    """`checks` rows: (name, deviation, tolerance, passed)."""
    names = [c[0] for c in checks]
    ratio = [max(c[1] / c[2], 1e-16) for c in checks]
    colors = ["#4e9a06" if c[3] else "#cc0000" for c in checks]
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.bar(names, ratio, color=colors)
    ax.axhline(1.0, color="k", lw=1.0, ls="--", label="tolerance")
    ax.set_yscale("log")
    ax.set_ylabel("deviation / tolerance")
    ax.set_title("kernel oracle deviations")
    ax.grid(True, axis="y", which="both", alpha=0.3)
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
