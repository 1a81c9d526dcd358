"""Figure rendering for run reports: Pareto front projections, basis
dimensions and full-solve counts per subproblem."""

from __future__ import annotations

import itertools
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_report", "plot_front", "plot_basis_dims", "plot_solves"]


def plot_front(report, path, reference=None) -> None:
    """Pairwise scatter of the archive in objective space; an optional
    reference front is drawn underneath."""
    J = report.archive.objective_matrix()
    if J.size == 0:
        return
    k = J.shape[1]
    pairs = list(itertools.combinations(range(k), 2)) or [(0, 0)]
    fig, axes = plt.subplots(1, len(pairs), figsize=(4.2 * len(pairs), 3.6),
                             squeeze=False)
    for ax, (i, j) in zip(axes[0], pairs):
        if reference is not None:
            ax.scatter(reference[:, i], reference[:, j], s=4, c="0.8",
                       label="reference")
        ax.scatter(J[:, i], J[:, j], s=10, c="C0", label="archive")
        ax.set_xlabel(f"$J_{{{i + 1}}}$")
        ax.set_ylabel(f"$J_{{{j + 1}}}$")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_basis_dims(report, path) -> None:
    dims = [s.n_basis_final for s in report.psp_stats if s.kind == "ps"]
    if not dims:
        return
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(np.arange(len(dims)), dims, width=1.0)
    if dims:
        ax.axhline(np.mean(dims), ls="--", c="k", lw=1,
                   label=f"mean = {np.mean(dims):.1f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("subproblem")
    ax.set_ylabel("final basis dimension")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_solves(report, path) -> None:
    solves = [s.full_solves for s in report.psp_stats]
    times = [s.wall_time_s for s in report.psp_stats]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.bar(np.arange(len(solves)), solves, width=1.0)
    ax1.set_xlabel("subproblem")
    ax1.set_ylabel("full-order solves")
    ax2.bar(np.arange(len(times)), times, width=1.0, color="C1")
    ax2.set_xlabel("subproblem")
    ax2.set_ylabel("wall time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(report, out_dir, reference=None) -> pathlib.Path:
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plot_front(report, out / "front.png", reference)
    plot_basis_dims(report, out / "basis_dims.png")
    plot_solves(report, out / "solves.png")
    return out
