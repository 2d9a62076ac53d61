"""Figures written next to the CLI's CSV and JSON output.

Everything renders with the non-interactive Agg backend and is saved to
files; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(out, suffix):
    """``run.csv`` -> ``run_<suffix>.png`` in the same directory."""
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}.png")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trajectory(report, chain, path, max_curves=9):
    """Coordinates and distance from the identity along an evolved curve.

    For a diffeomorphism chain the left panel shows snapshots of the maps
    instead of coordinate curves.
    """
    traj = report.trajectory
    t = traj.times
    dist = chain.norm(traj.level, traj.points - chain.identity(traj.level))
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.8))
    if chain.name.startswith("diffint"):
        picks = np.linspace(0, len(t) - 1, min(max_curves, len(t))).astype(int)
        for i in picks:
            ax0.plot(chain.x, traj.points[i], lw=1, label=f"t={t[i]:.2f}")
        ax0.set_xlabel("x")
        ax0.set_ylabel("map value")
        ax0.legend(fontsize=7, ncol=2)
    else:
        cols = np.arange(traj.points.shape[1])[:max_curves]
        for j in cols:
            ax0.plot(t, traj.points[:, j], lw=1, label=f"x{j}")
        ax0.set_xlabel("t")
        ax0.set_ylabel("coordinate")
        ax0.legend(fontsize=7, ncol=3)
    for k in range(1, report.N):
        ax1.axvline(k / report.N, color="0.85", lw=0.5)
    ax1.plot(t, dist, color="k", lw=1.2)
    ax1.set_xlabel("t")
    ax1.set_ylabel(f"distance from identity (level {traj.level})")
    ax1.set_title(f"{chain.name}, N={report.N}", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_ratios(report, path):
    """Measured Picard contraction ratios per piece against ``L * mass``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    L = report.bounds.L if report.bounds is not None else 0.0
    for k, (ratios, mass) in enumerate(zip(report.ratios, report.masses)):
        if ratios:
            ax.plot(np.arange(2, 2 + len(ratios)), ratios, "o-", ms=3, lw=0.8, color="C0", alpha=0.6)
        ax.axhline(L * mass, color="C3", lw=0.6, alpha=0.4)
    ax.set_xlabel("iteration")
    ax.set_ylabel("contraction ratio")
    ax.set_yscale("log")
    ax.set_title("Picard ratios (red: L x piece mass)", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_bench(rows, path):
    """Subdivision count and wall time against the control's L1 norm."""
    rows = np.asarray(rows, dtype=float)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax0.plot(rows[:, 0], rows[:, 1], "o-")
    ax0.set_xlabel("L1 norm of control")
    ax0.set_ylabel("pieces N")
    ax1.plot(rows[:, 0], rows[:, 3], "s-", color="C1")
    ax1.set_xlabel("L1 norm of control")
    ax1.set_ylabel("wall time [s]")
    fig.tight_layout()
    return _save(fig, path)


def plot_levels(full, path):
    """Distance from the identity at every solved level of a multi-level run."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n, rep in sorted(full.reports.items()):
        traj = rep.trajectory
        e = traj.points[0]
        ax.plot(traj.times, np.max(np.abs(traj.points - e), axis=1), lw=1, label=f"level {n}")
    ax.set_xlabel("t")
    ax.set_ylabel("max coordinate change")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
