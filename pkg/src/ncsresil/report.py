"""Figure rendering for CLI reports.

Figures are written next to the CSV outputs; the CSVs remain the canonical
machine-readable products.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .certificate import Certificate, evaluate_V
from .hybrid import TargetSet
from .sim import HybridTrajectory
from .tradeoff import TradeoffPoint


def render_tradeoff_figure(curves: dict, path) -> None:
    """Bar chart of max delay per drop count, one bar group per mode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    n_modes = max(len(curves), 1)
    width = 0.8 / n_modes
    colors = {"zero-input": "tab:red", "input-output": "tab:blue"}
    for i, (label, points) in enumerate(curves.items()):
        drops = [p.drops for p in points]
        delays = [p.max_delay for p in points]
        offs = (i - (n_modes - 1) / 2) * width
        ax.bar([d + offs for d in drops], delays, width=width,
               label=label, color=colors.get(label))
    ax.set_xlabel("max consecutive dropouts")
    ax.set_ylabel("max allowable delay [s]")
    ax.set_title("drop/delay resilience trade-off")
    all_drops = sorted({p.drops for pts in curves.values() for p in pts})
    if all_drops:
        ax.set_xticks(all_drops)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trajectory_figure(traj: HybridTrajectory, path,
                             cert: Certificate | None = None,
                             target: TargetSet | None = None) -> None:
    """State norm, distance to target, and (when certified) Lyapunov value."""
    rows = 2 if cert is None else 3
    fig, axes = plt.subplots(rows, 1, figsize=(7, 2.2 * rows), sharex=True)
    axes = np.atleast_1d(axes)

    axes[0].plot(traj.t, np.linalg.norm(traj.x, axis=1), lw=1.0)
    axes[0].set_ylabel("|state|")
    for e in traj.events:
        axes[0].axvline(e.time, color="0.85", lw=0.5, zorder=0)

    if target is not None:
        axes[1].plot(traj.t, traj.distances(target), lw=1.0, color="tab:orange")
        axes[1].set_ylabel("distance to target")
    else:
        axes[1].plot(traj.t, np.linalg.norm(traj.eta, axis=1), lw=1.0, color="tab:orange")
        axes[1].set_ylabel("|hold error|")

    if cert is not None:
        V = [evaluate_V(cert, traj.state(i)) for i in range(len(traj))]
        axes[2].semilogy(traj.t, np.maximum(V, 1e-300), lw=1.0, color="tab:green")
        axes[2].set_ylabel("V")

    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
