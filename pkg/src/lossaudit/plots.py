"""Figure rendering for the CLI report paths.

The core estimators and simulators stay plot-free; these helpers take
their outputs and write PNG files next to the delimited reports. All
figures use the Agg backend so they render identically headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .loss import LossReportRow
from .scorecard import Scorecard
from .simulate import SimulatedResult, ToleranceGrid


def plot_tolerance_grid(grid: ToleranceGrid, path: str, title: str = "Loss tolerance") -> None:
    """Heatmap of simulated p-values with the safe zone outlined."""
    p = np.asarray(grid.p)
    fig, ax = plt.subplots(figsize=(7, 5))
    mesh = ax.pcolormesh(
        grid.delta2_values,
        grid.l_values,
        p,
        cmap="RdYlGn",
        vmin=0.0,
        vmax=max(4 * grid.alpha, 0.05),
        shading="nearest",
    )
    fig.colorbar(mesh, ax=ax, label="simulated p-value")
    safe = np.asarray(grid.safe, dtype=float)
    if safe.shape[0] > 1 and safe.shape[1] > 1 and 0.0 < safe.mean() < 1.0:
        ax.contour(grid.delta2_values, grid.l_values, safe, levels=[0.5], colors="k", linewidths=1.2)
    ax.set_xlabel("lost-data delta")
    ax.set_ylabel("loss rate")
    ax.set_title(f"{title} (safe: p > {grid.alpha})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_report(rows: list[LossReportRow], path: str) -> None:
    """Bar chart of loss rates per (event_type, variant)."""
    labeled = [(f"{r.event_type}\n[{r.variant or 'all'}]", r.estimate.rate) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labeled)), 4))
    labels = [l for l, _ in labeled]
    rates = [v * 100 for _, v in labeled]
    ax.bar(range(len(labeled)), rates, color="#3b6ea5")
    ax.set_xticks(range(len(labeled)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("loss rate (%)")
    ax.set_title("Estimated telemetry loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_sequence_convergence(buckets: list[tuple[str, float]], path: str, true_rate: float | None = None) -> None:
    """Loss estimate per sequence-length bucket; converges as sequences grow."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [b for b, _ in buckets]
    rates = [r * 100 for _, r in buckets]
    ax.plot(range(len(buckets)), rates, marker="o", color="#3b6ea5", label="sequence estimate")
    if true_rate is not None:
        ax.axhline(true_rate * 100, color="#a53b3b", linestyle="--", label="true rate")
    ax.set_xticks(range(len(buckets)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_xlabel("sequence length bucket")
    ax.set_ylabel("loss rate (%)")
    ax.set_title("Sequence-method convergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_simulation(results: list[tuple[float, SimulatedResult]], path: str, alpha: float) -> None:
    """Reconstructed delta with a +/- z_alpha band across scenario sweeps."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [b for b, _ in results]
    deltas = [r.delta for _, r in results]
    halfwidth = 2.5758293035489004  # two-sided 1% normal quantile
    los = [r.delta - halfwidth * r.se for _, r in results]
    his = [r.delta + halfwidth * r.se for _, r in results]
    ax.plot(xs, deltas, marker="o", color="#3b6ea5", label="simulated delta")
    ax.fill_between(xs, los, his, alpha=0.25, color="#3b6ea5", label="99% band")
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xlabel("interaction term (beta_int)")
    ax.set_ylabel("reconstructed delta")
    ax.set_title(f"No-loss simulation (alpha={alpha})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_scorecard(card: Scorecard, path: str) -> None:
    """Observed / best / worst relative deltas per metric as grouped points."""
    fig, ax = plt.subplots(figsize=(max(5, 1.4 * len(card.metrics)), 4))
    xs = np.arange(len(card.metrics))
    obs = [m.observed_rel * 100 for m in card.metrics]
    best = [m.best_rel * 100 for m in card.metrics]
    worst = [m.worst_rel * 100 for m in card.metrics]
    ax.scatter(xs - 0.15, obs, color="#3b6ea5", label="observed", zorder=3)
    ax.scatter(xs, best, color="#3ba56e", marker="^", label="best-case", zorder=3)
    ax.scatter(xs + 0.15, worst, color="#a53b3b", marker="v", label="worst-case", zorder=3)
    for i, m in enumerate(card.metrics):
        ax.vlines(i, min(best[i], worst[i]), max(best[i], worst[i]), color="grey", linewidth=1, zorder=2)
        if m.flags:
            ax.annotate("|".join(sorted(m.flags)), (i, max(best[i], worst[i])), fontsize=7, ha="center",
                        xytext=(0, 6), textcoords="offset points")
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xticks(xs)
    ax.set_xticklabels([m.name for m in card.metrics], fontsize=8)
    ax.set_ylabel("relative delta (%)")
    ax.set_title(f"Scorecard {card.experiment_id}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


__all__ = [
    "plot_loss_report",
    "plot_scorecard",
    "plot_sequence_convergence",
    "plot_simulation",
    "plot_tolerance_grid",
]
