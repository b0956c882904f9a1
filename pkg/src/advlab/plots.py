"""Figure rendering for run reports.

Every report-producing command writes its delimited output first and then,
unless asked not to, a matching PNG next to it. All rendering goes through
the Agg backend so headless runs work.
"""

from __future__ import annotations

from collections.abc import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import LandscapeGrid, MarginEstimate, RobustCurve
from .data import Dataset
from .errors import ConfigurationError
from .net import Network, forward
from .train import TrainReport


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_curves(report: TrainReport, path: str) -> str:
    """Accuracy, loss, and mean budget against the epoch index."""
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax_acc.plot(report.epochs, report.clean_train_acc, label="train")
    if not all(np.isnan(report.clean_test_acc)):
        ax_acc.plot(report.epochs, report.clean_test_acc, label="test")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("clean accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    ax_loss.plot(report.epochs, report.mean_loss, color="tab:red", label="mean loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss")
    if any(e != 0 for e in report.mean_eps):
        ax_eps = ax_loss.twinx()
        ax_eps.plot(report.epochs, report.mean_eps, color="tab:gray", label="mean eps")
        ax_eps.set_ylabel("mean eps")
    return _save(fig, path)


def plot_robust_curves(curves: Mapping[str, RobustCurve], path: str) -> str:
    """Robust accuracy against the attack budget; solid lines for the
    cross-entropy attack, dashed for the margin attack."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for i, (name, curve) in enumerate(curves.items()):
        color = f"C{i}"
        ax.plot(curve.eps_grid, curve.pgd_acc, color=color, marker="o",
                markersize=3, label=name)
        ax.plot(curve.eps_grid, curve.cw_acc, color=color, linestyle="--",
                alpha=0.7)
    ax.set_xlabel("attack budget")
    ax.set_ylabel("robust accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    return _save(fig, path)


def plot_landscape(grid: LandscapeGrid, path: str) -> str:
    """Heat map of the loss over the gradient-sign / Rademacher plane."""
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    # loss[i, j] is at u-magnitude i, v-magnitude j; pcolormesh wants Z[y, x]
    mesh = ax.pcolormesh(grid.u_magnitudes, grid.v_magnitudes, grid.loss.T,
                         shading="nearest")
    ax.plot([0], [0], marker="+", color="white", markersize=10)
    ax.set_xlabel("step along gradient sign")
    ax.set_ylabel("step along random direction")
    fig.colorbar(mesh, ax=ax, label="loss")
    return _save(fig, path)


def plot_decision_boundary(net: Network, dataset: Dataset, path: str,
                           padding: float = 1.0, resolution: int = 300) -> str:
    """Predicted-class regions with the samples overlaid; 2-d inputs only."""
    if dataset.dim != 2:
        raise ConfigurationError("decision-boundary plots need 2-d inputs")
    lo = dataset.x.min(axis=0) - padding
    hi = dataset.x.max(axis=0) + padding
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    preds = np.argmax(forward(net, pts).logits, axis=-1).reshape(xx.shape)
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    ax.contourf(xx, yy, preds, levels=np.arange(net.num_classes + 1) - 0.5,
                cmap="coolwarm", alpha=0.25)
    for k in range(dataset.num_classes):
        mask = dataset.labels == k
        ax.scatter(dataset.x[mask, 0], dataset.x[mask, 1], s=8, label=f"class {k}")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_margin_histogram(estimates: list[MarginEstimate], path: str) -> str:
    """Distribution of the bracketed margins; zero-margin and capped samples
    are counted in the axis label rather than binned."""
    values = [e.m_F for e in estimates if e.m_F > 0 and not e.capped]
    zeros = sum(1 for e in estimates if e.m_F == 0)
    capped = sum(1 for e in estimates if e.capped)
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    if values:
        ax.hist(values, bins=min(30, max(5, len(values) // 3)))
    note = f"{zeros} at zero, {capped} capped" if (zeros or capped) else ""
    ax.set_xlabel(("margin " + f"({note})").strip() if note else "margin")
    ax.set_ylabel("samples")
    return _save(fig, path)


def plot_series(x: list, series: Mapping[str, list[float]], path: str,
                xlabel: str, ylabel: str) -> str:
    """Generic comparison lines sharing one x grid (ablation trends)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    for name, ys in series.items():
        ax.plot(x, ys, marker="o", markersize=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)


def plot_bars(labels: list[str], series: Mapping[str, list[float]], path: str,
              ylabel: str) -> str:
    """Grouped bars, one group per label, one bar per series entry."""
    if any(len(ys) != len(labels) for ys in series.values()):
        raise ConfigurationError("every series must have one value per label")
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    x = np.arange(len(labels))
    width = 0.8 / max(1, len(series))
    for j, (name, ys) in enumerate(series.items()):
        ax.bar(x + (j - (len(series) - 1) / 2) * width, ys, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)
