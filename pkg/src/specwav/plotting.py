"""Figure rendering for loss curves and EER reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .eval import EERReport, ROW_ORDER  # noqa: E402
from .trainer import LossCurve  # noqa: E402


def loss_curve_figure(curves: dict[str, LossCurve], path: str | Path,
                      title: str = "training loss") -> Path:
    """Line plot of train/validation loss per epoch, one pair per stage."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, curve in curves.items():
        ax.plot(curve.epochs, curve.train, marker="o", label=f"{name} train")
        ax.plot(curve.epochs, curve.valid, marker="s", linestyle="--",
                label=f"{name} valid")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def report_figure(reports: list[EERReport], path: str | Path,
                  title: str = "equal error rate") -> Path:
    """Grouped bar chart of EER percent per (dataset, row), one group per cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = []
    for report in reports:
        for key in report.cells:
            if key not in keys:
                keys.append(key)
    keys.sort(key=lambda k: (k[0], ROW_ORDER.index(k[1])))
    fig, ax = plt.subplots(figsize=(max(7.0, 1.2 * len(keys)), 4.5))
    width = 0.8 / max(len(reports), 1)
    for i, report in enumerate(reports):
        xs = [j + i * width for j in range(len(keys))]
        ys = [report.cells.get(key, 0.0) for key in keys]
        ax.bar(xs, ys, width=width, label=report.system)
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(keys))])
    ax.set_xticklabels([f"{d}\n{r}" for d, r in keys])
    ax.set_ylabel("EER (%)")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def convergence_figure(convergence, path: str | Path,
                       title: str = "spectral convergence") -> Path:
    """Semilog plot of a Griffin-Lim convergence sequence."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(range(1, len(convergence) + 1), convergence, marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("spectral convergence")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
