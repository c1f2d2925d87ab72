"""Optional PNG figures written next to the CSV outputs.

matplotlib is imported lazily with the Agg backend so that the library and the
command line work without a display and without paying the import cost
unless figures are requested.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"figure.dpi": 100, "savefig.dpi": 150, "font.size": 10,
                         "axes.spines.top": False, "axes.spines.right": False})
    return plt


def _save(fig, path):
    path = Path(path)
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    return path


def plot_densities(curves: dict, path, title="posterior of theta_Y"):
    """``curves`` maps a legend label to ``(grid, density)``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (grid, dens) in curves.items():
        ax.plot(grid, dens, label=label, lw=1.5)
    ax.set_xlabel("theta_Y")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(frameon=False)
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_training_curve(epochs, losses, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, losses, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log" if np.all(np.asarray(losses) > 0) else "linear")
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_accuracy(summary: dict, path):
    """Bar chart of mean accuracy with standard-deviation error bars.

    ``summary`` maps method name -> {"mean": .., "std": ..} in percent.
    """
    plt = _pyplot()
    names = list(summary)
    means = [summary[n]["mean"] for n in names]
    stds = [summary[n]["std"] for n in names]
    fig, ax = plt.subplots(figsize=(3.5, 3.5))
    ax.bar(names, means, yerr=stds, capsize=4, color=["#4c72b0", "#dd8452", "#55a868"][:len(names)])
    ax.set_ylabel("target accuracy (%)")
    ax.set_ylim(max(0.0, min(means) - 2 * max(stds + [1.0]) - 5), 100)
    out = _save(fig, path)
    plt.close(fig)
    return out
