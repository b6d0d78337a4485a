"""Report figures rendered next to the delimited outputs.

Only generated data and aggregate metrics are ever drawn; raw private
features stay out of every figure.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def save_loss_curve(trace, path) -> Path:
    path = Path(path)
    trace = np.asarray(trace, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, trace.size + 1), trace, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_sample_scatter(features, labels, path, title="generated samples") -> Path:
    """2-D scatter of generated points colored by recovered label; higher
    dimensional samples are shown through their first two coordinates."""
    path = Path(path)
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for cls in np.unique(y):
        pts = x[y == cls]
        ax.scatter(pts[:, 0], pts[:, 1] if x.shape[1] > 1 else np.zeros(len(pts)),
                   s=6, alpha=0.5, label=f"class {cls}")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title(title)
    ax.legend(markerscale=2, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_class_counts(counts, path) -> Path:
    path = Path(path)
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.bar(np.arange(counts.size), counts, width=0.7)
    ax.set_xlabel("class")
    ax.set_ylabel("generated samples")
    ax.set_title("per-class sample counts")
    ax.set_xticks(np.arange(counts.size))
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
