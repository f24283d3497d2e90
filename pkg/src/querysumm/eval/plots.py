"""PNG figures for reports (rendered off-screen)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_length_ratios(per_method, path):
    """Histogram of per-document length ratios, one series per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(per_method):
        ax.hist(per_method[name], bins=20, range=(0, 1.2), alpha=0.5, label=name)
    ax.set_xlabel("summary length / note length")
    ax.set_ylabel("documents")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(rows, x_key, y_keys, path, x_label=None):
    """Line plot of sweep results (rows of dicts)."""
    rows = sorted(rows, key=lambda r: r[x_key])
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[x_key] for r in rows]
    for k in y_keys:
        ax.plot(xs, [r[k] for r in rows], marker="o", label=k)
    ax.set_xlabel(x_label or x_key)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_training_curve(steps, path, key="loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([s["step"] for s in steps], [s[key] for s in steps], lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel(key)
    fig.tight_layout()
    _save(fig, path)
