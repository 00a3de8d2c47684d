"""Figure rendering for set sequences and sweep reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle as MplRect

from .geom import EMPTY, TimedSetSequence


def _rect(ax, box, axes, **kw):
    i, j = axes
    ax.add_patch(MplRect((box.lo[i], box.lo[j]), box.hi[i] - box.lo[i],
                         box.hi[j] - box.lo[j], **kw))


def render_sets(seq: TimedSetSequence, out_path, x_T=None, x_0=None, axes=(0, 1),
                samples=None, title=None):
    """One rectangle per timestep plus the target and initial sets.

    ``axes`` picks the coordinate pair for states with more than two
    dimensions.  The output format follows the file suffix (svg, png, pdf).
    """
    fig, ax = plt.subplots(figsize=(7, 6))
    cmap = plt.get_cmap("viridis")
    steps = [t for t in range(-seq.tau, 0) if seq.sets.get(t) is not EMPTY]
    for t in steps:
        box = seq.sets[t]
        color = cmap((t + seq.tau) / max(seq.tau, 1))
        _rect(ax, box, axes, fill=False, edgecolor=color, linewidth=1.6,
              label=f"t={t}")
    if x_T is not None:
        _rect(ax, x_T, axes, fill=True, facecolor="red", alpha=0.25,
              edgecolor="red", linewidth=1.8, label="target")
    if x_0 is not None:
        _rect(ax, x_0, axes, fill=False, edgecolor="black", linewidth=1.8,
              label="initial")
    if samples is not None and len(samples):
        ax.plot(samples[:, axes[0]], samples[:, axes[1]], ".", color="darkgreen",
                markersize=2, alpha=0.5, label="reaching samples")
    ax.relim()
    ax.autoscale_view()
    ax.set_xlabel(f"x[{axes[0]}]")
    ax.set_ylabel(f"x[{axes[1]}]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8, ncol=2)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def render_sweep(rows, x_key, y_key, out_path, title=None, logy=False):
    """Convergence-style line plot for sweep reports (CSV rows as dicts)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[x_key] for r in rows]
    ys = [r[y_key] for r in rows]
    ax.plot(xs, ys, "o-")
    if logy and all(y > 0 for y in ys):
        ax.set_yscale("log")
    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
