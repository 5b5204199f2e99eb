"""Static figures for learned-graph analyses, written straight to files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def golden_size(width=6.0):
    return width, width * (np.sqrt(5.0) - 1.0) / 2.0


def _save(fig, path, note=None):
    # fixed metadata keeps equal-input figures byte-identical
    meta = {"Software": None}
    if note:
        meta["Description"] = note
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def plot_mean_edge_probability(times, mean_prob, activity=None, path="mean_edge_prob.png", note=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=golden_size())
        x = np.arange(len(mean_prob)) if times is None else times
        ax.plot(x, mean_prob, color="C0", lw=1.2, label="mean edge probability")
        ax.set_ylabel("mean edge probability")
        ax.set_xlabel("window")
        if activity is not None:
            ax2 = ax.twinx()
            ax2.plot(x, activity, color="C1", lw=0.8, alpha=0.7, label="mean activity")
            ax2.set_ylabel("mean activity")
        fig.autofmt_xdate()
        _save(fig, path, note)


def plot_in_out(node_ids, ingoing, outgoing, activity=None, path="in_out.png", note=None):
    n = len(node_ids)
    panels = 3 if activity is not None else 2
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(panels, 1, sharex=True, figsize=(max(6.0, 0.12 * n), 1.8 * panels))
        for ax, vals, label in zip(axes, (ingoing, outgoing, activity),
                                   ("ingoing", "outgoing", "activity")):
            ax.bar(np.arange(n), vals, color="C0" if label != "activity" else "C1")
            ax.set_ylabel(label)
        axes[-1].set_xticks(np.arange(n))
        axes[-1].set_xticklabels([str(i) for i in node_ids], rotation=90, fontsize=6)
        _save(fig, path, note)


def plot_adjacency(probs, node_ids=None, path="adjacency.png", note=None, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4.2))
        im = ax.imshow(probs, vmin=0, vmax=1, cmap="viridis")
        fig.colorbar(im, ax=ax, label="edge probability")
        ax.set_xlabel("receiver")
        ax.set_ylabel("sender")
        if title:
            ax.set_title(title)
        if node_ids is not None and len(node_ids) <= 30:
            ax.set_xticks(range(len(node_ids)))
            ax.set_xticklabels([str(i) for i in node_ids], rotation=90, fontsize=6)
            ax.set_yticks(range(len(node_ids)))
            ax.set_yticklabels([str(i) for i in node_ids], fontsize=6)
        _save(fig, path, note)


def plot_clusters(node_ids, labels_by_mode: dict, path="clusters.png", note=None):
    modes = list(labels_by_mode)
    n = len(node_ids)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.12 * n), 0.6 + 0.5 * len(modes)))
        grid = np.stack([labels_by_mode[m] for m in modes])
        ax.imshow(grid, aspect="auto", cmap="tab10", interpolation="nearest")
        ax.set_yticks(range(len(modes)))
        ax.set_yticklabels(modes)
        ax.set_xticks(range(n))
        ax.set_xticklabels([str(i) for i in node_ids], rotation=90, fontsize=6)
        _save(fig, path, note)


def plot_forecast(truth, forecast, node_label="", path="forecast.png", note=None):
    """Observed vs. predicted series for one node; inputs are [T] or [T, c]."""
    truth, forecast = np.atleast_2d(np.asarray(truth).T).T, np.atleast_2d(np.asarray(forecast).T).T
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=golden_size())
        for ch in range(truth.shape[1]):
            ax.plot(truth[:, ch], color=f"C{ch}", lw=1.0, label=f"observed {ch}")
            ax.plot(forecast[:, ch], color=f"C{ch}", lw=1.0, ls="--", label=f"predicted {ch}")
        ax.set_title(node_label)
        ax.legend(frameon=False)
        _save(fig, path, note)
