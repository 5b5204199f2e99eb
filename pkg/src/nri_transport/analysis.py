"""Forecast metrics and analytics over learned edge probabilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .core import offdiag_mask


def metrics(preds, targets, eps: float = 1.0) -> dict:
    """MAE, RMSE, MAPE (percent, over entries with |target| > eps) and Pearson correlation.

    MAPE and PCC are NaN when undefined (no target above ``eps``; zero variance).
    """
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {np.shape(preds)} vs {np.shape(targets)}")
    e = p - t
    mae = float(np.mean(np.abs(e)))
    rmse = float(np.sqrt(np.mean(e ** 2)))
    keep = np.abs(t) > eps
    mape = float(np.mean(np.abs(e[keep] / t[keep])) * 100) if keep.any() else float("nan")
    pc, tc = p - p.mean(), t - t.mean()
    denom = np.sqrt(np.sum(pc ** 2) * np.sum(tc ** 2))
    pcc = float(np.clip(np.sum(pc * tc) / denom, -1.0, 1.0)) if denom > 0 else float("nan")
    return {"MAE": mae, "RMSE": rmse, "MAPE": mape, "PCC": pcc}


@dataclass
class EdgeProbSeries:
    """Edge-type-1 probabilities per evaluation window: ``probs`` [T_windows, N, N]."""

    probs: np.ndarray
    timestamps: np.ndarray | None = None
    node_ids: tuple = ()

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise ValueError("edge probabilities must be [T, N, N]")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("edge probabilities must lie in [0, 1]")
        p[:, ~offdiag_mask(p.shape[1])] = 0.0
        self.probs = p

    @property
    def n_nodes(self) -> int:
        return self.probs.shape[1]


def mean_edge_probability(series: EdgeProbSeries) -> np.ndarray:
    """Mean over all ordered pairs i != j, one value per window."""
    mask = offdiag_mask(series.n_nodes)
    return series.probs[:, mask].mean(axis=1)


def node_in_out_profiles(series: EdgeProbSeries, per_window: bool = False):
    """Mean ingoing and outgoing edge probability per node (over senders/receivers and windows).

    With ``per_window`` the time axis is kept: arrays of shape [T, N].
    """
    n = series.n_nodes
    ingoing = series.probs.sum(axis=1) / (n - 1)
    outgoing = series.probs.sum(axis=2) / (n - 1)
    if per_window:
        return ingoing, outgoing
    return ingoing.mean(axis=0), outgoing.mean(axis=0)


def threshold_edges(window_probs, theta: float = 0.8, focal=None, node_ids=None):
    """Ordered pairs with probability above ``theta``.

    Returns ``(sender, receiver, prob)`` tuples, or with a ``focal`` node index
    ``(sender, receiver, prob, "in" | "out")`` restricted to edges touching it.
    """
    p = np.asarray(window_probs, dtype=np.float64)
    mask = offdiag_mask(p.shape[0]) & (p > theta)
    send, recv = np.nonzero(mask)
    name = (lambda i: node_ids[i]) if node_ids is not None else (lambda i: int(i))
    edges = []
    for i, j in zip(send, recv):
        if focal is None:
            edges.append((name(i), name(j), float(p[i, j])))
        elif j == focal:
            edges.append((name(i), name(j), float(p[i, j]), "in"))
        elif i == focal:
            edges.append((name(i), name(j), float(p[i, j]), "out"))
    return edges


def cluster_features(mode: str, series: EdgeProbSeries | None = None, values=None) -> np.ndarray:
    """Per-node feature vectors for clustering.

    ``learned_edges`` concatenates each node's ingoing and outgoing probability
    series; ``observed_series`` uses the raw node series ``values`` [T, N, c].
    """
    if mode == "learned_edges":
        if series is None:
            raise ValueError("learned_edges mode needs an edge-probability series")
        ingoing, outgoing = node_in_out_profiles(series, per_window=True)
        return np.concatenate([ingoing.T, outgoing.T], axis=1)
    if mode == "observed_series":
        if values is None:
            raise ValueError("observed_series mode needs node values")
        v = np.asarray(values, dtype=np.float64)
        return v.transpose(1, 0, 2).reshape(v.shape[1], -1)
    raise ValueError(f"unknown clustering feature mode {mode!r}")


def cluster_nodes(features, k: int, seed: int = 0, n_init: int = 10):
    """k-means over node feature rows; returns (labels, inertia)."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    km = KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit(features)
    return km.labels_.astype(int), float(km.inertia_)
