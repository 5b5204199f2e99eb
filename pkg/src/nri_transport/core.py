"""Shared data types: series containers, sliding windows, normalization, adjacency."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesDataset:
    """Node features ``values`` [T, N, c] with a global track ``globals`` [T, c_u]."""

    values: np.ndarray
    globals: np.ndarray
    timestamps: np.ndarray
    node_ids: tuple
    name: str = "dataset"

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"values must be [T, N, c], got shape {self.values.shape}")
        if self.globals.ndim != 2 or self.globals.shape[0] != self.values.shape[0]:
            raise ValueError("globals must be [T, c_u] sharing T with values")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("one timestamp per time step required")
        if len(self.node_ids) != self.values.shape[1]:
            raise ValueError("one node id per node required")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError("node ids must be unique")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    @property
    def n_globals(self) -> int:
        return self.globals.shape[1]

    def with_values(self, values: np.ndarray) -> "SeriesDataset":
        return SeriesDataset(values, self.globals, self.timestamps, self.node_ids, self.name)


@dataclass(frozen=True)
class NodeWindow:
    burn_in: np.ndarray       # [P, N, c]
    target: np.ndarray        # [Q, N, c]
    global_track: np.ndarray  # [P + Q, c_u]
    origin_index: int

    @property
    def P(self) -> int:
        return self.burn_in.shape[0]

    @property
    def Q(self) -> int:
        return self.target.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.burn_in.shape[1]

    def full(self) -> np.ndarray:
        return np.concatenate([self.burn_in, self.target], axis=0)


def build_windows(dataset: SeriesDataset, P: int, Q: int, stride: int = 1) -> list[NodeWindow]:
    """Slide a ``P + Q`` window over the series, starting every ``stride`` steps."""
    if P < 1 or Q < 1:
        raise ValueError("P and Q must be at least 1")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    T = dataset.n_steps
    if T < P + Q:
        raise InsufficientHistoryError(
            f"insufficient history: series has {T} steps, need at least P+Q={P + Q}")
    n = (T - P - Q) // stride + 1
    windows = []
    for k in range(n):
        o = k * stride
        windows.append(NodeWindow(
            burn_in=dataset.values[o:o + P],
            target=dataset.values[o + P:o + P + Q],
            global_track=dataset.globals[o:o + P + Q],
            origin_index=o,
        ))
    return windows


def split_dataset(windows: Sequence, fractions=(0.8, 0.1, 0.1)):
    """Chronological train/val/test split; train takes the earliest windows."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(windows)
    if n < 3:
        raise ValueError(f"need at least 3 windows to split, got {n}")
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = max(1, int(round(fractions[1] * n)))
    if n_train + n_val >= n:
        n_train = n - n_val - 1
    windows = list(windows)
    return (windows[:n_train],
            windows[n_train:n_train + n_val],
            windows[n_train + n_val:])


def stack_windows(windows: Sequence[NodeWindow], dtype=torch.float32):
    """Batch windows into tensors ``x`` [B, P+Q, N, c] and ``u`` [B, P+Q, c_u]."""
    x = np.stack([w.full() for w in windows])
    u = np.stack([w.global_track for w in windows])
    return torch.as_tensor(x, dtype=dtype), torch.as_tensor(u, dtype=dtype)


@dataclass(frozen=True)
class Normalizer:
    kind: str = "standardize"
    per_feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    per_feature_scale: np.ndarray = field(default_factory=lambda: np.ones(1))
    degenerate: tuple = ()

    def __post_init__(self):
        if self.kind not in ("standardize", "none"):
            raise ValueError(f"unknown normalizer kind {self.kind!r}")
        if np.any(np.asarray(self.per_feature_scale) <= 0):
            raise ValueError("normalizer scales must be strictly positive")

    def apply(self, x):
        if self.kind == "none":
            return x
        mean, scale = self._params_like(x)
        return (x - mean) / scale

    def invert(self, x):
        if self.kind == "none":
            return x
        mean, scale = self._params_like(x)
        return x * scale + mean

    def _params_like(self, x):
        if isinstance(x, torch.Tensor):
            return (torch.as_tensor(self.per_feature_mean, dtype=x.dtype),
                    torch.as_tensor(self.per_feature_scale, dtype=x.dtype))
        return self.per_feature_mean, self.per_feature_scale


def fit_normalizer(train_values, kind: str = "standardize") -> Normalizer:
    """Fit per-feature mean and population standard deviation over all leading axes."""
    arr = np.asarray(train_values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot fit a normalizer on empty data")
    c = arr.shape[-1]
    if kind == "none":
        return Normalizer("none", np.zeros(c), np.ones(c))
    flat = arr.reshape(-1, c)
    mean = flat.mean(axis=0)
    scale = flat.std(axis=0)
    degenerate = tuple(int(i) for i in np.flatnonzero(~(scale > 0)))
    if degenerate:
        logger.warning("zero-variance feature channels %s standardized with scale 1", degenerate)
        scale = np.where(scale > 0, scale, 1.0)
    return Normalizer(kind, mean, scale, degenerate)


def offdiag_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def pair_index(n: int, device=None):
    """Sender/receiver index tensors for every ordered pair i != j, row-major."""
    send, recv = np.nonzero(offdiag_mask(n))
    return (torch.as_tensor(send, dtype=torch.long, device=device),
            torch.as_tensor(recv, dtype=torch.long, device=device))


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Directed adjacency ``entries[i, j]`` for sender i, receiver j; zero diagonal."""

    entries: np.ndarray
    node_ids: tuple = ()

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {e.shape}")
        if np.any(np.diag(e) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if np.any((e < 0) | (e > 1)):
            raise ValueError("adjacency entries must lie in [0, 1]")
        if self.node_ids and len(self.node_ids) != e.shape[0]:
            raise ValueError("node_ids length does not match adjacency size")
        object.__setattr__(self, "entries", e)

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[0]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.entries == 0) | (self.entries == 1)))

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.entries))

    def density(self) -> float:
        n = self.n_nodes
        return self.n_edges / (n * (n - 1)) if n > 1 else 0.0

    @classmethod
    def empty(cls, n: int, node_ids=()) -> "AdjacencyMatrix":
        return cls(np.zeros((n, n)), tuple(node_ids))

    @classmethod
    def full(cls, n: int, node_ids=()) -> "AdjacencyMatrix":
        return cls(offdiag_mask(n).astype(float), tuple(node_ids))
