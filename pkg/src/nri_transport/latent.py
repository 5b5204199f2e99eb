"""Gumbel-softmax graph sampling, edge priors and the categorical KL term."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import AdjacencyMatrix, offdiag_mask
from .encoder import EdgeDistribution

EPS = 1e-20
PROVENANCES = ("uniform", "local", "dtw", "custom")


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + EPS) + EPS)


def gumbel_softmax_sample(logits, tau=0.5, noise=None, generator=None, hard=False):
    """Relaxed one-hot sample ``softmax((logits + g) / tau)`` over the last axis.

    ``noise`` fixes the Gumbel draws ``g`` (same shape as ``logits``); otherwise
    they are drawn from ``generator``. With ``hard`` the forward value is the
    one-hot argmax and gradients flow through the relaxed sample.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, logits.dtype)
    y = torch.softmax((logits + noise) / tau, dim=-1)
    if hard:
        idx = y.argmax(dim=-1, keepdim=True)
        y_hard = torch.zeros_like(y).scatter_(-1, idx, 1.0)
        y = (y_hard - y).detach() + y
    return y


@dataclass
class GraphSample:
    """Relaxed adjacency [..., N, N, K]; each off-diagonal row sums to one, diagonal is zero."""

    soft_adjacency: torch.Tensor
    tau: float = 0.5
    hard: bool = False

    @property
    def n_nodes(self) -> int:
        return self.soft_adjacency.shape[-2]

    @classmethod
    def from_adjacency(cls, adj: AdjacencyMatrix, n_edge_types=2, dtype=torch.float32):
        """One-hot graph: edge type 1 where ``adj`` is 1, type 0 elsewhere."""
        if not adj.is_binary:
            raise ValueError("fixed-graph decoding needs a binary adjacency matrix")
        e = torch.as_tensor(adj.entries, dtype=dtype)
        z = torch.zeros(e.shape + (n_edge_types,), dtype=dtype)
        z[..., 1] = e
        z[..., 0] = 1.0 - e
        z *= torch.as_tensor(offdiag_mask(adj.n_nodes), dtype=dtype).unsqueeze(-1)
        return cls(z, tau=0.0, hard=True)

    @classmethod
    def no_edges(cls, n, n_edge_types=2, dtype=torch.float32):
        return cls.from_adjacency(AdjacencyMatrix.empty(n), n_edge_types, dtype)


def sample_graph(dist: EdgeDistribution, tau=0.5, generator=None, hard=False) -> GraphSample:
    n = dist.n_nodes
    z = gumbel_softmax_sample(dist.logits, tau, generator=generator, hard=hard)
    mask = (~torch.eye(n, dtype=torch.bool, device=z.device)).unsqueeze(-1)
    return GraphSample(z * mask, tau, hard)


def argmax_graph(dist: EdgeDistribution) -> GraphSample:
    """Deterministic one-hot graph at the mode of ``dist``."""
    n = dist.n_nodes
    probs = dist.probs
    idx = probs.argmax(dim=-1, keepdim=True)
    z = torch.zeros_like(probs).scatter_(-1, idx, 1.0)
    mask = (~torch.eye(n, dtype=torch.bool, device=z.device)).unsqueeze(-1)
    return GraphSample(z * mask, 0.0, True)


@dataclass
class PriorSpec:
    """Factorized per-edge prior: a shared [K] vector or per-pair [N, N, K] probabilities."""

    per_edge_probs: np.ndarray
    provenance: str = "uniform"
    confidence: float | None = None
    adjacency_ref: str | None = None

    def __post_init__(self):
        p = np.asarray(self.per_edge_probs, dtype=np.float64)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown prior provenance {self.provenance!r}")
        if p.ndim == 3:
            vecs = p[offdiag_mask(p.shape[0])]
        elif p.ndim == 1:
            vecs = p[None]
        else:
            raise ValueError("prior must be a [K] vector or an [N, N, K] tensor")
        if np.any(vecs <= 0):
            raise ValueError("prior probabilities must be strictly positive")
        if not np.allclose(vecs.sum(-1), 1.0, atol=1e-9):
            raise ValueError("prior probabilities must sum to one per edge")
        self.per_edge_probs = p

    @property
    def n_types(self) -> int:
        return self.per_edge_probs.shape[-1]

    @property
    def shared(self) -> bool:
        return self.per_edge_probs.ndim == 1

    def dense(self, n: int) -> np.ndarray:
        """[N, N, K] probabilities (diagonal rows repeat the no-edge prior but are never used)."""
        if self.shared:
            return np.broadcast_to(self.per_edge_probs, (n, n, self.n_types)).copy()
        if self.per_edge_probs.shape[0] != n:
            raise ValueError(f"structured prior has {self.per_edge_probs.shape[0]} nodes, graph has {n}")
        return self.per_edge_probs

    def log_probs(self, n: int, dtype=torch.float32) -> torch.Tensor:
        p = self.dense(n).copy()
        p[~offdiag_mask(n)] = 1.0 / self.n_types
        return torch.as_tensor(np.log(p), dtype=dtype)

    def to_file(self, path, header: dict | None = None) -> None:
        doc = {**(header or {}), "provenance": self.provenance, "confidence": self.confidence,
               "n_types": self.n_types}
        if self.shared:
            doc["probs"] = self.per_edge_probs.tolist()
        elif self.adjacency_ref is not None:
            doc["adjacency"] = self.adjacency_ref
        else:
            doc["per_edge_probs"] = self.per_edge_probs.tolist()
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def from_file(cls, path) -> "PriorSpec":
        path = Path(path)
        doc = json.loads(path.read_text())
        if "probs" in doc:
            return cls(np.array(doc["probs"]), doc["provenance"], doc.get("confidence"))
        if "per_edge_probs" in doc:
            return cls(np.array(doc["per_edge_probs"]), doc["provenance"], doc.get("confidence"))
        from .io import read_edge_list
        ref = Path(doc["adjacency"])
        if not ref.is_absolute():
            ref = path.parent / ref
        prior = build_structured_prior(read_edge_list(ref), doc["confidence"], doc["provenance"])
        prior.adjacency_ref = doc["adjacency"]
        return prior


def build_uniform_prior(n_types=2, p_no_edge=0.9) -> PriorSpec:
    """Shared prior with ``p_no_edge`` on type 0 and the remainder split evenly."""
    if not 0 < p_no_edge < 1:
        raise ValueError(f"p_no_edge must lie in (0, 1), got {p_no_edge}")
    if n_types < 2:
        raise ValueError("need at least two edge types")
    probs = np.full(n_types, (1.0 - p_no_edge) / (n_types - 1))
    probs[0] = p_no_edge
    return PriorSpec(probs, "uniform", p_no_edge)


def build_structured_prior(adj: AdjacencyMatrix, edge_conf=0.9, provenance="custom") -> PriorSpec:
    """Per-pair (no-edge, edge) prior: (1-conf, conf) where ``adj`` is 1, (conf, 1-conf) elsewhere."""
    if not adj.is_binary:
        raise ValueError("structured priors need a binary adjacency matrix")
    if not 0.5 < edge_conf < 1:
        raise ValueError(f"edge confidence must lie in (0.5, 1), got {edge_conf}")
    e = adj.entries
    probs = np.stack([np.where(e == 1, 1 - edge_conf, edge_conf),
                      np.where(e == 1, edge_conf, 1 - edge_conf)], axis=-1)
    return PriorSpec(probs, provenance, edge_conf)


def kl_categorical(q: EdgeDistribution, prior: PriorSpec) -> torch.Tensor:
    """Sum over off-diagonal pairs and types of ``q log(q / p)``; batched leading dims are kept."""
    n = q.n_nodes
    if prior.n_types != q.n_types:
        raise ValueError(f"prior has {prior.n_types} edge types, distribution has {q.n_types}")
    logits = q.logits
    log_q = torch.log_softmax(logits, dim=-1)
    probs = log_q.exp()
    log_p = prior.log_probs(n, logits.dtype).to(logits.device)
    mask = torch.as_tensor(offdiag_mask(n), device=logits.device).unsqueeze(-1)
    kl = torch.where(mask, probs * (log_q - log_p), torch.zeros_like(probs))
    return kl.sum(dim=(-3, -2, -1))


def kl_probs(q_probs, p_probs) -> float:
    """KL for explicit probability arrays [..., K] with the 0 log 0 = 0 convention."""
    q = np.asarray(q_probs, dtype=np.float64)
    p = np.asarray(p_probs, dtype=np.float64)
    if np.any((p == 0) & (q > 0)):
        raise ValueError("prior assigns zero probability where q is positive: KL is infinite")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(q / p), 0.0)
    return float(terms.sum())
