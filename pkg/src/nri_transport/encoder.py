"""Graph encoder: burn-in history + global features -> edge-type distribution per ordered pair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import NodeWindow, pair_index


class MLP(nn.Module):
    """Two-layer ELU net, optionally layer-normalized."""

    def __init__(self, n_in, n_hid, n_out, layer_norm=False):
        super().__init__()
        self.fc1 = nn.Linear(n_in, n_hid)
        self.fc2 = nn.Linear(n_hid, n_out)
        self.norm = nn.LayerNorm(n_out) if layer_norm else None

    def forward(self, x):
        x = F.elu(self.fc2(F.elu(self.fc1(x))))
        if self.norm is not None:
            x = self.norm(x)
        return x


@dataclass
class EdgeDistribution:
    """Categorical edge-type distribution; ``logits`` is [..., N, N, K] with a zeroed diagonal."""

    logits: torch.Tensor

    @property
    def n_nodes(self) -> int:
        return self.logits.shape[-2]

    @property
    def n_types(self) -> int:
        return self.logits.shape[-1]

    @property
    def probs(self) -> torch.Tensor:
        n = self.n_nodes
        mask = (~torch.eye(n, dtype=torch.bool, device=self.logits.device)).unsqueeze(-1)
        return torch.softmax(self.logits, dim=-1) * mask

    def pair_logits(self) -> torch.Tensor:
        """Logits gathered over the off-diagonal pairs: [..., N(N-1), K]."""
        send, recv = pair_index(self.n_nodes, self.logits.device)
        return self.logits[..., send, recv, :]

    def pair_probs(self) -> torch.Tensor:
        return torch.softmax(self.pair_logits(), dim=-1)


def scatter_pairs(pair_values: torch.Tensor, n: int) -> torch.Tensor:
    """Inverse of pair gathering: [..., N(N-1), K] -> [..., N, N, K] with zero diagonal."""
    send, recv = pair_index(n, pair_values.device)
    shape = pair_values.shape[:-2] + (n, n, pair_values.shape[-1])
    dense = pair_values.new_zeros(shape)
    dense[..., send, recv, :] = pair_values
    return dense


class GraphEncoder(nn.Module):
    """Three stacked GN blocks over the fully connected graph, then an edge-logit head.

    Node histories enter flattened (``P * c`` inputs) or through a GRU when
    ``node_embedder="gru"``. ``global_mode`` selects whether the global
    embedder sees the whole ``P + Q`` track ("full") or the first ``P`` steps.
    """

    def __init__(self, P, n_features, n_globals, hidden=256, n_edge_types=2, Q=0,
                 global_mode="full", node_embedder="flat", layer_norm=False):
        super().__init__()
        if global_mode not in ("full", "historical"):
            raise ValueError(f"global_mode must be 'full' or 'historical', got {global_mode!r}")
        if global_mode == "full" and n_globals > 0 and Q < 1:
            raise ValueError("full global mode needs the prediction length Q")
        self.P, self.Q = P, Q
        self.n_features, self.n_globals = n_features, n_globals
        self.n_edge_types = n_edge_types
        self.global_mode = global_mode
        self.node_embedder = node_embedder
        g = hidden if n_globals > 0 else 0

        if node_embedder == "flat":
            self.f_emb = MLP(P * n_features, hidden, hidden, layer_norm)
        elif node_embedder == "gru":
            self.f_emb = nn.GRU(n_features, hidden, batch_first=True)
        else:
            raise ValueError(f"unknown node embedder {node_embedder!r}")
        if n_globals > 0:
            self.f_u = MLP(self.global_steps * n_globals, hidden, hidden, layer_norm)
        self.f_e1 = MLP(2 * hidden + g, hidden, hidden, layer_norm)
        self.f_v1 = MLP(hidden + g, hidden, hidden, layer_norm)
        self.f_e2 = MLP(3 * hidden, hidden, hidden, layer_norm)
        self.f_p = nn.Linear(hidden, n_edge_types)

    @property
    def global_steps(self) -> int:
        return self.P + self.Q if self.global_mode == "full" else self.P

    def _embed_nodes(self, x):
        B, P, N, c = x.shape
        if self.node_embedder == "flat":
            return self.f_emb(x.permute(0, 2, 1, 3).reshape(B, N, P * c))
        seq = x.permute(0, 2, 1, 3).reshape(B * N, P, c)
        _, h = self.f_emb(seq)
        return h[-1].reshape(B, N, -1)

    def forward(self, x, u=None):
        """``x``: [B, P, N, c]; ``u``: [B, G, c_u] with G >= global_steps. Returns logits [B, N, N, K]."""
        if x.dim() != 4:
            raise ValueError(f"expected burn-in of shape [B, P, N, c], got {tuple(x.shape)}")
        B, P, N, c = x.shape
        if P != self.P:
            raise ValueError(f"encoder built for P={self.P}, got a burn-in of length {P}")
        if N < 2:
            raise ValueError("encoding needs at least two nodes")
        send, recv = pair_index(N, x.device)

        h1 = self._embed_nodes(x)
        edge_in = [h1[:, send], h1[:, recv]]
        node_extra = []
        if self.n_globals > 0:
            if u is None or u.shape[1] < self.global_steps:
                raise ValueError(f"global track must cover {self.global_steps} steps")
            u1 = self.f_u(u[:, :self.global_steps].reshape(B, -1))
            n_pairs = send.shape[0]
            edge_in.append(u1.unsqueeze(1).expand(B, n_pairs, -1))
            node_extra.append(u1.unsqueeze(1).expand(B, N, -1))
        e1 = self.f_e1(torch.cat(edge_in, dim=-1))

        agg = e1.new_zeros(B, N, e1.shape[-1]).index_add(1, recv, e1)
        h2 = self.f_v1(torch.cat([agg] + node_extra, dim=-1))
        e2 = self.f_e2(torch.cat([h2[:, send], h2[:, recv], e1], dim=-1))
        pair_logits = self.f_p(e2)
        return scatter_pairs(pair_logits, N)


def _window_tensors(window: NodeWindow, encoder: GraphEncoder, global_track=None):
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(np.asarray(window.burn_in), dtype=dtype).unsqueeze(0)
    track = window.global_track if global_track is None else global_track
    u = torch.as_tensor(np.asarray(track), dtype=dtype).unsqueeze(0)
    return x, u


def encode(window: NodeWindow, encoder: GraphEncoder) -> EdgeDistribution:
    """Edge distribution for a single window, using the window's own global track."""
    if window.P != encoder.P:
        raise ValueError(f"window has P={window.P}, encoder expects P={encoder.P}")
    x, u = _window_tensors(window, encoder)
    return EdgeDistribution(encoder(x, u)[0])


def encode_full_global(window: NodeWindow, encoder: GraphEncoder, global_full) -> EdgeDistribution:
    """As :func:`encode` but with an explicitly supplied ``P + Q`` global track."""
    expected = window.P + window.Q
    if len(global_full) != expected:
        raise ValueError(f"global track has {len(global_full)} steps, expected {expected}")
    x, u = _window_tensors(window, encoder, global_full)
    return EdgeDistribution(encoder(x, u)[0])
