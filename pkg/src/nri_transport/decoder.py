"""Recurrent GN decoder with GRU node states, the Gaussian NLL and the lag baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import AdjacencyMatrix, NodeWindow, pair_index
from .latent import GraphSample


@dataclass
class RolloutResult:
    """``predictions[s]`` is the one-step mean for step ``s + 1`` of the window."""

    predictions: torch.Tensor   # [B, P+Q, N, c]
    hidden: torch.Tensor        # [B, N, hidden]

    def forecast(self, P: int, Q: int) -> torch.Tensor:
        """The ``Q`` predictions aligned with the target steps: [B, Q, N, c]."""
        return self.predictions[:, P - 1:P - 1 + Q]


class RecurrentDecoder(nn.Module):
    """Per-edge-type messages from GRU hidden states, summed into each receiver's GRU input."""

    def __init__(self, n_features, n_globals, hidden=256, n_edge_types=2, skip_first=True,
                 sigma=math.sqrt(0.1)):
        super().__init__()
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.n_features, self.n_globals = n_features, n_globals
        self.hidden_size = hidden
        self.n_edge_types = n_edge_types
        self.skip_first = skip_first
        self.sigma = sigma
        self.msg_fc1 = nn.ModuleList(
            [nn.Linear(2 * hidden + n_globals, hidden) for _ in range(n_edge_types)])
        self.msg_fc2 = nn.ModuleList([nn.Linear(hidden, hidden) for _ in range(n_edge_types)])
        self.gru = nn.GRUCell(hidden + n_features + n_globals, hidden)
        self.out_fc1 = nn.Linear(hidden, hidden)
        self.out_fc2 = nn.Linear(hidden, n_features)

    def f_out(self, h):
        return self.out_fc2(F.relu(self.out_fc1(h)))

    def init_hidden(self, batch, n_nodes, like):
        return like.new_zeros(batch, n_nodes, self.hidden_size)

    def messages(self, hidden, u_t, z):
        """Aggregated incoming messages [B, N, hidden] for graph ``z`` [B, N, N, K]."""
        B, N, H = hidden.shape
        send, recv = pair_index(N, hidden.device)
        parts = [hidden[:, send], hidden[:, recv]]
        if self.n_globals > 0:
            parts.append(u_t.unsqueeze(1).expand(B, send.shape[0], -1))
        pre = torch.cat(parts, dim=-1)
        z_pairs = z[:, send, recv]
        edge_msg = pre.new_zeros(B, send.shape[0], H)
        for k in range(1 if self.skip_first else 0, self.n_edge_types):
            m = torch.tanh(self.msg_fc2[k](torch.tanh(self.msg_fc1[k](pre))))
            edge_msg = edge_msg + z_pairs[..., k:k + 1] * m
        return hidden.new_zeros(B, N, H).index_add(1, recv, edge_msg)

    def step(self, hidden, x_t, u_t, z):
        """One decoder iteration; returns (mean for the next step, next hidden)."""
        B, N, _ = hidden.shape
        msg = self.messages(hidden, u_t, z)
        parts = [msg, x_t]
        if self.n_globals > 0:
            parts.append(u_t.unsqueeze(1).expand(B, N, -1))
        gru_in = torch.cat(parts, dim=-1).reshape(B * N, -1)
        h_next = self.gru(gru_in, hidden.reshape(B * N, -1)).reshape(B, N, -1)
        return x_t + self.f_out(h_next), h_next

    def forward(self, x, u, z, P):
        """Roll ``P + Q`` steps: true inputs for the first ``P``, own predictions after.

        ``x``: [B, P+Q, N, c] (only the first ``P`` steps are read);
        ``u``: [B, P+Q, c_u]; ``z``: [B, N, N, K] or [N, N, K].
        """
        B, T, N, c = x.shape
        if T - P < 1:
            raise ValueError("rollout needs at least one prediction step (Q >= 1)")
        if z.dim() == 3:
            z = z.unsqueeze(0).expand(B, -1, -1, -1)
        if z.shape[1] != N or z.shape[2] != N or z.shape[3] != self.n_edge_types:
            raise ValueError(f"graph of shape {tuple(z.shape)} does not match {N} nodes, "
                             f"{self.n_edge_types} edge types")
        if u is None:
            u = x.new_zeros(B, T, 0)
        hidden = self.init_hidden(B, N, x)
        preds = []
        x_in = x[:, 0]
        for s in range(T):
            if s < P:
                x_in = x[:, s]
            mu, hidden = self.step(hidden, x_in, u[:, s], z)
            preds.append(mu)
            x_in = mu
        return RolloutResult(torch.stack(preds, dim=1), hidden)


def decode_step(hidden, x_t, u_t, graph: GraphSample, decoder: RecurrentDecoder):
    """Unbatched convenience wrapper: [N, hidden], [N, c], [c_u] -> (mu_next, hidden_next)."""
    z = graph.soft_adjacency
    if z.shape[0] != hidden.shape[0]:
        raise ValueError("graph and hidden state disagree on the number of nodes")
    mu, h = decoder.step(hidden.unsqueeze(0), x_t.unsqueeze(0), u_t.unsqueeze(0), z.unsqueeze(0))
    return mu[0], h[0]


def _window_batch(window: NodeWindow, dtype):
    x = torch.as_tensor(window.full(), dtype=dtype).unsqueeze(0)
    u = torch.as_tensor(np.asarray(window.global_track), dtype=dtype).unsqueeze(0)
    return x, u


def rollout(window: NodeWindow, graph: GraphSample, decoder: RecurrentDecoder) -> RolloutResult:
    if window.Q < 1:
        raise ValueError("rollout needs Q >= 1")
    dtype = next(decoder.parameters()).dtype
    x, u = _window_batch(window, dtype)
    return decoder(x, u, graph.soft_adjacency.to(dtype), window.P)


def fixed_adjacency_rollout(window: NodeWindow, adj: AdjacencyMatrix,
                            decoder: RecurrentDecoder) -> RolloutResult:
    dtype = next(decoder.parameters()).dtype
    graph = GraphSample.from_adjacency(adj, decoder.n_edge_types, dtype)
    return rollout(window, graph, decoder)


def gaussian_nll(preds, targets, sigma):
    """Sum of ``e**2 / (2 sigma**2) + log(2 pi sigma) / 2`` over every predicted entry.

    Leading batch dimensions beyond [Q, N, c] are averaged.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {tuple(preds.shape)} vs {tuple(targets.shape)}")
    terms = (preds - targets) ** 2 / (2 * sigma ** 2) + 0.5 * math.log(2 * math.pi * sigma)
    if terms.dim() <= 3:
        return terms.sum()
    return terms.sum(dim=(-3, -2, -1)).mean()


def lag_predict(window: NodeWindow) -> np.ndarray:
    """Repeat the last burn-in observation for all ``Q`` steps."""
    if window.P < 1:
        raise ValueError("lag prediction needs at least one burn-in step")
    last = np.asarray(window.burn_in[-1])
    return np.repeat(last[None], window.Q, axis=0)
