"""ELBO assembly, encoder pretraining, the training loop and evaluation."""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import torch
from torch import nn

from .analysis import metrics
from .core import AdjacencyMatrix, Normalizer, stack_windows
from .decoder import RecurrentDecoder, gaussian_nll
from .encoder import EdgeDistribution, GraphEncoder
from .latent import GraphSample, PriorSpec, argmax_graph, kl_categorical, sample_graph

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class ModelConfig:
    mode: str = "nri"                 # nri | fixed
    n_edge_types: int = 2
    hidden: int = 256
    tau: float = 0.5
    sigma: float = math.sqrt(0.1)
    global_mode: str = "full"         # full | historical
    node_embedder: str = "flat"       # flat | gru
    layer_norm: bool = False
    skip_first: bool = True
    hard_sample: bool = False
    eval_graph: str = "argmax"        # argmax | soft | sample


@dataclass
class TrainConfig:
    epochs: int = 50
    pretrain_epochs: int = 30
    lr: float = 5e-4
    batch_size: int = 16
    clip: float = 5.0
    patience: int = 10
    seed: int = 0
    include_burn_in: bool = False
    mape_eps: float = 1.0
    lr_schedule: str = "constant"     # constant | cosine
    lr_min: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        for name in ("lr", "batch_size", "clip", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class NRIForecaster(nn.Module):
    """Encoder + recurrent decoder, or decoder alone on a fixed adjacency matrix."""

    def __init__(self, P, Q, n_features, n_globals, config: ModelConfig | None = None,
                 adjacency: AdjacencyMatrix | None = None):
        super().__init__()
        config = config or ModelConfig()
        self.P, self.Q = P, Q
        self.config = config
        if config.mode == "nri":
            self.encoder = GraphEncoder(P, n_features, n_globals, config.hidden, config.n_edge_types,
                                        Q=Q, global_mode=config.global_mode,
                                        node_embedder=config.node_embedder,
                                        layer_norm=config.layer_norm)
            self.fixed_graph = None
        elif config.mode == "fixed":
            if adjacency is None:
                raise ValueError("fixed mode needs an adjacency matrix")
            self.encoder = None
            self.register_buffer("fixed_graph", GraphSample.from_adjacency(
                adjacency, config.n_edge_types).soft_adjacency)
        else:
            raise ValueError(f"unknown model mode {config.mode!r}")
        self.decoder = RecurrentDecoder(n_features, n_globals, config.hidden, config.n_edge_types,
                                        skip_first=config.skip_first, sigma=config.sigma)

    @property
    def has_latent_graph(self) -> bool:
        return self.encoder is not None

    def edge_distribution(self, x, u) -> EdgeDistribution:
        if self.encoder is None:
            raise ValueError("fixed-adjacency models have no latent graph")
        return EdgeDistribution(self.encoder(x[:, :self.P], u))

    def graph(self, x, u, how="sample", generator=None):
        """(graph tensor [B, N, N, K], edge distribution or None)."""
        if self.encoder is None:
            return self.fixed_graph, None
        dist = self.edge_distribution(x, u)
        if how == "sample":
            g = sample_graph(dist, self.config.tau, generator, hard=self.config.hard_sample)
        elif how == "argmax":
            g = argmax_graph(dist)
        elif how == "soft":
            g = GraphSample(dist.probs)
        else:
            raise ValueError(f"unknown graph mode {how!r}")
        return g.soft_adjacency, dist

    def forecast(self, x, u, how="argmax", generator=None):
        z, _ = self.graph(x, u, how, generator)
        return self.decoder(x, u, z, self.P).forecast(self.P, self.Q)


def elbo_loss(model: NRIForecaster, x, u, prior: PriorSpec | None, generator=None,
              include_burn_in=False):
    """(nll, kl, total) averaged over the batch; total = nll + kl is the negative ELBO."""
    P, Q = model.P, model.Q
    z, dist = model.graph(x, u, "sample", generator)
    result = model.decoder(x, u, z, P)
    if include_burn_in:
        preds, targets = result.predictions[:, :P + Q - 1], x[:, 1:P + Q]
    else:
        preds, targets = result.forecast(P, Q), x[:, P:P + Q]
    nll = gaussian_nll(preds, targets, model.decoder.sigma)
    if dist is None or prior is None:
        kl = nll.new_zeros(())
    else:
        kl = kl_categorical(dist, prior).mean()
    return nll, kl, nll + kl


def _epoch_generator(seed, epoch, phase):
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + epoch * 7 + phase)


def _batches(n, batch_size, gen):
    order = torch.randperm(n, generator=gen)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pretrain_encoder(model: NRIForecaster, windows, prior: PriorSpec, epochs=30, lr=5e-4,
                     batch_size=16, seed=0, log=None):
    """Fit the encoder to the prior with the KL term alone. Returns the mean KL per epoch."""
    if epochs == 0:
        return []
    if model.encoder is None:
        raise ValueError("nothing to pretrain: model has no encoder")
    dtype = next(model.parameters()).dtype
    x, u = stack_windows(windows, dtype)
    opt = torch.optim.Adam(model.encoder.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        gen = _epoch_generator(seed, epoch, 1)
        total, count = 0.0, 0
        for idx in _batches(len(x), batch_size, gen):
            kl = kl_categorical(model.edge_distribution(x[idx], u[idx]), prior).mean()
            opt.zero_grad()
            kl.backward()
            opt.step()
            total += kl.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        if log is not None:
            log.add(phase="pretrain", epoch=epoch, nll=float("nan"), kl=total / count,
                    elbo=float("nan"), wall_clock=time.perf_counter() - t0)
    return history


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def train_rows(self):
        return [r for r in self.rows if r["phase"] == "train"]


@dataclass
class TrainState:
    """Everything needed to continue training after ``epoch``."""

    epoch: int
    model_state: dict
    optimizer_state: dict
    best_state: dict
    best_val: float
    best_epoch: int
    bad_epochs: int


@dataclass
class TrainResult:
    model: NRIForecaster
    log: TrainLog
    best_val_mae: float
    best_epoch: int
    last_state: TrainState


def _scheduler(opt, config: TrainConfig):
    if config.lr_schedule == "constant":
        return None
    if config.lr_schedule == "cosine":
        return lambda epoch: config.lr_min + 0.5 * (config.lr - config.lr_min) * (
            1 + math.cos(math.pi * epoch / max(config.epochs, 1)))
    raise ValueError(f"unknown learning-rate schedule {config.lr_schedule!r}")


def _set_lr(opt, sched, epoch):
    if sched is not None:
        for group in opt.param_groups:
            group["lr"] = sched(epoch)


def _param_snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(model: NRIForecaster, train_windows, val_windows, config: TrainConfig,
          prior: PriorSpec | None = None, normalizer: Normalizer | None = None,
          resume: TrainState | None = None, log: TrainLog | None = None,
          on_epoch=None) -> TrainResult:
    """Pretrain (NRI only), then minimise the negative ELBO with clipping and early stopping.

    The returned model holds the parameters of the best validation epoch.
    ``on_epoch(state)`` is called after each joint-training epoch.
    """
    log = log if log is not None else TrainLog()
    dtype = next(model.parameters()).dtype
    if resume is None and model.has_latent_graph and config.pretrain_epochs > 0:
        if prior is None:
            raise ValueError("pretraining needs a prior")
        pretrain_encoder(model, train_windows, prior, config.pretrain_epochs, config.lr,
                         config.batch_size, config.seed, log)

    x, u = stack_windows(train_windows, dtype)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = _scheduler(opt, config)
    start = 0
    best_val, best_epoch, bad = math.inf, -1, 0
    best_state = _param_snapshot(model)
    if resume is not None:
        model.load_state_dict(resume.model_state)
        opt.load_state_dict(resume.optimizer_state)
        start = resume.epoch + 1
        best_val, best_epoch, bad = resume.best_val, resume.best_epoch, resume.bad_epochs
        best_state = copy.deepcopy(resume.best_state)

    state = resume
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        _set_lr(opt, sched, epoch)
        model.train()
        gen = _epoch_generator(config.seed, epoch, 2)
        sums = np.zeros(3)
        for idx in _batches(len(x), config.batch_size, gen):
            nll, kl, total = elbo_loss(model, x[idx], u[idx], prior, gen, config.include_burn_in)
            if not torch.isfinite(total):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}: nll={nll.item()}, kl={kl.item()}")
            opt.zero_grad()
            total.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip)
            opt.step()
            sums += np.array([nll.item(), kl.item(), total.item()]) * len(idx)
        sums /= len(x)
        model.eval()
        val = evaluate(model, val_windows, normalizer, eps=config.mape_eps)
        val_mae = val["all"]["MAE"]
        log.add(phase="train", epoch=epoch, nll=sums[0], kl=sums[1], elbo=-sums[2],
                val_mae=val_mae, val_rmse=val["all"]["RMSE"], wall_clock=time.perf_counter() - t0)
        logger.info("epoch %d: nll=%.4f kl=%.4f val_mae=%.4f", epoch, sums[0], sums[1], val_mae)
        if val_mae < best_val:
            best_val, best_epoch, bad = val_mae, epoch, 0
            best_state = _param_snapshot(model)
        else:
            bad += 1
        state = TrainState(epoch, _param_snapshot(model), copy.deepcopy(opt.state_dict()),
                           best_state, best_val, best_epoch, bad)
        if on_epoch is not None:
            on_epoch(state)
        if bad >= config.patience:
            logger.info("early stopping at epoch %d (best %d)", epoch, best_epoch)
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, log, best_val, best_epoch, state)


@torch.no_grad()
def predict(model: NRIForecaster, windows, how=None, batch_size=64, seed=0):
    """Forecasts [W, Q, N, c] in the model's (normalized) units."""
    how = how or model.config.eval_graph
    dtype = next(model.parameters()).dtype
    gen = torch.Generator().manual_seed(seed)
    out = []
    for i in range(0, len(windows), batch_size):
        x, u = stack_windows(windows[i:i + batch_size], dtype)
        out.append(model.forecast(x, u, how, gen))
    return torch.cat(out).numpy()


@torch.no_grad()
def edge_probabilities(model: NRIForecaster, windows, batch_size=64) -> np.ndarray:
    """Probability of the first real edge type (index 1) per window: [W, N, N]."""
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(windows), batch_size):
        x, u = stack_windows(windows[i:i + batch_size], dtype)
        out.append(model.edge_distribution(x, u).probs[..., 1])
    return torch.cat(out).numpy()


def horizon_metrics(forecast, targets, horizons=None, eps=1.0) -> dict:
    """Metrics per 1-based horizon plus ``"all"`` over every horizon. Arrays are [W, Q, N, c]."""
    Q = forecast.shape[1]
    horizons = list(horizons) if horizons is not None else []
    for h in horizons:
        if not 1 <= h <= Q:
            raise ValueError(f"horizon {h} outside 1..{Q}")
    table = {h: metrics(forecast[:, h - 1], targets[:, h - 1], eps) for h in horizons}
    table["all"] = metrics(forecast, targets, eps)
    return table


def _targets(windows):
    return np.stack([np.asarray(w.target) for w in windows])


def evaluate(model: NRIForecaster, windows, normalizer: Normalizer | None = None, horizons=None,
             eps=1.0, how=None) -> dict:
    """Per-horizon MAE/RMSE/MAPE/PCC in original (denormalized) units."""
    forecast = predict(model, windows, how)
    targets = _targets(windows)
    if normalizer is not None:
        forecast, targets = normalizer.invert(forecast), normalizer.invert(targets)
    return horizon_metrics(forecast, targets, horizons, eps)


def evaluate_lag(windows, normalizer: Normalizer | None = None, horizons=None, eps=1.0) -> dict:
    from .decoder import lag_predict
    forecast = np.stack([lag_predict(w) for w in windows])
    targets = _targets(windows)
    if normalizer is not None:
        forecast, targets = normalizer.invert(forecast), normalizer.invert(targets)
    return horizon_metrics(forecast, targets, horizons, eps)


def metric_rows(table: dict) -> list[dict]:
    return [{"horizon": h, **m} for h, m in table.items()]


def config_dict(cfg) -> dict:
    return asdict(cfg)
