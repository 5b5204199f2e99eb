"""Command-line entry point: preprocess, train, evaluate, analyze."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import yaml

from . import analysis, io, pipeline, plotting
from .config import ConfigError, ExperimentConfig, load_config
from .core import (AdjacencyMatrix, InsufficientHistoryError, Normalizer, build_windows,
                   fit_normalizer, split_dataset)
from .latent import PriorSpec, build_structured_prior, build_uniform_prior
from .synthetic import SyntheticSpec, generate
from .training import (NRIForecaster, TrainingDivergence, TrainLog, TrainState, edge_probabilities,
                       evaluate, evaluate_lag, metric_rows, train)

logger = logging.getLogger("nri_transport")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
ADJ_NAMES = ("empty", "full", "local", "dtw", "true")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ----------------------------------------------------------------------------- helpers

def data_dir(cfg: ExperimentConfig) -> Path:
    return cfg.output_path() / "data"


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed}


def _require(cfg, key):
    path = cfg.dataset.paths.get(key)
    if not path:
        raise ConfigError(f"dataset.paths.{key} is required for kind={cfg.dataset.kind}")
    if not Path(path).exists():
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _train_span(cfg, ds):
    windows = build_windows(ds, cfg.dataset.P, cfg.dataset.Q, cfg.dataset.stride)
    train_w, _, _ = split_dataset(windows, cfg.dataset.splits)
    return ds.values[train_w[0].origin_index:train_w[-1].origin_index + cfg.dataset.P + cfg.dataset.Q]


def prepared_windows(cfg: ExperimentConfig, ds, normalizer: Normalizer | None = None):
    """(normalizer, train, val, test) with windows cut from the normalized series."""
    if normalizer is None:
        normalizer = fit_normalizer(_train_span(cfg, ds))
    normed = ds.with_values(normalizer.apply(ds.values))
    windows = build_windows(normed, cfg.dataset.P, cfg.dataset.Q, cfg.dataset.stride)
    return (normalizer,) + split_dataset(windows, cfg.dataset.splits)


def resolve_adjacency(cfg: ExperimentConfig, name: str, n_nodes: int) -> AdjacencyMatrix:
    if name == "empty":
        return AdjacencyMatrix.empty(n_nodes)
    if name == "full":
        return AdjacencyMatrix.full(n_nodes)
    path = data_dir(cfg) / f"{name}.csv" if name in ADJ_NAMES else Path(name)
    if not path.exists():
        raise FileNotFoundError(f"adjacency {name!r} not found at {path}; run preprocess first")
    adj = io.read_edge_list(path)
    if adj.n_nodes != n_nodes:
        raise pipeline.DataError(f"adjacency {path} has {adj.n_nodes} nodes, dataset has {n_nodes}")
    return adj


def resolve_prior(cfg: ExperimentConfig, n_nodes: int) -> PriorSpec:
    m = cfg.model
    if m.prior == "uniform":
        return build_uniform_prior(m.n_edge_types, m.p_no_edge)
    if m.n_edge_types != 2:
        raise ConfigError("structured priors are defined for two edge types")
    adj = resolve_adjacency(cfg, m.prior, n_nodes)
    tag = {"local": "local", "dtw": "dtw"}.get(m.prior, "custom")
    prior = build_structured_prior(adj, m.prior_confidence, tag)
    # relative to prior.json, which sits in the output directory
    prior.adjacency_ref = f"data/{m.prior}.csv" if m.prior in ADJ_NAMES else str(Path(m.prior).resolve())
    return prior


def build_model(cfg: ExperimentConfig, ds) -> NRIForecaster:
    torch.manual_seed(cfg.seed)
    adj = resolve_adjacency(cfg, cfg.model.adjacency, ds.n_nodes) if cfg.model.mode == "fixed" else None
    return NRIForecaster(cfg.dataset.P, cfg.dataset.Q, ds.n_features, ds.n_globals, cfg.model, adj)


def normalizer_tensors(norm: Normalizer) -> dict:
    return {"normalizer.mean": torch.as_tensor(norm.per_feature_mean, dtype=torch.float64),
            "normalizer.scale": torch.as_tensor(norm.per_feature_scale, dtype=torch.float64)}


def normalizer_from(extra: dict, kind="standardize") -> Normalizer:
    return Normalizer(kind, extra["normalizer.mean"].numpy(), extra["normalizer.scale"].numpy())


def load_trained(cfg: ExperimentConfig, checkpoint, force=False):
    state, meta, _, extra = io.load_checkpoint(checkpoint, cfg.config_hash(), force)
    ds = io.load_dataset(data_dir(cfg) / "dataset.safetensors")
    model = build_model(cfg, ds)
    model.load_state_dict(state)
    model.eval()
    return model, ds, normalizer_from(extra), meta


def _print_table(rows):
    df = pd.DataFrame(rows)
    print(df.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


# ----------------------------------------------------------------------------- commands

def cmd_preprocess(cfg: ExperimentConfig) -> dict:
    """Build the dataset container and heuristic adjacency files; returns the cleaning report."""
    out = data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.dataset
    report: dict = {}
    extra_adj: dict = {}
    if d.kind == "synthetic":
        spec = SyntheticSpec(**{"seed": cfg.seed, **d.synthetic})
        ds, true_adj = generate(spec)
        extra_adj["true"] = true_adj
    elif d.kind == "taxi":
        trips, unparseable = pipeline.read_trips(_require(cfg, "trips"), d.trip_columns)
        clean, report = pipeline.clean_trips(trips, d.year)
        report = {"unparseable": unparseable, **report}
        geometry = None
        if d.paths.get("neighbors"):
            geometry = pipeline.read_neighbors(_require(cfg, "neighbors"), d.zones)
        zones = d.zones or (list(geometry.zone_ids) if geometry else
                            sorted(set(clean["pickup_zone"]) | set(clean["dropoff_zone"])))
        ds = pipeline.aggregate_zone_hour(clean, zones, d.year, with_globals=False)
        ds = _with_calendar(cfg, ds)
        if geometry is not None:
            extra_adj["local"] = pipeline.build_local_adjacency(
                pipeline.ZoneGeometry(tuple(zones), geometry.neighbors))
    else:
        ds = pipeline.read_speed_table(_require(cfg, "speeds"), with_globals=False)
        ds = _with_calendar(cfg, ds)
        if d.paths.get("distances"):
            meta = pipeline.read_distance_table(_require(cfg, "distances"), ds.node_ids)
            extra_adj["local"] = pipeline.build_distance_adjacency(
                meta, d.distance_threshold_km, d.target_degree)

    span = _train_span(cfg, ds)
    period = 24 if d.kind != "speeds" else 288
    dtw = pipeline.build_dtw_adjacency(span, d.dtw_quantile, d.dtw_profile, period, ds.node_ids)
    adjs = {"empty": AdjacencyMatrix.empty(ds.n_nodes, ds.node_ids),
            "full": AdjacencyMatrix.full(ds.n_nodes, ds.node_ids), "dtw": dtw, **extra_adj}
    io.save_dataset(ds, out / "dataset.safetensors")
    for name, adj in adjs.items():
        adj = AdjacencyMatrix(adj.entries, tuple(ds.node_ids))
        io.write_edge_list(adj, out / f"{name}.csv", provenance(cfg))
    if report:
        io.write_table(pd.DataFrame([report]), out / "cleaning_report.csv", provenance(cfg))
        print("cleaning report:")
        for rule, count in report.items():
            print(f"  {rule}: {count}")
    print(f"dataset {ds.name}: T={ds.n_steps} N={ds.n_nodes} c={ds.n_features} "
          f"c_u={ds.n_globals}; adjacency files: {', '.join(sorted(adjs))}")
    return report


def _with_calendar(cfg, ds):
    extras = None
    if cfg.dataset.paths.get("globals_extra"):
        extras = pipeline.read_global_extras(_require(cfg, "globals_extra"))
    g = pipeline.build_global_track(ds.timestamps, extras)
    return type(ds)(ds.values, g, ds.timestamps, ds.node_ids, ds.name)


def cmd_train(cfg: ExperimentConfig, resume: str | None = None, force=False) -> dict:
    out = cfg.output_path()
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    print(yaml.safe_dump(cfg.to_dict(), sort_keys=False).rstrip())
    cfg.dump(out / "config.resolved.yaml", provenance(cfg))
    ds = io.load_dataset(data_dir(cfg) / "dataset.safetensors")
    norm, train_w, val_w, _ = prepared_windows(cfg, ds)
    model = build_model(cfg, ds)
    prior = resolve_prior(cfg, ds.n_nodes) if cfg.model.mode == "nri" else None
    if prior is not None:
        prior.to_file(out / "prior.json", provenance(cfg))
    meta = {**provenance(cfg), "dataset": ds.name, "mode": cfg.model.mode}
    extra = normalizer_tensors(norm)

    resume_state = None
    log = TrainLog()
    if resume:
        state, rmeta, opt_state, _ = io.load_checkpoint(resume, cfg.config_hash(), force)
        best, *_ = io.load_checkpoint(ckpt_dir / "best.safetensors", cfg.config_hash(), force)
        resume_state = TrainState(rmeta["epoch"], state, opt_state, best, rmeta["best_val_mae"],
                                  rmeta["best_epoch"], rmeta["bad_epochs"])
        if (out / "train_log.csv").exists():
            log.rows = io.read_table(out / "train_log.csv").to_dict("records")

    def checkpoint(state: TrainState):
        common = {**meta, "best_val_mae": state.best_val, "best_epoch": state.best_epoch,
                  "bad_epochs": state.bad_epochs}
        io.save_checkpoint(ckpt_dir / "last.safetensors", state.model_state,
                           {**common, "epoch": state.epoch}, state.optimizer_state, extra)
        if state.best_epoch == state.epoch:
            io.save_checkpoint(ckpt_dir / "best.safetensors", state.best_state,
                               {**common, "epoch": state.epoch, "val_mae": state.best_val},
                               None, extra)
        io.write_table(log.frame(), out / "train_log.csv", provenance(cfg))

    result = train(model, train_w, val_w, cfg.train, prior, norm, resume=resume_state, log=log,
                   on_epoch=checkpoint)
    io.write_table(log.frame(), out / "train_log.csv", provenance(cfg))
    summary = {"best_val_mae": result.best_val_mae, "best_epoch": result.best_epoch,
               "checkpoint": str(ckpt_dir / "best.safetensors"), **provenance(cfg)}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"best validation MAE {result.best_val_mae:.6g} at epoch {result.best_epoch}")
    return summary


def _parse_horizons(text, Q):
    if not text:
        return list(range(1, Q + 1))
    try:
        hs = [int(h) for h in str(text).split(",") if h.strip()]
    except ValueError as exc:
        raise UsageError(f"horizons must be comma-separated integers, got {text!r}") from exc
    bad = [h for h in hs if not 1 <= h <= Q]
    if bad:
        raise UsageError(f"horizons {bad} outside 1..Q={Q}")
    return hs


def cmd_evaluate(cfg: ExperimentConfig, checkpoint=None, split="test", horizons=None,
                 model_kind="checkpoint", force=False) -> list[dict]:
    hs = _parse_horizons(horizons, cfg.dataset.Q)
    ds = io.load_dataset(data_dir(cfg) / "dataset.safetensors")
    eps = cfg.train.mape_eps
    if model_kind == "lag":
        norm, *splits = prepared_windows(cfg, ds)
        windows = dict(zip(("train", "val", "test"), splits))[split]
        table = evaluate_lag(windows, norm, hs, eps)
        tag = "lag"
    else:
        if checkpoint is None:
            checkpoint = cfg.output_path() / "checkpoints" / "best.safetensors"
        model, ds, norm, _ = load_trained(cfg, checkpoint, force)
        _, *splits = prepared_windows(cfg, ds, norm)
        windows = dict(zip(("train", "val", "test"), splits))[split]
        table = evaluate(model, windows, norm, hs, eps)
        tag = cfg.model.mode
    rows = metric_rows(table)
    path = cfg.output_path() / f"metrics_{tag}_{split}_{cfg.config_hash()}.csv"
    io.write_table(pd.DataFrame(rows), path, {**provenance(cfg), "model": tag, "split": split})
    _print_table(rows)
    return rows


def cmd_analyze(cfg: ExperimentConfig, checkpoint=None, split="all", theta=0.8, k=None,
                focal=None, plots=True, force=False) -> dict:
    if checkpoint is None:
        checkpoint = cfg.output_path() / "checkpoints" / "best.safetensors"
    model, ds, norm, meta = load_trained(cfg, checkpoint, force)
    if not model.has_latent_graph:
        raise UsageError("fixed-adjacency checkpoint: there is no latent graph to analyze")
    _, *splits = prepared_windows(cfg, ds, norm)
    windows = splits[0] + splits[1] + splits[2] if split == "all" else \
        dict(zip(("train", "val", "test"), splits))[split]
    probs = edge_probabilities(model, windows)
    P = cfg.dataset.P
    times = pd.DatetimeIndex([ds.timestamps[w.origin_index + P - 1] for w in windows])
    series = analysis.EdgeProbSeries(probs, times.to_numpy(), ds.node_ids)
    tag = f"{ds.name}_{meta.get('config_hash', cfg.config_hash())}"
    out = cfg.output_path() / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    header = {**provenance(cfg), "theta": theta, "split": split}

    io.save_tensors({"edge_probs": np.ascontiguousarray(probs)}, out / f"{tag}_edge_probs.safetensors",
                    {"timestamps": json.dumps([t.isoformat() for t in times]),
                     "node_ids": json.dumps([str(n) for n in ds.node_ids]), **header})

    raw = ds.values
    activity = np.stack([raw[w.origin_index:w.origin_index + P].sum(-1).mean() for w in windows])
    mean_prob = analysis.mean_edge_probability(series)
    io.write_table(pd.DataFrame({"timestamp": times.astype(str), "mean_edge_prob": mean_prob,
                                 "mean_activity": activity}),
                   out / f"{tag}_mean_edge_prob.csv", header)

    ingoing, outgoing = analysis.node_in_out_profiles(series)
    node_activity = raw.sum(-1).mean(0)
    io.write_table(pd.DataFrame({"node": [str(n) for n in ds.node_ids], "ingoing": ingoing,
                                 "outgoing": outgoing, "activity": node_activity}),
                   out / f"{tag}_in_out.csv", header)

    focal_idx = list(map(str, ds.node_ids)).index(str(focal)) if focal is not None else None
    rows = []
    for w, t, p in zip(windows, times, probs):
        for e in analysis.threshold_edges(p, theta, focal_idx, [str(n) for n in ds.node_ids]):
            row = {"timestamp": str(t), "sender": e[0], "receiver": e[1], "prob": e[2]}
            if focal_idx is not None:
                row["direction"] = e[3]
            rows.append(row)
    cols = ["timestamp", "sender", "receiver", "prob"] + (["direction"] if focal_idx is not None else [])
    io.write_table(pd.DataFrame(rows, columns=cols), out / f"{tag}_edges_theta{theta:g}.csv", header)

    k = k or max(2, min(4, ds.n_nodes // 3))
    k = min(k, ds.n_nodes)
    learned_feat = analysis.cluster_features("learned_edges", series)
    observed_feat = analysis.cluster_features(
        "observed_series", values=np.concatenate([raw[w.origin_index:w.origin_index + P] for w in windows]))
    labels_l, inertia_l = analysis.cluster_nodes(learned_feat, k, cfg.seed)
    labels_o, inertia_o = analysis.cluster_nodes(observed_feat, k, cfg.seed)
    io.write_table(pd.DataFrame({"node": [str(n) for n in ds.node_ids], "learned_edges": labels_l,
                                 "observed_series": labels_o}),
                   out / f"{tag}_clusters_k{k}.csv",
                   {**header, "inertia_learned_edges": f"{inertia_l:.10g}",
                    "inertia_observed_series": f"{inertia_o:.10g}"})

    if plots:
        note = f"config_hash={header['config_hash']} seed={header['seed']}"
        plotting.plot_mean_edge_probability(times.to_numpy(), mean_prob, activity,
                                            out / f"{tag}_mean_edge_prob.png", note)
        plotting.plot_in_out(ds.node_ids, ingoing, outgoing, node_activity, out / f"{tag}_in_out.png", note)
        plotting.plot_adjacency(probs.mean(0), ds.node_ids, out / f"{tag}_mean_adjacency.png", note)
        plotting.plot_clusters(ds.node_ids, {"learned edges": labels_l, "observed series": labels_o},
                               out / f"{tag}_clusters.png", note)
    print(f"analyzed {len(windows)} windows; mean edge probability {mean_prob.mean():.4f}; "
          f"{len(rows)} edges above {theta}; outputs in {out}")
    return {"mean_edge_prob": float(mean_prob.mean()), "n_edges": len(rows), "dir": str(out),
            "tag": tag}


# ----------------------------------------------------------------------------- entry point

def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nri-transport", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set train.epochs=5")
        return p

    common(sub.add_parser("preprocess", help="build dataset container and adjacency files"))
    p = common(sub.add_parser("train", help="pretrain + train, write checkpoints and log"))
    p.add_argument("--resume", help="continue from a last.safetensors checkpoint")
    p.add_argument("--force", action="store_true", help="resume despite a config-hash mismatch")
    p = common(sub.add_parser("evaluate", help="per-horizon metrics in original units"))
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--horizons", help="comma-separated 1-based steps, default all")
    p.add_argument("--model", dest="model_kind", default="checkpoint", choices=("checkpoint", "lag"))
    p.add_argument("--force", action="store_true", help="ignore a config-hash mismatch")
    p = common(sub.add_parser("analyze", help="edge-probability analytics and plots"))
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    p.add_argument("--theta", type=float, default=0.8)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--focal", default=None, help="node id whose in/out edges are tagged")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--force", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "preprocess":
            cmd_preprocess(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.resume, args.force)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint, args.split, args.horizons, args.model_kind, args.force)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.checkpoint, args.split, args.theta, args.clusters, args.focal,
                        not args.no_plots, args.force)
    except (FileNotFoundError, pipeline.DataError, InsufficientHistoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, io.ConfigMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
