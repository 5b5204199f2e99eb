"""File formats: dataset container, checkpoints, edge lists and annotated tables."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from safetensors.numpy import load_file as np_load_file
from safetensors.numpy import save_file as np_save_file
from safetensors.torch import load_file, save_file

from .core import AdjacencyMatrix, SeriesDataset

FORMAT_VERSION = "1"


class ConfigMismatch(RuntimeError):
    pass


def _canonicalize_header(path) -> None:
    """Rewrite the JSON header with sorted keys so equal content gives equal bytes."""
    with open(path, "r+b") as fh:
        n = int.from_bytes(fh.read(8), "little")
        raw = fh.read(n)
        doc = json.loads(raw)
        if "__metadata__" in doc:
            doc["__metadata__"] = dict(sorted(doc["__metadata__"].items()))
        text = json.dumps(dict(sorted(doc.items())), separators=(",", ":")).encode()
        if len(text) > n:
            raise RuntimeError(f"unexpected header layout in {path}")
        fh.seek(8)
        fh.write(text.ljust(n, b" "))


def save_dataset(ds: SeriesDataset, path) -> None:
    """Named tensors ``values``/``globals`` plus a JSON header with ids and timestamps."""
    ts = pd.DatetimeIndex(ds.timestamps)
    meta = {
        "format": "series-dataset", "version": FORMAT_VERSION, "name": ds.name,
        "shapes": json.dumps({"values": list(ds.values.shape), "globals": list(ds.globals.shape)}),
        "node_ids": json.dumps([str(n) for n in ds.node_ids]),
        "timestamps": json.dumps([t.isoformat() for t in ts]),
    }
    np_save_file({"values": np.ascontiguousarray(ds.values, dtype=np.float64),
                  "globals": np.ascontiguousarray(ds.globals, dtype=np.float64)},
                 str(path), metadata=meta)
    _canonicalize_header(path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n))
    return header.get("__metadata__", {})


def load_dataset(path) -> SeriesDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset container not found: {path}")
    meta = read_header(path)
    if meta.get("format") != "series-dataset":
        raise ValueError(f"{path} is not a series dataset container")
    t = np_load_file(str(path))
    timestamps = pd.DatetimeIndex(json.loads(meta["timestamps"])).to_numpy()
    return SeriesDataset(t["values"], t["globals"], timestamps,
                         tuple(json.loads(meta["node_ids"])), meta.get("name", "dataset"))


def write_edge_list(adj: AdjacencyMatrix, path, header: dict | None = None) -> None:
    """Delimited ``source,target,weight`` rows for the nonzero entries."""
    ids = adj.node_ids or tuple(range(adj.n_nodes))
    i, j = np.nonzero(adj.entries)
    df = pd.DataFrame({"source": [ids[k] for k in i], "target": [ids[k] for k in j],
                       "weight": adj.entries[i, j]})
    meta = {"n_nodes": adj.n_nodes, "nodes": " ".join(str(n) for n in ids), **(header or {})}
    write_table(df, path, meta)


def read_edge_list(path) -> AdjacencyMatrix:
    meta = read_table_header(path)
    df = pd.read_csv(path, comment="#", dtype={"source": str, "target": str})
    ids = meta["nodes"].split(" ") if meta.get("nodes") else []
    n = int(meta.get("n_nodes", len(ids)))
    pos = {s: k for k, s in enumerate(ids)} if ids else None
    A = np.zeros((n, n))
    for s, t, w in zip(df["source"], df["target"], df["weight"]):
        a, b = (pos[s], pos[t]) if pos else (int(s), int(t))
        A[a, b] = w
    return AdjacencyMatrix(A, tuple(ids))


def write_table(df: pd.DataFrame, path, header: dict | None = None) -> None:
    """CSV preceded by ``# key=value`` comment lines."""
    lines = [f"# {k}={v}\n" for k, v in (header or {}).items()]
    with open(path, "w", newline="") as fh:
        fh.writelines(lines)
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")


def read_table_header(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
    return meta


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def _flatten_optimizer(opt_state: dict):
    tensors, groups = {}, opt_state["param_groups"]
    scalars = {}
    for pid, st in opt_state["state"].items():
        for k, v in st.items():
            if torch.is_tensor(v):
                tensors[f"optim.{pid}.{k}"] = v.detach().clone().contiguous()
            else:
                scalars[f"{pid}.{k}"] = v
    return tensors, {"param_groups": groups, "scalars": scalars}


def _unflatten_optimizer(tensors: dict, meta: dict) -> dict:
    state: dict = {}
    for name, v in tensors.items():
        _, pid, k = name.split(".", 2)
        state.setdefault(int(pid), {})[k] = v
    for key, v in meta.get("scalars", {}).items():
        pid, k = key.split(".", 1)
        state.setdefault(int(pid), {})[k] = v
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path, model_state: dict, metadata: dict, optimizer_state: dict | None = None,
                    extra_tensors: dict | None = None) -> None:
    """Single safetensors file: ``model.*``, ``optim.*`` and ``extra.*`` tensors, JSON metadata."""
    tensors = {f"model.{k}": v.detach().contiguous() for k, v in model_state.items()}
    meta = {"format": "nri-checkpoint", "version": FORMAT_VERSION}
    if optimizer_state is not None:
        opt_tensors, opt_meta = _flatten_optimizer(optimizer_state)
        tensors.update(opt_tensors)
        meta["optimizer"] = json.dumps(opt_meta)
    for k, v in (extra_tensors or {}).items():
        tensors[f"extra.{k}"] = torch.as_tensor(v).contiguous()
    meta.update({k: v if isinstance(v, str) else json.dumps(v) for k, v in metadata.items()})
    save_file(tensors, str(path), metadata=meta)
    _canonicalize_header(path)


def save_tensors(tensors: dict, path, metadata: dict) -> None:
    """Plain numpy tensor container with string metadata."""
    np_save_file(tensors, str(path), metadata={k: str(v) for k, v in metadata.items()})
    _canonicalize_header(path)


def load_checkpoint(path, expected_hash: str | None = None, force: bool = False):
    """Returns ``(model_state, metadata, optimizer_state or None, extra_tensors)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = read_header(path)
    if raw.get("format") != "nri-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    meta = {}
    for k, v in raw.items():
        try:
            meta[k] = json.loads(v)
        except (json.JSONDecodeError, TypeError):
            meta[k] = v
    if expected_hash is not None and meta.get("config_hash") != expected_hash and not force:
        raise ConfigMismatch(
            f"checkpoint config hash {meta.get('config_hash')} does not match {expected_hash}")
    tensors = load_file(str(path))
    model_state = {k[6:]: v for k, v in tensors.items() if k.startswith("model.")}
    extra = {k[6:]: v for k, v in tensors.items() if k.startswith("extra.")}
    opt = None
    if "optimizer" in meta:
        opt = _unflatten_optimizer({k: v for k, v in tensors.items() if k.startswith("optim.")},
                                   meta.pop("optimizer"))
    return model_state, meta, opt, extra
