import json
import os
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
import torch

from nri_transport.core import AdjacencyMatrix
from nri_transport.io import (ConfigMismatch, load_checkpoint, load_dataset, read_edge_list,
                              read_header, read_table, read_table_header, save_checkpoint,
                              save_dataset, write_edge_list, write_table)

from conftest import make_dataset


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(T=30, N=3, c=2, c_u=4)
    save_dataset(ds, tmp_path / "d.safetensors")
    back = load_dataset(tmp_path / "d.safetensors")
    assert np.array_equal(back.values, ds.values) and np.array_equal(back.globals, ds.globals)
    assert back.node_ids == ds.node_ids
    assert np.array_equal(back.timestamps, ds.timestamps)
    header = read_header(tmp_path / "d.safetensors")
    assert json.loads(header["shapes"]) == {"values": [30, 3, 2], "globals": [30, 4]}


def test_dataset_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="absent"):
        load_dataset(tmp_path / "absent.safetensors")


def test_edge_list_round_trip(tmp_path):
    A = AdjacencyMatrix(np.array([[0, 1, 0.5], [0, 0, 0], [1, 0, 0]]), ("x", "y", "z"))
    write_edge_list(A, tmp_path / "e.csv", {"config_hash": "abc", "seed": 3})
    back = read_edge_list(tmp_path / "e.csv")
    assert np.array_equal(back.entries, A.entries) and back.node_ids == A.node_ids
    meta = read_table_header(tmp_path / "e.csv")
    assert meta["config_hash"] == "abc" and meta["seed"] == "3"


def test_table_header(tmp_path):
    df = pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]})
    write_table(df, tmp_path / "t.csv", {"k": "v"})
    assert (tmp_path / "t.csv").read_text().startswith("# k=v\n")
    pd.testing.assert_frame_equal(read_table(tmp_path / "t.csv"), df)


def _opt_state():
    w = torch.nn.Linear(3, 2)
    opt = torch.optim.Adam(w.parameters(), lr=1e-3)
    w(torch.randn(4, 3)).sum().backward()
    opt.step()
    return w.state_dict(), opt.state_dict()


def test_checkpoint_round_trip(tmp_path):
    model_state, opt_state = _opt_state()
    save_checkpoint(tmp_path / "c.safetensors", model_state, {"config_hash": "h1", "epoch": 4},
                    opt_state, {"norm_mean": np.array([1.5])})
    ms, meta, opt, extra = load_checkpoint(tmp_path / "c.safetensors", expected_hash="h1")
    for k in model_state:
        assert torch.equal(ms[k], model_state[k])
    assert meta["epoch"] == 4
    assert extra["norm_mean"].item() == 1.5
    fresh = torch.optim.Adam(torch.nn.Linear(3, 2).parameters(), lr=1e-3)
    fresh.load_state_dict(opt)
    for pid, st in opt_state["state"].items():
        for k, v in st.items():
            assert torch.equal(torch.as_tensor(fresh.state_dict()["state"][pid][k]), torch.as_tensor(v))


def test_checkpoint_hash_guard(tmp_path):
    model_state, _ = _opt_state()
    save_checkpoint(tmp_path / "c.safetensors", model_state, {"config_hash": "h1"})
    with pytest.raises(ConfigMismatch):
        load_checkpoint(tmp_path / "c.safetensors", expected_hash="other")
    _, meta, opt, _ = load_checkpoint(tmp_path / "c.safetensors", expected_hash="other", force=True)
    assert meta["config_hash"] == "h1" and opt is None


def test_containers_are_byte_stable(tmp_path):
    # metadata order must not depend on the process hash seed
    code = ("import sys; sys.path.insert(0, 'tests'); from conftest import make_dataset; "
            "from nri_transport.io import save_dataset; save_dataset(make_dataset(), sys.argv[1])")
    blobs = []
    for k in range(3):
        target = tmp_path / f"d{k}.safetensors"
        env = {**os.environ, "PYTHONHASHSEED": str(k)}
        subprocess.run([sys.executable, "-c", code, str(target)], check=True, env=env)
        blobs.append(target.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]
    assert load_dataset(tmp_path / "d0.safetensors").n_nodes == make_dataset().n_nodes
