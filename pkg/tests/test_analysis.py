import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from nri_transport.analysis import (EdgeProbSeries, cluster_features, cluster_nodes, mean_edge_probability,
                                    metrics, node_in_out_profiles, threshold_edges)


def brute_metrics(preds, targets, eps=1.0):
    """Scalar-loop reference implementation."""
    p = [float(v) for v in np.ravel(preds)]
    t = [float(v) for v in np.ravel(targets)]
    n = len(p)
    abs_sum = sq_sum = 0.0
    ape, n_ape = 0.0, 0
    for a, b in zip(p, t):
        abs_sum += abs(a - b)
        sq_sum += (a - b) ** 2
        if abs(b) > eps:
            ape += abs((a - b) / b)
            n_ape += 1
    mp, mt = sum(p) / n, sum(t) / n
    cov = sum((a - mp) * (b - mt) for a, b in zip(p, t))
    vp = sum((a - mp) ** 2 for a in p)
    vt = sum((b - mt) ** 2 for b in t)
    pcc = cov / math.sqrt(vp * vt) if vp > 0 and vt > 0 else float("nan")
    return {"MAE": abs_sum / n, "RMSE": math.sqrt(sq_sum / n),
            "MAPE": 100 * ape / n_ape if n_ape else float("nan"), "PCC": pcc}


def test_metric_hand_values():
    m = metrics(np.array([2.0, 4.0]), np.array([1.0, 2.0]), eps=0.5)
    assert m["MAE"] == pytest.approx(1.5)
    assert m["RMSE"] == pytest.approx(math.sqrt(2.5)) and m["RMSE"] == pytest.approx(1.581, abs=1e-3)
    assert m["MAPE"] == pytest.approx(100.0)
    assert m["PCC"] == pytest.approx(1.0)


def test_perfect_prediction():
    t = np.array([3.0, 5.0, 9.0])
    assert metrics(t, t) == {"MAE": 0.0, "RMSE": 0.0, "MAPE": 0.0, "PCC": pytest.approx(1.0)}


def test_undefined_entries_are_nan():
    m = metrics(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    assert math.isnan(m["MAPE"]) and math.isnan(m["PCC"])


def test_matches_brute_force_on_random_tensors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        t = rng.normal(0, 3, shape)
        p = t + rng.normal(0, rng.uniform(0.01, 3), shape)
        got, ref = metrics(p, t), brute_metrics(p, t)
        for k in ref:
            if math.isnan(ref[k]):
                assert math.isnan(got[k])
            else:
                assert abs(got[k] - ref[k]) <= 1e-9 * max(1.0, abs(ref[k]))
        assert got["RMSE"] >= got["MAE"]
        assert math.isnan(got["PCC"]) or -1 <= got["PCC"] <= 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.floats(0.1, 100))
def test_unit_scaling(seed, s):
    rng = np.random.default_rng(seed)
    t = rng.normal(5, 2, 40)
    p = t + rng.normal(0, 1, 40)
    a, b = metrics(p, t, eps=0.0), metrics(s * p, s * t, eps=0.0)
    assert b["MAE"] == pytest.approx(s * a["MAE"], rel=1e-9)
    assert b["RMSE"] == pytest.approx(s * a["RMSE"], rel=1e-9)
    assert b["MAPE"] == pytest.approx(a["MAPE"], rel=1e-9)
    assert b["PCC"] == pytest.approx(a["PCC"], rel=1e-9)


def test_mean_edge_probability():
    assert np.allclose(mean_edge_probability(EdgeProbSeries(np.full((3, 4, 4), 0.5))), 0.5)
    half = np.zeros((1, 4, 4))
    half[0][np.triu_indices(4, 1)] = 1.0
    assert mean_edge_probability(EdgeProbSeries(half))[0] == pytest.approx(0.5)


def test_series_validation():
    with pytest.raises(ValueError):
        EdgeProbSeries(np.full((2, 3, 3), 1.5))
    with pytest.raises(ValueError):
        EdgeProbSeries(np.zeros((3, 3)))
    assert np.all(np.diagonal(EdgeProbSeries(np.ones((2, 3, 3))).probs, axis1=1, axis2=2) == 0)


def test_in_out_single_edge():
    p = np.zeros((5, 4, 4))
    p[:, 1, 3] = 1.0
    ingoing, outgoing = node_in_out_profiles(EdgeProbSeries(p))
    assert ingoing.tolist() == pytest.approx([0, 0, 0, 1 / 3])
    assert outgoing.tolist() == pytest.approx([0, 1 / 3, 0, 0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
def test_in_out_means_agree(seed, n):
    rng = np.random.default_rng(seed)
    s = EdgeProbSeries(rng.random((3, n, n)))
    ingoing, outgoing = node_in_out_profiles(s)
    assert ingoing.mean() == pytest.approx(outgoing.mean(), abs=1e-12)
    sym = rng.random((2, n, n))
    ingoing, outgoing = node_in_out_profiles(EdgeProbSeries((sym + sym.transpose(0, 2, 1)) / 2))
    np.testing.assert_allclose(ingoing, outgoing, atol=1e-12)


def test_threshold_edges():
    p = np.full((4, 4), 0.5)
    assert threshold_edges(p) == []
    p[2, 0] = 0.95
    assert threshold_edges(p) == [(2, 0, 0.95)]
    assert len(threshold_edges(p, theta=0.0)) == 12
    assert threshold_edges(p, focal=0) == [(2, 0, 0.95, "in")]
    assert threshold_edges(p, focal=2, node_ids=list("abcd")) == [("c", "a", 0.95, "out")]
    assert threshold_edges(p, focal=1) == []


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_threshold_nesting(seed, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    p = np.random.default_rng(seed).random((5, 5))
    assert set(threshold_edges(p, hi)) <= set(threshold_edges(p, lo))


def test_clustering_contracts():
    rng = np.random.default_rng(0)
    feats = np.concatenate([np.zeros((4, 3)), np.ones((3, 3)) * 5])
    labels, _ = cluster_nodes(feats, 2)
    assert adjusted_rand_score(labels, [0] * 4 + [1] * 3) == 1.0
    labels, _ = cluster_nodes(rng.random((6, 2)), 1)
    assert set(labels) == {0}
    labels, inertia = cluster_nodes(rng.random((6, 2)), 6)
    assert len(set(labels)) == 6 and inertia == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        cluster_nodes(rng.random((3, 2)), 4)
    feats = rng.random((8, 2))
    a, b = cluster_nodes(feats, 3, seed=5), cluster_nodes(feats, 3, seed=5)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_cluster_features_modes():
    s = EdgeProbSeries(np.random.default_rng(1).random((7, 4, 4)))
    assert cluster_features("learned_edges", s).shape == (4, 14)
    assert cluster_features("observed_series", values=np.zeros((10, 4, 2))).shape == (4, 20)
    with pytest.raises(ValueError):
        cluster_features("learned_edges")
    with pytest.raises(ValueError):
        cluster_features("other", s)
