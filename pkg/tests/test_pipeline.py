from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nri_transport.core import AdjacencyMatrix
from nri_transport.pipeline import (CLEANING_RULES, DataError, SensorMeta, TripRecord, ZoneGeometry,
                                    aggregate_zone_hour, build_distance_adjacency,
                                    build_dtw_adjacency, build_global_track, build_local_adjacency,
                                    clean_trips, daily_profile, read_distance_table,
                                    read_neighbors, read_speed_table, read_trips, trips_frame)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixture_trips():
    trips, bad = read_trips(FIXTURES / "taxi_trips.csv")
    assert bad == 0
    return trips


def test_fixture_has_six_survivors(fixture_trips):
    kept, report = clean_trips(fixture_trips, year=2019)
    assert len(kept) == 6
    assert {r: report[r] for r in CLEANING_RULES} == dict.fromkeys(CLEANING_RULES, 1)
    assert report["removed"] == 4 and report["kept"] == 6


def test_single_rule_examples():
    t0 = pd.Timestamp("2019-05-01 10:00")
    short = TripRecord(1, 2, t0, t0 + pd.Timedelta(minutes=10), 0.05, 5.0)
    quick = TripRecord(1, 2, t0, t0 + pd.Timedelta(seconds=30), 1.0, 5.0)
    fine = TripRecord(1, 2, t0, t0 + pd.Timedelta(minutes=10), 1.0, 5.0)
    kept, report = clean_trips(trips_frame([short, quick, fine]))
    assert len(kept) == 1 and report["distance_below_0.1mi"] == 1 and report["duration_below_1min"] == 1
    assert quick.duration == pytest.approx(0.5)


def test_out_of_year_is_timestamp_error(fixture_trips):
    kept, report = clean_trips(fixture_trips, year=2020)
    assert len(kept) == 0 and report["timestamp_error"] == 10


def test_cleaning_idempotent(fixture_trips):
    once, _ = clean_trips(fixture_trips, year=2019)
    twice, report = clean_trips(once, year=2019)
    pd.testing.assert_frame_equal(once, twice)
    assert report["removed"] == 0


def test_unparseable_rows_counted(tmp_path):
    text = (FIXTURES / "taxi_trips.csv").read_text().splitlines()
    text.append("1,not-a-date,2019-01-01 05:00:00,1,1.0,4,13,5.0")
    text.append("1,2019-01-01 05:00:00,2019-01-01 05:10:00,1,abc,4,13,5.0")
    p = tmp_path / "trips.csv"
    p.write_text("\n".join(text) + "\n")
    trips, bad = read_trips(p)
    assert bad == 2 and len(trips) == 10


def test_missing_trip_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_trips(tmp_path / "nope.csv")


def test_aggregation_counts(fixture_trips):
    kept, _ = clean_trips(fixture_trips, year=2019)
    ds = aggregate_zone_hour(kept, [4, 13, 24], year=2019)
    assert ds.values.shape == (8760, 3, 2)
    assert ds.values[:, :, 0].sum() == len(kept) and ds.values[:, :, 1].sum() == len(kept)
    # zone 4 pickups: 00:05 (h0), 01:10 (h1)
    assert ds.values[0, 0, 0] == 1 and ds.values[1, 0, 0] == 1
    assert ds.values[1, 0, 1] == 2   # dropoffs in zone 4 at 01:05 and 01:30
    assert ds.values[100:].sum() == 0
    assert ds.globals.shape == (8760, 4)


def test_aggregation_unknown_zone_excluded(fixture_trips):
    kept, _ = clean_trips(fixture_trips, year=2019)
    ds = aggregate_zone_hour(kept, [4, 13], year=2019)
    known = kept["pickup_zone"].isin([4, 13]).sum()
    assert ds.values[:, :, 0].sum() == known


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60))
def test_aggregation_conserves_trips(seed, n):
    rng = np.random.default_rng(seed)
    start = pd.Timestamp("2019-03-01") + pd.to_timedelta(rng.integers(0, 72 * 60, n), unit="min")
    trips = pd.DataFrame({
        "pickup_zone": rng.integers(1, 6, n), "dropoff_zone": rng.integers(1, 6, n),
        "start": start, "end": start + pd.to_timedelta(rng.integers(1, 90, n), unit="min"),
        "distance": rng.uniform(0.1, 5, n), "cost": rng.uniform(1, 30, n)})
    ds = aggregate_zone_hour(trips, [1, 2, 3, 4, 5])
    assert ds.values[:, :, 0].sum() == n and ds.values[:, :, 1].sum() == n
    for z in range(5):
        assert ds.values[:, z, 0].sum() == (trips["pickup_zone"] == z + 1).sum()


def test_local_adjacency():
    geo = read_neighbors(FIXTURES / "zone_neighbors.csv")
    A = build_local_adjacency(geo)
    assert A.node_ids == (4, 13, 24)
    assert A.n_edges == 4 and np.array_equal(A.entries, A.entries.T)
    iso = build_local_adjacency(ZoneGeometry((1, 2, 3), {1: {2}, 2: {1}}))
    assert iso.entries[2].sum() == 0 and iso.entries[:, 2].sum() == 0
    with pytest.raises(DataError):
        build_local_adjacency(ZoneGeometry((1, 2), {1: {2}}))


def test_dtw_adjacency_clique_and_outlier():
    rng = np.random.default_rng(0)
    base = rng.normal(size=48)
    series = np.stack([base] * 10 + [base + 10 + rng.normal(size=48)])
    A = build_dtw_adjacency(series, profile=None)
    assert A.entries[:10, :10].sum() == 90
    assert A.entries[10].sum() == 0 and A.entries[:, 10].sum() == 0


def test_dtw_adjacency_two_nodes_and_errors():
    A = build_dtw_adjacency(np.array([[0.0, 1.0], [2.0, 0.0]]), profile=None)
    assert A.n_edges == 2
    with pytest.raises(ValueError):
        build_dtw_adjacency(np.zeros((1, 5)))


def test_dtw_adjacency_density():
    series = np.random.default_rng(1).normal(size=(30, 96))
    A = build_dtw_adjacency(series)
    assert abs(A.density() - 0.1) <= 0.02
    assert np.array_equal(A.entries, A.entries.T)


def test_dtw_adjacency_multichannel():
    vals = np.random.default_rng(2).poisson(3, size=(72, 5, 2)).astype(float)
    a = build_dtw_adjacency(vals)
    b = build_dtw_adjacency(vals.sum(axis=2).T)
    assert np.array_equal(a.entries, b.entries)


def test_daily_profile():
    s = np.tile(np.arange(24.0), 3)[None]
    np.testing.assert_array_equal(daily_profile(s), np.arange(24.0)[None])


def test_distance_adjacency():
    d = np.array([[0, 500, 2000], [800, 0, np.inf], [1500, 300, 0]], dtype=float)
    meta = SensorMeta(("a", "b", "c"), d)
    assert build_distance_adjacency(meta, 0.0).n_edges == 0
    full = build_distance_adjacency(meta, np.inf)
    assert full.n_edges == 5   # the unknown pair stays unconnected
    one_km = build_distance_adjacency(meta, 1.0)
    assert one_km.entries.tolist() == [[0, 1, 0], [1, 0, 0], [0, 1, 0]]
    deg = build_distance_adjacency(meta, target_degree=1.0)
    assert deg.n_edges >= 3


def test_read_distance_and_speed_tables(tmp_path):
    (tmp_path / "dist.csv").write_text("from,to,cost\n100,200,1200\n200,100,900\n100,300,5000\n")
    meta = read_distance_table(tmp_path / "dist.csv", ["100", "200", "300"])
    assert meta.distances[0, 1] == 1200 and np.isinf(meta.distances[2, 0])
    idx = pd.date_range("2017-01-02", periods=6, freq="5min")
    pd.DataFrame({"100": [60, 0, 62, 63, 61, 60], "200": [50, 51, 0, 0, 55, 54]}, index=idx).to_csv(
        tmp_path / "speeds.csv")
    ds = read_speed_table(tmp_path / "speeds.csv")
    assert ds.values.shape == (6, 2, 1)
    assert ds.values[1, 0, 0] == 60 and ds.values[3, 1, 0] == 51
    assert ds.node_ids == ("100", "200")


def test_global_track():
    ts = pd.date_range("2019-01-07 00:00", periods=48, freq="h")   # a Monday
    g = build_global_track(ts)
    assert g.shape == (48, 4)
    assert g[0, 0] == pytest.approx(0.0) and g[0, 1] == pytest.approx(1.0)
    np.testing.assert_allclose(g[:24, :2], g[24:, :2], atol=1e-12)
    extra = pd.DataFrame({"temp": np.arange(48.0)}, index=ts)
    assert build_global_track(ts, extra).shape == (48, 5)
    with pytest.raises(DataError):
        build_global_track(ts.delete(5))
