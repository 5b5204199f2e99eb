"""Ingestion of taxi trip logs and loop-sensor speeds, plus heuristic adjacency builders."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import AdjacencyMatrix, SeriesDataset, offdiag_mask
from .dtw import pairwise_dtw

logger = logging.getLogger(__name__)

# NYC TLC yellow-cab column names
DEFAULT_TRIP_COLUMNS = {
    "pickup_zone": "PULocationID",
    "dropoff_zone": "DOLocationID",
    "start": "tpep_pickup_datetime",
    "end": "tpep_dropoff_datetime",
    "distance": "trip_distance",
    "cost": "fare_amount",
}

CLEANING_RULES = ("timestamp_error", "distance_below_0.1mi", "duration_below_1min", "nonpositive_cost")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TripRecord:
    pickup_zone: int
    dropoff_zone: int
    start: pd.Timestamp
    end: pd.Timestamp
    distance: float
    cost: float

    @property
    def duration(self) -> float:
        """Minutes."""
        return (self.end - self.start).total_seconds() / 60.0


@dataclass(frozen=True)
class ZoneGeometry:
    zone_ids: tuple
    neighbors: dict


@dataclass(frozen=True)
class SensorMeta:
    """Road-network distances in metres; ``distances[i, j]`` is inf when unknown."""

    sensor_ids: tuple
    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        if d.shape != (len(self.sensor_ids),) * 2:
            raise ValueError("distance matrix does not match sensor list")
        if np.any(d[np.isfinite(d)] < 0):
            raise ValueError("distances must be nonnegative")


def trips_frame(records) -> pd.DataFrame:
    """Canonical trip frame from :class:`TripRecord` objects."""
    return pd.DataFrame([{
        "pickup_zone": r.pickup_zone, "dropoff_zone": r.dropoff_zone,
        "start": pd.Timestamp(r.start), "end": pd.Timestamp(r.end),
        "distance": r.distance, "cost": r.cost} for r in records])


def read_trips(path, columns: dict | None = None):
    """Parse a delimited trip log into the canonical frame.

    Returns ``(trips, n_unparseable)``; rows with unreadable fields are dropped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trip file not found: {path}")
    columns = {**DEFAULT_TRIP_COLUMNS, **(columns or {})}
    raw = pd.read_csv(path, usecols=list(columns.values()), dtype=str)
    df = pd.DataFrame({
        "pickup_zone": pd.to_numeric(raw[columns["pickup_zone"]], errors="coerce"),
        "dropoff_zone": pd.to_numeric(raw[columns["dropoff_zone"]], errors="coerce"),
        "start": pd.to_datetime(raw[columns["start"]], errors="coerce"),
        "end": pd.to_datetime(raw[columns["end"]], errors="coerce"),
        "distance": pd.to_numeric(raw[columns["distance"]], errors="coerce"),
        "cost": pd.to_numeric(raw[columns["cost"]], errors="coerce"),
    })
    bad = df.isna().any(axis=1)
    if bad.any():
        logger.warning("%d unparseable trip rows skipped", int(bad.sum()))
    df = df[~bad].copy()
    df["pickup_zone"] = df["pickup_zone"].astype(np.int64)
    df["dropoff_zone"] = df["dropoff_zone"].astype(np.int64)
    return df.reset_index(drop=True), int(bad.sum())


def clean_trips(trips: pd.DataFrame, year: int | None = None):
    """Drop erroneous trips. Returns ``(kept, report)``.

    A trip is charged to the first rule it violates, in the order of
    ``CLEANING_RULES``: timestamps (end not after start, or outside ``year``),
    distance < 0.1 mi, duration < 1 min, cost <= 0.
    """
    duration = (trips["end"] - trips["start"]).dt.total_seconds() / 60.0
    ts_bad = ~(trips["end"] > trips["start"])
    if year is not None:
        lo, hi = pd.Timestamp(year=year, month=1, day=1), pd.Timestamp(year=year + 1, month=1, day=1)
        ts_bad |= (trips["start"] < lo) | (trips["start"] >= hi) | (trips["end"] < lo) | (trips["end"] >= hi)
    checks = [ts_bad, trips["distance"] < 0.1, duration < 1.0, trips["cost"] <= 0]
    removed = pd.Series(False, index=trips.index)
    report = {}
    for rule, bad in zip(CLEANING_RULES, checks):
        hit = bad & ~removed
        report[rule] = int(hit.sum())
        removed |= bad
    report["kept"] = int((~removed).sum())
    report["removed"] = int(removed.sum())
    return trips[~removed].reset_index(drop=True), report


def _hour_range(trips, year):
    if year is not None:
        return pd.date_range(f"{year}-01-01", f"{year + 1}-01-01", freq="h", inclusive="left")
    lo = min(trips["start"].min(), trips["end"].min()).floor("h")
    hi = max(trips["start"].max(), trips["end"].max()).floor("h")
    return pd.date_range(lo, hi, freq="h")


def aggregate_zone_hour(trips: pd.DataFrame, zones, year: int | None = None,
                        with_globals: bool = True) -> SeriesDataset:
    """Hourly pickups (channel 0) and dropoffs (channel 1) per zone, zero-filled."""
    zones = list(zones)
    hours = _hour_range(trips, year)
    T, N = len(hours), len(zones)
    zone_pos = {z: k for k, z in enumerate(zones)}
    values = np.zeros((T, N, 2))
    for ch, (zcol, tcol) in enumerate([("pickup_zone", "start"), ("dropoff_zone", "end")]):
        z = trips[zcol].map(zone_pos)
        h = hours.get_indexer(trips[tcol].dt.floor("h"))
        ok = z.notna().to_numpy() & (h >= 0)
        unknown = int(z.isna().sum())
        if unknown:
            logger.warning("%d trips with unknown %s excluded", unknown, zcol)
        np.add.at(values[:, :, ch], (h[ok], z[ok].astype(int).to_numpy()), 1.0)
    globals_ = build_global_track(hours) if with_globals else np.zeros((T, 0))
    return SeriesDataset(values, globals_, hours.to_numpy(), tuple(zones), name="taxi")


def read_speed_table(path, zero_is_missing: bool = True, with_globals: bool = True) -> SeriesDataset:
    """Speed matrix: first column timestamps, one column per sensor id."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"speed table not found: {path}")
    df = pd.read_csv(path, index_col=0, parse_dates=True)
    if zero_is_missing:
        df = df.replace(0.0, np.nan)
    df = df.ffill().bfill()
    if df.isna().any().any():
        raise DataError("sensor columns with no observations at all")
    ids = tuple(str(c) for c in df.columns)
    values = df.to_numpy(dtype=float)[:, :, None]
    globals_ = build_global_track(df.index) if with_globals else np.zeros((len(df), 0))
    return SeriesDataset(values, globals_, df.index.to_numpy(), ids, name="speeds")


def read_distance_table(path, sensor_ids) -> SensorMeta:
    """Directed distances from a ``from,to,cost`` table (metres)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"distance table not found: {path}")
    df = pd.read_csv(path, dtype={0: str, 1: str})
    src, dst, cost = df.columns[:3]
    ids = [str(s) for s in sensor_ids]
    pos = {s: k for k, s in enumerate(ids)}
    d = np.full((len(ids), len(ids)), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b, c in zip(df[src].astype(str), df[dst].astype(str), df[cost].astype(float)):
        if a in pos and b in pos and a != b:
            d[pos[a], pos[b]] = c
    return SensorMeta(tuple(ids), d)


def read_neighbors(path, zone_ids=None) -> ZoneGeometry:
    """Neighbour list with two columns (zone, neighbour)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"neighbour file not found: {path}")
    df = pd.read_csv(path)
    a, b = df.columns[:2]
    neighbors: dict = {}
    for z, n in zip(df[a], df[b]):
        neighbors.setdefault(z, set()).add(n)
    if zone_ids is None:
        zone_ids = sorted(set(df[a]) | set(df[b]))
    return ZoneGeometry(tuple(zone_ids), neighbors)


def build_local_adjacency(geometry: ZoneGeometry) -> AdjacencyMatrix:
    """1 for every pair of zones sharing a border, in both directions."""
    ids = list(geometry.zone_ids)
    pos = {z: k for k, z in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    for z, ns in geometry.neighbors.items():
        for n in ns:
            if z == n:
                continue
            if z not in geometry.neighbors.get(n, ()):
                raise DataError(f"asymmetric neighbour relation: {z} -> {n} has no reverse entry")
            if z in pos and n in pos:
                A[pos[z], pos[n]] = 1.0
    return AdjacencyMatrix(A, tuple(ids))


def daily_profile(series, period: int = 24) -> np.ndarray:
    """Mean per position within the period: [N, T] -> [N, period]."""
    series = np.asarray(series, dtype=float)
    n, T = series.shape
    return np.stack([series[:, k::period].mean(axis=1) for k in range(min(period, T))], axis=1)


def build_dtw_adjacency(series, quantile: float = 0.1, profile: str | None = "daily",
                        period: int = 24, node_ids=()) -> AdjacencyMatrix:
    """Connect node pairs whose DTW distance lies in the closest ``quantile`` of all pairs.

    ``series`` is [N, T] (training split only) or [T, N, c]; multi-channel
    inputs are summed into one activity series per node.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim == 3:
        s = s.sum(axis=2).T
    if s.shape[0] < 2:
        raise ValueError("DTW adjacency needs at least two nodes")
    if profile == "daily":
        s = daily_profile(s, period)
    elif profile not in (None, "full"):
        raise ValueError(f"unknown DTW profile {profile!r}")
    d = pairwise_dtw(s)
    mask = offdiag_mask(d.shape[0])
    threshold = np.quantile(d[mask], quantile)
    A = ((d <= threshold) & mask).astype(float)
    return AdjacencyMatrix(A, tuple(node_ids))


def distance_threshold_for_degree(meta: SensorMeta, target_degree: float = 8.0) -> float:
    """Smallest threshold (km) giving at least ``target_degree`` mean out-degree."""
    d = meta.distances[offdiag_mask(len(meta.sensor_ids))]
    d = np.sort(d[np.isfinite(d)])
    if d.size == 0:
        return 0.0
    k = int(round(target_degree * len(meta.sensor_ids)))
    return float(d[min(max(k, 1), d.size) - 1]) / 1000.0


def build_distance_adjacency(meta: SensorMeta, threshold_km: float | None = None,
                             target_degree: float = 8.0) -> AdjacencyMatrix:
    """A[i, j] = 1 iff the road distance from i to j is within ``threshold_km``."""
    if threshold_km is None:
        threshold_km = distance_threshold_for_degree(meta, target_degree)
    d = meta.distances
    mask = offdiag_mask(len(meta.sensor_ids))
    missing = int((~np.isfinite(d) & mask).sum())
    if missing:
        logger.warning("%d sensor pairs without a distance treated as unconnected", missing)
    with np.errstate(invalid="ignore"):
        A = ((d / 1000.0 <= threshold_km) & np.isfinite(d) & mask).astype(float)
    return AdjacencyMatrix(A, meta.sensor_ids)


def build_global_track(timestamps, extras=None) -> np.ndarray:
    """Calendar encoding [T, 4 + k]: sin/cos of hour-of-day and of day-of-week, then ``extras``.

    ``extras`` is an array [T, k] or a frame indexed by timestamp.
    """
    ts = pd.DatetimeIndex(timestamps)
    if len(ts) > 2:
        steps = np.diff(ts.asi8)
        if np.any(steps != steps[0]) or steps[0] <= 0:
            raise DataError("timestamps must be evenly spaced with no gaps")
    hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
    day = ts.dayofweek + hour / 24.0
    cols = [np.sin(2 * np.pi * hour / 24), np.cos(2 * np.pi * hour / 24),
            np.sin(2 * np.pi * day / 7), np.cos(2 * np.pi * day / 7)]
    track = np.stack([np.asarray(c, dtype=float) for c in cols], axis=1)
    if extras is None:
        return track
    if isinstance(extras, (pd.DataFrame, pd.Series)):
        extras = pd.DataFrame(extras).reindex(ts)
        if extras.isna().any().any():
            raise DataError("side file does not cover every timestamp")
    extras = np.asarray(extras, dtype=float).reshape(len(ts), -1)
    return np.concatenate([track, extras], axis=1)


def read_global_extras(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"global side file not found: {path}")
    return pd.read_csv(path, index_col=0, parse_dates=True)
