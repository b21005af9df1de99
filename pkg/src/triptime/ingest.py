"""Trip dataset ingestion.

Handles the endpoint-only trip CSVs (NYC-style columns mapped through a
schema), extraction of trips from raw per-vehicle GPS streams via the
occupancy bit, and dataset summary statistics. Bad rows are never silently
dropped: every rejection is counted per reason in the ingest report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from .core import GeoBoundingBox, TripTable, l1_miles_between
from .errors import EmptyDatasetError, MalformedHeaderError, UnorderedInputError
from .index import as_trip_table

REJECT_REASONS = ("unparseable", "non_positive_duration",
                  "non_positive_distance", "out_of_bounds")


@dataclass(frozen=True)
class TripRecordSchema:
    """Column-name mapping for a trip CSV.

    Duration comes from ``trip_seconds`` when present, otherwise from the
    difference of the two datetime columns; one of the two must be given.
    """

    pickup_lat: str = "pickup_lat"
    pickup_lon: str = "pickup_lon"
    dropoff_lat: str = "dropoff_lat"
    dropoff_lon: str = "dropoff_lon"
    pickup_datetime: str = "pickup_datetime"
    dropoff_datetime: str | None = None
    trip_seconds: str | None = "trip_seconds"
    trip_distance: str = "trip_distance"
    fare: str | None = "fare"
    id: str | None = "id"

    def __post_init__(self) -> None:
        if self.dropoff_datetime is None and self.trip_seconds is None:
            raise ValueError("schema needs dropoff_datetime or trip_seconds")

    def required_columns(self) -> list[str]:
        cols = [self.pickup_lat, self.pickup_lon, self.dropoff_lat,
                self.dropoff_lon, self.pickup_datetime, self.trip_distance]
        cols.append(self.trip_seconds if self.trip_seconds else self.dropoff_datetime)
        return cols


@dataclass
class RejectReport:
    counts: dict[str, int] = field(default_factory=lambda: {r: 0 for r in REJECT_REASONS})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> str:
        return json.dumps({"total": self.total, "by_reason": self.counts}, indent=2)


def parse_datetime(text: str) -> float:
    """ISO-8601 (or 'YYYY-MM-DD HH:MM:SS') to epoch seconds; naive stamps
    are taken at face value and the slot config's timezone offset applies
    downstream."""
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _epoch_series(raw: pd.Series) -> pd.Series:
    dt = pd.to_datetime(raw, errors="coerce", utc=True)
    out = dt.values.view("i8") / 1e9
    out[dt.isna().to_numpy()] = np.nan
    return pd.Series(out, index=raw.index)


def load_trips(path, schema: TripRecordSchema,
               bbox: GeoBoundingBox) -> tuple[TripTable, RejectReport]:
    """Parse a trip CSV; survivors become a TripTable, everything else is
    counted in the report under its first failing reason."""
    df = pd.read_csv(path, dtype=str)
    missing = [c for c in schema.required_columns() if c not in df.columns]
    if missing:
        raise MalformedHeaderError(f"missing columns in {path}: {missing}")

    olat = pd.to_numeric(df[schema.pickup_lat], errors="coerce")
    olon = pd.to_numeric(df[schema.pickup_lon], errors="coerce")
    dlat = pd.to_numeric(df[schema.dropoff_lat], errors="coerce")
    dlon = pd.to_numeric(df[schema.dropoff_lon], errors="coerce")
    start = _epoch_series(df[schema.pickup_datetime])
    distance = pd.to_numeric(df[schema.trip_distance], errors="coerce")
    if schema.trip_seconds and schema.trip_seconds in df.columns:
        duration = pd.to_numeric(df[schema.trip_seconds], errors="coerce")
    else:
        duration = _epoch_series(df[schema.dropoff_datetime]) - start
    if schema.fare and schema.fare in df.columns:
        fare = pd.to_numeric(df[schema.fare], errors="coerce").to_numpy()
    else:
        fare = np.full(len(df), np.nan)
    if schema.id and schema.id in df.columns:
        ids = pd.to_numeric(df[schema.id], errors="coerce")
        id_parse_ok = ids.notna()
        ids = ids.fillna(-1).astype(np.int64).to_numpy()
    else:
        ids = np.arange(len(df), dtype=np.int64)
        id_parse_ok = pd.Series(True, index=df.index)

    parsed = (olat.notna() & olon.notna() & dlat.notna() & dlon.notna()
              & start.notna() & distance.notna() & duration.notna()
              & id_parse_ok).to_numpy()
    lat_ok = np.abs(np.nan_to_num(olat.to_numpy())) <= 90
    lat_ok &= np.abs(np.nan_to_num(dlat.to_numpy())) <= 90
    lon_ok = np.abs(np.nan_to_num(olon.to_numpy())) <= 180
    lon_ok &= np.abs(np.nan_to_num(dlon.to_numpy())) <= 180
    parsed &= lat_ok & lon_ok

    dur_ok = np.nan_to_num(duration.to_numpy()) > 0
    dist_ok = np.nan_to_num(distance.to_numpy()) > 0
    in_bbox = (bbox.contains_arrays(np.nan_to_num(olat.to_numpy()), np.nan_to_num(olon.to_numpy()))
               & bbox.contains_arrays(np.nan_to_num(dlat.to_numpy()), np.nan_to_num(dlon.to_numpy())))

    report = RejectReport()
    reject_unparseable = ~parsed
    reject_duration = parsed & ~dur_ok
    reject_distance = parsed & dur_ok & ~dist_ok
    reject_bbox = parsed & dur_ok & dist_ok & ~in_bbox
    report.counts["unparseable"] = int(reject_unparseable.sum())
    report.counts["non_positive_duration"] = int(reject_duration.sum())
    report.counts["non_positive_distance"] = int(reject_distance.sum())
    report.counts["out_of_bounds"] = int(reject_bbox.sum())

    keep = parsed & dur_ok & dist_ok & in_bbox
    table = TripTable(
        id=ids[keep],
        olat=olat.to_numpy()[keep], olon=olon.to_numpy()[keep],
        dlat=dlat.to_numpy()[keep], dlon=dlon.to_numpy()[keep],
        start=start.to_numpy()[keep], distance=distance.to_numpy()[keep],
        duration=duration.to_numpy()[keep], fare=fare[keep],
    )
    return table, report


def write_trips_csv(trips, path) -> None:
    """Emit the canonical trip CSV read back by the default schema."""
    table = as_trip_table(trips)
    stamp = pd.to_datetime(table.start, unit="s", utc=True)
    df = pd.DataFrame({
        "id": table.id,
        "pickup_datetime": stamp.strftime("%Y-%m-%dT%H:%M:%S"),
        "pickup_lat": table.olat, "pickup_lon": table.olon,
        "dropoff_lat": table.dlat, "dropoff_lon": table.dlon,
        "trip_seconds": table.duration,
        "trip_distance": table.distance,
        "fare": table.fare,
    })
    df.to_csv(path, index=False)


@dataclass(frozen=True)
class GpsRecord:
    vehicle_id: str
    speed: float
    lon: float
    lat: float
    occupancy: int
    timestamp: float


def extract_trips_from_gps(records) -> TripTable:
    """One trip per maximal run of occupancy=1 records of a vehicle.

    Origin/destination are the run's first/last points, duration the
    timestamp span, and distance the sum of consecutive L1 hops in miles.
    Runs of a single record (zero duration) are discarded. Records of
    different vehicles may interleave, but each vehicle's records must be
    time-ordered; the output is sorted by (vehicle, start time) so it does
    not depend on the interleaving.
    """
    last_ts: dict[str, float] = {}
    runs: dict[str, list[GpsRecord]] = {}
    finished: list[tuple[str, list[GpsRecord]]] = []

    def close(vid: str) -> None:
        run = runs.pop(vid, None)
        if run and len(run) > 1 and run[-1].timestamp > run[0].timestamp:
            finished.append((vid, run))

    for rec in records:
        prev = last_ts.get(rec.vehicle_id)
        if prev is not None and rec.timestamp < prev:
            raise UnorderedInputError(
                f"vehicle {rec.vehicle_id}: timestamp {rec.timestamp} after {prev}")
        last_ts[rec.vehicle_id] = rec.timestamp
        if rec.occupancy == 1:
            runs.setdefault(rec.vehicle_id, []).append(rec)
        else:
            close(rec.vehicle_id)
    for vid in list(runs):
        close(vid)

    finished.sort(key=lambda vr: (vr[0], vr[1][0].timestamp))
    n = len(finished)
    olat = np.empty(n); olon = np.empty(n)
    dlat = np.empty(n); dlon = np.empty(n)
    start = np.empty(n); duration = np.empty(n)
    distance = np.empty(n)
    for i, (_, run) in enumerate(finished):
        olat[i], olon[i] = run[0].lat, run[0].lon
        dlat[i], dlon[i] = run[-1].lat, run[-1].lon
        start[i] = run[0].timestamp
        duration[i] = run[-1].timestamp - run[0].timestamp
        lats = np.array([r.lat for r in run])
        lons = np.array([r.lon for r in run])
        hops = l1_miles_between(lats[:-1], lons[:-1], lats[1:], lons[1:])
        distance[i] = max(float(hops.sum()), 1e-6)
    return TripTable(id=np.arange(n, dtype=np.int64), olat=olat, olon=olon,
                     dlat=dlat, dlon=dlon, start=start, distance=distance,
                     duration=duration, fare=np.full(n, np.nan))


def read_gps_csv(path):
    """Yield GpsRecords from a CSV with columns vehicle_id, speed,
    longitude, latitude, occupancy, timestamp."""
    df = pd.read_csv(path)
    ts = df["timestamp"]
    if ts.dtype == object:
        ts = _epoch_series(ts)
    for vid, speed, lon, lat, occ, stamp in zip(
            df["vehicle_id"], df["speed"], df["longitude"], df["latitude"],
            df["occupancy"], ts):
        yield GpsRecord(vehicle_id=str(vid), speed=float(speed), lon=float(lon),
                        lat=float(lat), occupancy=int(occ), timestamp=float(stamp))


QUANTILE_PERCENTS = tuple(range(0, 101, 5))


def empirical_quantile(values: np.ndarray, percent: float) -> float:
    """Value at or below which ``percent`` of the sorted sample lies:
    sorted[ceil(p/100 * n) - 1], with the 0th percentile at the minimum."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    k = max(int(math.ceil(percent / 100.0 * n)) - 1, 0)
    return float(v[min(k, n - 1)])


@dataclass
class DatasetStats:
    count: int
    mean_duration: float
    median_duration: float
    mean_distance: float
    median_distance: float
    per_day: dict[str, int]
    duration_quantiles: dict[int, float]
    distance_quantiles: dict[int, float]

    def to_json(self) -> str:
        return json.dumps({
            "count": self.count,
            "mean_duration": self.mean_duration,
            "median_duration": self.median_duration,
            "mean_distance": self.mean_distance,
            "median_distance": self.median_distance,
            "per_day": self.per_day,
            "duration_quantiles": self.duration_quantiles,
            "distance_quantiles": self.distance_quantiles,
        }, indent=2)

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["percent", "duration_seconds", "distance_miles"])
            for p in QUANTILE_PERCENTS:
                writer.writerow([p, self.duration_quantiles[p], self.distance_quantiles[p]])


def dataset_stats(trips) -> DatasetStats:
    table = as_trip_table(trips)
    if len(table) == 0:
        raise EmptyDatasetError("dataset is empty")
    days = pd.to_datetime(table.start, unit="s", utc=True).strftime("%Y-%m-%d")
    per_day = pd.Series(days).value_counts().sort_index()
    return DatasetStats(
        count=len(table),
        mean_duration=float(table.duration.mean()),
        median_duration=float(np.median(table.duration)),
        mean_distance=float(table.distance.mean()),
        median_distance=float(np.median(table.distance)),
        per_day={str(k): int(v) for k, v in per_day.items()},
        duration_quantiles={p: empirical_quantile(table.duration, p)
                            for p in QUANTILE_PERCENTS},
        distance_quantiles={p: empirical_quantile(table.distance, p)
                            for p in QUANTILE_PERCENTS},
    )
