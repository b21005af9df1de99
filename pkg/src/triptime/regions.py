"""Coarse region partition and per-(origin region -> destination region)
speed references with a sparsity fallback chain.

The partition is a uniform m x n grid over the bounding box. A pair-level
reference value is only trusted when the slot it came from had at least
``min_support`` trips; anything thinner falls back to the global reference,
whose own chain ends at the global mean speed, so lookups are total whenever
at least one training trip exists.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import GeoBoundingBox, GeoPoint, TimeSlotConfig, TripTable, project_arrays
from .errors import SeriesTooShortError
from .index import as_trip_table
from .speedref import SpeedReference, fit_reference, build_absolute_series


@dataclass(frozen=True)
class RegionPartition:
    """Uniform coarse grid of cols x rows regions over the bounding box."""

    bbox: GeoBoundingBox
    cols: int = 8
    rows: int = 8

    def __post_init__(self) -> None:
        if self.cols < 1 or self.rows < 1:
            raise ValueError("region grid must have at least one cell per side")

    @property
    def k(self) -> int:
        return self.cols * self.rows

    def region_ids(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        """Region id per point; points on the max edge join the last region."""
        x, y = project_arrays(lat, lon, self.bbox)
        cw = self.bbox.width_m() / self.cols
        rh = self.bbox.height_m() / self.rows
        c = np.clip(np.floor(x / cw).astype(np.int64), 0, self.cols - 1)
        r = np.clip(np.floor(y / rh).astype(np.int64), 0, self.rows - 1)
        return r * self.cols + c

    def region_of(self, p: GeoPoint) -> int:
        return int(self.region_ids(np.array([p.lat]), np.array([p.lon]))[0])

    def pair_ids(self, olat, olon, dlat, dlon) -> np.ndarray:
        return self.region_ids(olat, olon) * self.k + self.region_ids(dlat, dlon)


@dataclass
class RegionPairReference:
    """Per-region-pair speed references plus the global fallback."""

    partition: RegionPartition
    config: TimeSlotConfig
    mode: str
    min_support: int
    pair_refs: dict[int, SpeedReference] = field(default_factory=dict)
    global_ref: SpeedReference = None  # type: ignore[assignment]

    def trip_pair_ids(self, table: TripTable) -> np.ndarray:
        return self.partition.pair_ids(table.olat, table.olon, table.dlat, table.dlon)

    def values_at(self, pair_ids: np.ndarray, starts: np.ndarray) -> np.ndarray:
        """V_{i->j}(s) per row, falling back to the global chain where the
        pair has no trusted value for the slot."""
        starts = np.asarray(starts, dtype=np.float64)
        out = np.full(len(starts), np.nan)
        for pid in np.unique(pair_ids):
            rows = pair_ids == pid
            ref = self.pair_refs.get(int(pid))
            if ref is not None:
                out[rows] = ref.values_at(starts[rows], strict=True)
        gap = np.isnan(out)
        if gap.any():
            out[gap] = self.global_ref.values_at(starts[gap])
        return out

    def value_for(self, o: GeoPoint, d: GeoPoint, s: float) -> float:
        pid = self.partition.region_of(o) * self.partition.k + self.partition.region_of(d)
        return float(self.values_at(np.array([pid]), np.array([s]))[0])


def lookup_pair(ref: RegionPairReference, o: GeoPoint, d: GeoPoint, s: float) -> float:
    """Pair-level V(s) with the full fallback chain."""
    return ref.value_for(o, d, s)


def build_region_references(trips, partition: RegionPartition, cfg: TimeSlotConfig,
                            mode: str = "relative", min_support: int = 10,
                            arima_order: tuple[int, int, int] = (2, 1, 0),
                            max_missing_fraction: float = 0.1) -> RegionPairReference:
    """Fit one reference per populated region pair, exactly as the global
    reference is fitted but restricted to that pair's trips.

    Absolute mode keeps a pair's own forecaster only when its slot series is
    nearly complete (< ``max_missing_fraction`` missing after support
    masking); sparser pairs fall back to a pair-relative profile rather than
    trusting a gappy series.
    """
    table = as_trip_table(trips)
    global_ref = fit_reference(table, cfg, mode, arima_order=arima_order)
    result = RegionPairReference(partition=partition, config=cfg, mode=mode,
                                 min_support=min_support, global_ref=global_ref)
    pids = partition.pair_ids(table.olat, table.olon, table.dlat, table.dlon)
    for pid in np.unique(pids):
        sub = table.select(pids == pid)
        ref = _fit_pair(sub, cfg, mode, min_support, arima_order, max_missing_fraction)
        if ref is not None:
            result.pair_refs[int(pid)] = ref
    return result


def _fit_pair(sub: TripTable, cfg: TimeSlotConfig, mode: str, min_support: int,
              arima_order: tuple[int, int, int],
              max_missing_fraction: float) -> SpeedReference | None:
    if len(sub) < min_support:
        return None
    pair_mode = mode
    if mode == "absolute":
        try:
            series = build_absolute_series(sub, cfg, min_support=min_support)
            missing = float(np.mean(np.isnan(series.values)))
            if missing >= max_missing_fraction or len(series) <= cfg.period_slots:
                pair_mode = "relative"
        except SeriesTooShortError:
            pair_mode = "relative"
    try:
        ref = fit_reference(sub, cfg, pair_mode, slot_min_support=min_support,
                            arima_order=arima_order)
    except SeriesTooShortError:
        pair_mode = "relative"
        ref = fit_reference(sub, cfg, pair_mode, slot_min_support=min_support)
    if not np.isfinite(ref.relative.values).any():
        return None
    return ref


def export_pair_references_csv(ref: RegionPairReference, path) -> None:
    """Rows of (origin region, destination region, slot, value, count)."""
    k = ref.partition.k
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin_region", "dest_region", "slot", "value", "count"])
        for pid in sorted(ref.pair_refs):
            r = ref.pair_refs[pid]
            rel = r.relative
            for slot, (v, c) in enumerate(zip(rel.values, rel.counts)):
                if math.isnan(v):
                    continue
                writer.writerow([pid // k, pid % k, slot, repr(float(v)), int(c)])
