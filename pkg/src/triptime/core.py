"""Domain types shared by every module: points, projection, grid cells,
trips, queries and time slots.

All types are immutable value objects; the columnar :class:`TripTable` /
:class:`QueryTable` companions hold the same data as numpy arrays for the
batch-oriented code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import OutOfBoundsError

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0
METERS_PER_MILE = 1_609.344

# Epoch seconds of Monday 1970-01-05 00:00, the anchor for relative slots.
WEEK_ANCHOR_EPOCH = 4 * 86_400
SECONDS_PER_WEEK = 7 * 86_400


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 coordinate in degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GeoBoundingBox:
    """Axis-aligned lat/lon box; the southwest corner anchors the projection."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ValueError("bounding box must have positive extent")

    @property
    def lat_mid(self) -> float:
        return 0.5 * (self.lat_min + self.lat_max)

    def contains(self, p: GeoPoint) -> bool:
        return (self.lat_min <= p.lat <= self.lat_max
                and self.lon_min <= p.lon <= self.lon_max)

    def contains_arrays(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        return ((lat >= self.lat_min) & (lat <= self.lat_max)
                & (lon >= self.lon_min) & (lon <= self.lon_max))

    def width_m(self) -> float:
        return (self.lon_max - self.lon_min) * math.cos(math.radians(self.lat_mid)) * METERS_PER_DEG

    def height_m(self) -> float:
        return (self.lat_max - self.lat_min) * METERS_PER_DEG

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lat_min, self.lat_max, self.lon_min, self.lon_max)


@dataclass(frozen=True)
class ProjectedPoint:
    """Meters east/north of the bounding box's southwest corner."""

    x: float
    y: float


@dataclass(frozen=True)
class GridCell:
    col: int
    row: int


@dataclass(frozen=True)
class Trip:
    """One historical origin-destination trip.

    ``distance`` is in miles, ``duration`` in seconds, ``start_time`` epoch
    seconds. ``fare`` is optional currency units.
    """

    id: int
    origin: GeoPoint
    destination: GeoPoint
    start_time: float
    distance: float
    duration: float
    fare: float | None = None

    def __post_init__(self) -> None:
        if self.distance <= 0:
            raise ValueError(f"trip {self.id}: distance must be positive")
        if self.duration <= 0:
            raise ValueError(f"trip {self.id}: duration must be positive")
        if self.fare is not None and self.fare < 0:
            raise ValueError(f"trip {self.id}: fare must be non-negative")

    @property
    def speed_mph(self) -> float:
        return self.distance / (self.duration / 3600.0)


@dataclass(frozen=True)
class Query:
    """Origin, destination and departure time whose travel time is wanted."""

    origin: GeoPoint
    destination: GeoPoint
    start_time: float
    id: int = 0


@dataclass(frozen=True)
class TimeSlotConfig:
    """Slot discretization: 3600 s slots over a 168-slot weekly period by default."""

    slot_seconds: int = 3600
    period_slots: int = 168
    timezone_offset: int = 0

    def __post_init__(self) -> None:
        if self.slot_seconds <= 0 or self.period_slots <= 0:
            raise ValueError("slot_seconds and period_slots must be positive")

    @property
    def anchor_slot(self) -> int:
        # Slot index of the first Monday 00:00 after the epoch; relative
        # slot 0 is anchored there so slot 0 means Monday 00:00 local.
        return WEEK_ANCHOR_EPOCH // self.slot_seconds


def project(p: GeoPoint, bbox: GeoBoundingBox) -> ProjectedPoint:
    """Equirectangular projection of ``p`` relative to ``bbox``'s SW corner.

    Raises :class:`OutOfBoundsError` when ``p`` lies outside ``bbox``.
    """
    if not bbox.contains(p):
        raise OutOfBoundsError(f"point ({p.lat}, {p.lon}) outside bounding box {bbox.as_tuple()}")
    x = (p.lon - bbox.lon_min) * math.cos(math.radians(bbox.lat_mid)) * METERS_PER_DEG
    y = (p.lat - bbox.lat_min) * METERS_PER_DEG
    return ProjectedPoint(x, y)


def project_arrays(lat: np.ndarray, lon: np.ndarray,
                   bbox: GeoBoundingBox) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project`; caller is responsible for bounds checks."""
    scale = math.cos(math.radians(bbox.lat_mid)) * METERS_PER_DEG
    x = (np.asarray(lon, dtype=np.float64) - bbox.lon_min) * scale
    y = (np.asarray(lat, dtype=np.float64) - bbox.lat_min) * METERS_PER_DEG
    return x, y


def to_cell(p: ProjectedPoint, cell_size: float) -> GridCell:
    """Floor-divide projected meters into a grid cell; boundaries belong to
    the upper/right cell."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    return GridCell(int(math.floor(p.x / cell_size)), int(math.floor(p.y / cell_size)))


def cells_from_xy(x: np.ndarray, y: np.ndarray, cell_size: float) -> tuple[np.ndarray, np.ndarray]:
    col = np.floor(x / cell_size).astype(np.int64)
    row = np.floor(y / cell_size).astype(np.int64)
    return col, row


def slot_of(t: float, cfg: TimeSlotConfig) -> tuple[int, int]:
    """Return ``(absolute_slot, relative_slot)`` for epoch time ``t``.

    The relative slot folds the timeline into a ``period_slots`` window
    anchored so that slot 0 is Monday 00:00 in the configured timezone.
    """
    absolute = math.floor((t + cfg.timezone_offset) / cfg.slot_seconds)
    relative = (absolute - cfg.anchor_slot) % cfg.period_slots
    return absolute, relative


def slots_of_arrays(t: np.ndarray, cfg: TimeSlotConfig) -> tuple[np.ndarray, np.ndarray]:
    absolute = np.floor((np.asarray(t, dtype=np.float64) + cfg.timezone_offset)
                        / cfg.slot_seconds).astype(np.int64)
    relative = (absolute - cfg.anchor_slot) % cfg.period_slots
    return absolute, relative


def l1_distance_m(a: ProjectedPoint, b: ProjectedPoint) -> float:
    return abs(a.x - b.x) + abs(a.y - b.y)


TRIP_COLUMNS = ("id", "olat", "olon", "dlat", "dlon", "start", "distance", "duration", "fare")


@dataclass
class TripTable:
    """Columnar trip storage: one numpy array per Trip field.

    The canonical in-memory representation for everything batch-sized;
    iterating yields :class:`Trip` objects for the scalar API.
    """

    id: np.ndarray
    olat: np.ndarray
    olon: np.ndarray
    dlat: np.ndarray
    dlon: np.ndarray
    start: np.ndarray
    distance: np.ndarray
    duration: np.ndarray
    fare: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.id)
        if self.fare is None:
            self.fare = np.full(n, np.nan)
        for name in TRIP_COLUMNS:
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")

    def __len__(self) -> int:
        return len(self.id)

    def __getitem__(self, i: int) -> Trip:
        fare = float(self.fare[i])
        return Trip(
            id=int(self.id[i]),
            origin=GeoPoint(float(self.olat[i]), float(self.olon[i])),
            destination=GeoPoint(float(self.dlat[i]), float(self.dlon[i])),
            start_time=float(self.start[i]),
            distance=float(self.distance[i]),
            duration=float(self.duration[i]),
            fare=None if math.isnan(fare) else fare,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def speed_mph(self) -> np.ndarray:
        return self.distance / (self.duration / 3600.0)

    def has_fare(self) -> bool:
        return bool(np.isfinite(self.fare).all()) and len(self) > 0

    def select(self, mask_or_index: np.ndarray) -> "TripTable":
        return TripTable(**{c: getattr(self, c)[mask_or_index] for c in TRIP_COLUMNS})

    @classmethod
    def from_trips(cls, trips) -> "TripTable":
        trips = list(trips)
        return cls(
            id=np.array([t.id for t in trips], dtype=np.int64),
            olat=np.array([t.origin.lat for t in trips]),
            olon=np.array([t.origin.lon for t in trips]),
            dlat=np.array([t.destination.lat for t in trips]),
            dlon=np.array([t.destination.lon for t in trips]),
            start=np.array([t.start_time for t in trips], dtype=np.float64),
            distance=np.array([t.distance for t in trips]),
            duration=np.array([t.duration for t in trips]),
            fare=np.array([np.nan if t.fare is None else t.fare for t in trips]),
        )

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({c: getattr(self, c) for c in TRIP_COLUMNS})

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "TripTable":
        return cls(**{c: df[c].to_numpy() for c in TRIP_COLUMNS})

    def validate(self) -> None:
        """Assert the Trip invariants hold for every row."""
        if np.any(self.duration <= 0):
            raise ValueError("non-positive duration in trip table")
        if np.any(self.distance <= 0):
            raise ValueError("non-positive distance in trip table")
        speed = self.speed_mph
        if not np.all(np.isfinite(speed)) or np.any(speed <= 0):
            raise ValueError("non-finite or non-positive speed in trip table")


@dataclass
class QueryTable:
    """Columnar queries, mirroring :class:`TripTable`."""

    id: np.ndarray
    olat: np.ndarray
    olon: np.ndarray
    dlat: np.ndarray
    dlon: np.ndarray
    start: np.ndarray

    def __len__(self) -> int:
        return len(self.id)

    def __getitem__(self, i: int) -> Query:
        return Query(
            origin=GeoPoint(float(self.olat[i]), float(self.olon[i])),
            destination=GeoPoint(float(self.dlat[i]), float(self.dlon[i])),
            start_time=float(self.start[i]),
            id=int(self.id[i]),
        )

    @classmethod
    def from_queries(cls, queries) -> "QueryTable":
        queries = list(queries)
        return cls(
            id=np.array([q.id for q in queries], dtype=np.int64),
            olat=np.array([q.origin.lat for q in queries]),
            olon=np.array([q.origin.lon for q in queries]),
            dlat=np.array([q.destination.lat for q in queries]),
            dlon=np.array([q.destination.lon for q in queries]),
            start=np.array([q.start_time for q in queries], dtype=np.float64),
        )

    @classmethod
    def from_trip_table(cls, table: TripTable) -> "QueryTable":
        return cls(id=table.id, olat=table.olat, olon=table.olon,
                   dlat=table.dlat, dlon=table.dlon, start=table.start)


def l1_miles_between(olat, olon, dlat, dlon) -> np.ndarray:
    """Equirectangular L1 distance between coordinate pairs, in miles.

    Uses the local mid-latitude per pair, so no bounding box is needed;
    agrees with the projected L1 distance to well under 0.1% at city scale.
    """
    olat = np.asarray(olat, dtype=np.float64)
    mid = np.radians(0.5 * (olat + np.asarray(dlat, dtype=np.float64)))
    dy = np.abs(olat - dlat) * METERS_PER_DEG
    dx = np.abs(np.asarray(olon) - np.asarray(dlon)) * np.cos(mid) * METERS_PER_DEG
    return (dx + dy) / METERS_PER_MILE


def endpoint_l1_miles(table: TripTable | QueryTable) -> np.ndarray:
    """L1 distance between each row's endpoints, in miles."""
    return l1_miles_between(table.olat, table.olon, table.dlat, table.dlon)


def bbox_from_table(table: TripTable, margin_m: float = 100.0) -> GeoBoundingBox:
    """Smallest box covering all endpoints, padded by ``margin_m`` meters."""
    lat_margin = margin_m / METERS_PER_DEG
    lat_min = min(table.olat.min(), table.dlat.min()) - lat_margin
    lat_max = max(table.olat.max(), table.dlat.max()) + lat_margin
    lat_mid = 0.5 * (lat_min + lat_max)
    lon_margin = margin_m / (METERS_PER_DEG * math.cos(math.radians(lat_mid)))
    return GeoBoundingBox(
        lat_min=lat_min,
        lat_max=lat_max,
        lon_min=min(table.olon.min(), table.dlon.min()) - lon_margin,
        lon_max=max(table.olon.max(), table.dlon.max()) + lon_margin,
    )
