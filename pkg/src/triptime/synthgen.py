"""Deterministic synthetic-city trip generator.

Trips are drawn from a hotspot (or uniform) spatial law; the regime speed of
a trip is a per-region sinusoid over the weekly window, optionally scaled
inside a holiday window, and the observed duration is the straight-line
travel time at that speed times multiplicative lognormal noise. The
generator records the exact speed law, per-trip regime speeds, pre-tamper
durations, and the ids of planted anomalies, so every statistical claim can
be checked against ground truth.

Anomaly families:
  extreme_speed - duration is scaled by a large factor, distance untouched
  detour        - distance and duration both inflated; speed stays plausible
                  but the trip distance breaks away from its endpoint distance
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GeoBoundingBox,
    METERS_PER_DEG,
    SECONDS_PER_WEEK,
    TimeSlotConfig,
    TripTable,
    WEEK_ANCHOR_EPOCH,
    l1_miles_between,
    slots_of_arrays,
)
from .errors import InvalidSpecError
from .regions import RegionPartition

OUTLIER_FAMILIES = ("extreme_speed", "detour")

_MIN_TRIP_MILES = 0.05


@dataclass(frozen=True)
class Hotspot:
    lat: float
    lon: float
    sd_m: float
    weight: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    bbox: GeoBoundingBox
    n_trips: int
    duration_weeks: float = 4.0
    hotspots: tuple[Hotspot, ...] | None = None   # None = uniform over bbox
    base_speed_mph: float = 12.0
    amplitude: float = 0.0                        # a in base*(1 + a*sin(...))
    region_shape: tuple[int, int] | None = None   # (cols, rows) coarse grid
    region_multipliers: tuple[float, ...] | None = None
    region_amplitudes: tuple[float, ...] | None = None
    region_phases: tuple[float, ...] | None = None
    holiday: tuple[float, float, float] | None = None  # (start, end, speed mult)
    noise_sd: float = 0.1
    route_factor_sd: float = 0.05
    route_factor_mean: float = 1.05
    outlier_fraction: float = 0.0
    outlier_families: tuple[str, ...] = OUTLIER_FAMILIES
    distinct_endpoints: bool = False   # force origin/destination into different hotspots
    with_fare: bool = True
    start_epoch: float = float(WEEK_ANCHOR_EPOCH)
    slot_config: TimeSlotConfig = field(default_factory=TimeSlotConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.n_trips <= 0:
            raise InvalidSpecError("n_trips must be positive")
        if self.base_speed_mph <= 0:
            raise InvalidSpecError("base_speed_mph must be positive")
        if not abs(self.amplitude) < 1:
            raise InvalidSpecError("amplitude must satisfy |a| < 1")
        if not 0 <= self.outlier_fraction <= 0.3:
            raise InvalidSpecError("outlier_fraction must be in [0, 0.3]")
        if self.duration_weeks <= 0:
            raise InvalidSpecError("duration_weeks must be positive")
        if self.hotspots is not None:
            if not self.hotspots:
                raise InvalidSpecError("hotspot list must be nonempty when given")
            for h in self.hotspots:
                if h.sd_m <= 0 or h.weight <= 0:
                    raise InvalidSpecError("hotspot sd and weight must be positive")
        for fam in self.outlier_families:
            if fam not in OUTLIER_FAMILIES:
                raise InvalidSpecError(f"unknown outlier family {fam!r}")
        k = self.region_count
        for name in ("region_multipliers", "region_amplitudes", "region_phases"):
            vals = getattr(self, name)
            if vals is not None:
                if self.region_shape is None:
                    raise InvalidSpecError(f"{name} requires region_shape")
                if len(vals) != k:
                    raise InvalidSpecError(f"{name} must have {k} entries")
        if self.region_amplitudes is not None and any(
                not abs(a) < 1 for a in self.region_amplitudes):
            raise InvalidSpecError("region amplitudes must satisfy |a| < 1")

    @property
    def region_count(self) -> int:
        if self.region_shape is None:
            return 0
        return self.region_shape[0] * self.region_shape[1]

    def partition(self) -> RegionPartition | None:
        if self.region_shape is None:
            return None
        return RegionPartition(bbox=self.bbox, cols=self.region_shape[0],
                               rows=self.region_shape[1])

    def to_json(self) -> str:
        payload = {
            "bbox": list(self.bbox.as_tuple()),
            "n_trips": self.n_trips,
            "duration_weeks": self.duration_weeks,
            "hotspots": None if self.hotspots is None else [
                [h.lat, h.lon, h.sd_m, h.weight] for h in self.hotspots],
            "base_speed_mph": self.base_speed_mph,
            "amplitude": self.amplitude,
            "region_shape": list(self.region_shape) if self.region_shape else None,
            "region_multipliers": list(self.region_multipliers) if self.region_multipliers else None,
            "region_amplitudes": list(self.region_amplitudes) if self.region_amplitudes else None,
            "region_phases": list(self.region_phases) if self.region_phases else None,
            "holiday": list(self.holiday) if self.holiday else None,
            "noise_sd": self.noise_sd,
            "route_factor_sd": self.route_factor_sd,
            "route_factor_mean": self.route_factor_mean,
            "outlier_fraction": self.outlier_fraction,
            "outlier_families": list(self.outlier_families),
            "distinct_endpoints": self.distinct_endpoints,
            "with_fare": self.with_fare,
            "start_epoch": self.start_epoch,
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        d = json.loads(text)
        spec = cls(
            bbox=GeoBoundingBox(*d["bbox"]),
            n_trips=int(d["n_trips"]),
            duration_weeks=float(d.get("duration_weeks", 4.0)),
            hotspots=None if d.get("hotspots") is None else tuple(
                Hotspot(*h) for h in d["hotspots"]),
            base_speed_mph=float(d.get("base_speed_mph", 12.0)),
            amplitude=float(d.get("amplitude", 0.0)),
            region_shape=tuple(d["region_shape"]) if d.get("region_shape") else None,
            region_multipliers=tuple(d["region_multipliers"]) if d.get("region_multipliers") else None,
            region_amplitudes=tuple(d["region_amplitudes"]) if d.get("region_amplitudes") else None,
            region_phases=tuple(d["region_phases"]) if d.get("region_phases") else None,
            holiday=tuple(d["holiday"]) if d.get("holiday") else None,
            noise_sd=float(d.get("noise_sd", 0.1)),
            route_factor_sd=float(d.get("route_factor_sd", 0.05)),
            route_factor_mean=float(d.get("route_factor_mean", 1.05)),
            outlier_fraction=float(d.get("outlier_fraction", 0.0)),
            outlier_families=tuple(d.get("outlier_families", OUTLIER_FAMILIES)),
            distinct_endpoints=bool(d.get("distinct_endpoints", False)),
            with_fare=bool(d.get("with_fare", True)),
            start_epoch=float(d.get("start_epoch", WEEK_ANCHOR_EPOCH)),
            seed=int(d.get("seed", 0)),
        )
        spec.validate()
        return spec


@dataclass
class GroundTruth:
    spec: SynthSpec
    regime_speed: np.ndarray       # per trip, mph, before noise
    clean_duration: np.ndarray     # per trip, seconds, before tampering
    clean_distance: np.ndarray
    outlier_ids: np.ndarray
    family_ids: dict[str, np.ndarray]

    def true_speed_at(self, starts: np.ndarray, olat: np.ndarray | None = None,
                      olon: np.ndarray | None = None) -> np.ndarray:
        """Regime speed of the generating law at the given start times (and
        origin locations, when the law is region dependent)."""
        return _law_speed(self.spec, np.asarray(starts, dtype=np.float64), olat, olon)

    def to_json(self) -> str:
        payload = {
            "spec": json.loads(self.spec.to_json()),
            "n_outliers": int(len(self.outlier_ids)),
            "outlier_ids": [int(i) for i in self.outlier_ids],
            "family_ids": {k: [int(i) for i in v] for k, v in self.family_ids.items()},
        }
        return json.dumps(payload, indent=2)


def _law_speed(spec: SynthSpec, starts: np.ndarray,
               olat: np.ndarray | None, olon: np.ndarray | None) -> np.ndarray:
    _, rel = slots_of_arrays(starts, spec.slot_config)
    phase_arg = 2.0 * math.pi * rel / spec.slot_config.period_slots
    mult = np.ones(len(starts))
    amp = np.full(len(starts), spec.amplitude)
    phase = np.zeros(len(starts))
    partition = spec.partition()
    if partition is not None and olat is not None:
        rid = partition.region_ids(np.asarray(olat), np.asarray(olon))
        if spec.region_multipliers is not None:
            mult = np.asarray(spec.region_multipliers)[rid]
        if spec.region_amplitudes is not None:
            amp = np.asarray(spec.region_amplitudes)[rid]
        if spec.region_phases is not None:
            phase = np.asarray(spec.region_phases)[rid]
    speed = spec.base_speed_mph * mult * (1.0 + amp * np.sin(phase_arg + phase))
    if spec.holiday is not None:
        h0, h1, factor = spec.holiday
        speed = np.where((starts >= h0) & (starts < h1), speed * factor, speed)
    return speed


def _points_at_hotspots(spec: SynthSpec, rng: np.random.Generator,
                        which: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bb = spec.bbox
    n = len(which)
    eps_lat = 1e-9 + 1e-6 * (bb.lat_max - bb.lat_min)
    eps_lon = 1e-9 + 1e-6 * (bb.lon_max - bb.lon_min)
    centers_lat = np.array([h.lat for h in spec.hotspots])
    centers_lon = np.array([h.lon for h in spec.hotspots])
    sds = np.array([h.sd_m for h in spec.hotspots])
    sd_lat = sds[which] / METERS_PER_DEG
    sd_lon = sds[which] / (METERS_PER_DEG * math.cos(math.radians(bb.lat_mid)))
    lat = centers_lat[which] + rng.standard_normal(n) * sd_lat
    lon = centers_lon[which] + rng.standard_normal(n) * sd_lon
    return (np.clip(lat, bb.lat_min + eps_lat, bb.lat_max - eps_lat),
            np.clip(lon, bb.lon_min + eps_lon, bb.lon_max - eps_lon))


def _sample_endpoints(spec: SynthSpec, rng: np.random.Generator,
                      n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    bb = spec.bbox
    if spec.hotspots is None:
        eps_lat = 1e-9 + 1e-6 * (bb.lat_max - bb.lat_min)
        eps_lon = 1e-9 + 1e-6 * (bb.lon_max - bb.lon_min)
        olat = rng.uniform(bb.lat_min + eps_lat, bb.lat_max - eps_lat, n)
        olon = rng.uniform(bb.lon_min + eps_lon, bb.lon_max - eps_lon, n)
        dlat = rng.uniform(bb.lat_min + eps_lat, bb.lat_max - eps_lat, n)
        dlon = rng.uniform(bb.lon_min + eps_lon, bb.lon_max - eps_lon, n)
        return olat, olon, dlat, dlon
    weights = np.array([h.weight for h in spec.hotspots], dtype=np.float64)
    weights /= weights.sum()
    k = len(spec.hotspots)
    o_which = rng.choice(k, size=n, p=weights)
    if spec.distinct_endpoints and k > 1:
        d_which = (o_which + 1 + rng.integers(0, k - 1, size=n)) % k
    else:
        d_which = rng.choice(k, size=n, p=weights)
    olat, olon = _points_at_hotspots(spec, rng, o_which)
    dlat, dlon = _points_at_hotspots(spec, rng, d_which)
    return olat, olon, dlat, dlon


def generate(spec: SynthSpec) -> tuple[TripTable, GroundTruth]:
    """Pure function of the spec (seed included): same spec, same output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_trips

    olat, olon, dlat, dlon = _sample_endpoints(spec, rng, n)
    start = spec.start_epoch + rng.uniform(0.0, spec.duration_weeks * SECONDS_PER_WEEK, n)

    regime_speed = _law_speed(spec, start, olat, olon)
    l1 = l1_miles_between(olat, olon, dlat, dlon)
    route = spec.route_factor_mean * np.exp(
        rng.normal(0.0, spec.route_factor_sd, n) - 0.5 * spec.route_factor_sd ** 2)
    distance = np.maximum(l1 * route, _MIN_TRIP_MILES)
    # lognormal duration noise centered so per-slot mean SPEED equals the law
    noise = np.exp(rng.normal(0.0, spec.noise_sd, n) + 0.5 * spec.noise_sd ** 2)
    duration = distance / regime_speed * 3600.0 * noise

    if spec.with_fare:
        fare = np.maximum(2.5 + 2.5 * distance + rng.normal(0.0, 0.25, n), 0.0)
    else:
        fare = np.full(n, np.nan)

    clean_duration = duration.copy()
    clean_distance = distance.copy()
    k = int(round(spec.outlier_fraction * n))
    families = [f for f in spec.outlier_families]
    family_ids: dict[str, np.ndarray] = {f: np.empty(0, dtype=np.int64) for f in families}
    planted = np.empty(0, dtype=np.int64)
    if k > 0 and families:
        planted = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
        splits = np.array_split(planted, len(families))
        for fam, rows in zip(families, splits):
            family_ids[fam] = rows
            if fam == "extreme_speed":
                factor = rng.uniform(6.0, 12.0, len(rows))
                slow = rng.random(len(rows)) < 0.5
                factor = np.where(slow, factor, 1.0 / factor)
                duration[rows] = duration[rows] * factor
            elif fam == "detour":
                m = rng.uniform(3.0, 5.0, len(rows))
                distance[rows] = distance[rows] * m
                duration[rows] = duration[rows] * m * rng.uniform(0.9, 1.1, len(rows))
                if spec.with_fare:
                    fare[rows] = 2.5 + 2.5 * clean_distance[rows]

    table = TripTable(
        id=np.arange(n, dtype=np.int64),
        olat=olat, olon=olon, dlat=dlat, dlon=dlon,
        start=start, distance=distance, duration=duration, fare=fare,
    )
    truth = GroundTruth(spec=spec, regime_speed=regime_speed,
                        clean_duration=clean_duration, clean_distance=clean_distance,
                        outlier_ids=planted, family_ids=family_ids)
    return table, truth
