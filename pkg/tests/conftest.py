"""Shared fixtures: deterministic synthetic cities at several scales."""

from __future__ import annotations

import numpy as np
import pytest

from triptime.core import GeoBoundingBox, Query, QueryTable, WEEK_ANCHOR_EPOCH
from triptime.synthgen import Hotspot, SynthSpec, generate

BBOX = GeoBoundingBox(40.68, 40.84, -74.05, -73.90)
WEEK0 = float(WEEK_ANCHOR_EPOCH)

# Four hotspots on an L1 diamond: every pair of distinct hotspots is exactly
# 3 miles apart in the L1 metric, which keeps trip lengths homogeneous.
_DLAT, _DLON = 0.02171, 0.02866
DIAMOND = (
    Hotspot(40.76, -73.97 - _DLON, 200, 1.0),
    Hotspot(40.76 + _DLAT, -73.97, 200, 1.0),
    Hotspot(40.76, -73.97 + _DLON, 200, 1.0),
    Hotspot(40.76 - _DLAT, -73.97, 200, 1.0),
)

CITY_HOTSPOTS = (
    Hotspot(40.73, -74.00, 300, 1.0),
    Hotspot(40.76, -73.97, 250, 1.5),
    Hotspot(40.79, -73.95, 250, 1.0),
    Hotspot(40.74, -73.98, 350, 0.8),
)


def sinusoid_spec(n_trips: int, weeks: float = 4.0, seed: int = 42, **overrides) -> SynthSpec:
    """Hotspot city with a +/-50% weekly speed swing."""
    kwargs = dict(bbox=BBOX, n_trips=n_trips, duration_weeks=weeks,
                  hotspots=CITY_HOTSPOTS, base_speed_mph=12.0, amplitude=0.5,
                  noise_sd=0.1, seed=seed)
    kwargs.update(overrides)
    return SynthSpec(**kwargs)


def diamond_spec(n_trips: int, weeks: float = 4.0, seed: int = 33, **overrides) -> SynthSpec:
    """Homogeneous-distance city used by the outlier fixtures."""
    kwargs = dict(bbox=BBOX, n_trips=n_trips, duration_weeks=weeks,
                  hotspots=DIAMOND, base_speed_mph=12.0, amplitude=0.15,
                  noise_sd=0.06, distinct_endpoints=True, seed=seed)
    kwargs.update(overrides)
    return SynthSpec(**kwargs)


def queries_from(table, rows) -> QueryTable:
    sub = table.select(np.asarray(rows))
    return QueryTable.from_trip_table(sub)


def query_of(table, row: int) -> Query:
    t = table[int(row)]
    return Query(origin=t.origin, destination=t.destination,
                 start_time=t.start_time, id=t.id)


@pytest.fixture(scope="session")
def small_city():
    """10k trips over 2 weeks; enough density for tau=3 neighborhoods."""
    return generate(sinusoid_spec(10_000, weeks=2.0, seed=42))


@pytest.fixture(scope="session")
def medium_city():
    """60k trips over 5 weeks with a held-out final week."""
    return generate(sinusoid_spec(60_000, weeks=5.0, seed=7))
