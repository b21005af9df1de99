import numpy as np
import pytest

from triptime.core import GeoPoint, TimeSlotConfig, WEEK_ANCHOR_EPOCH
from triptime.regions import (
    RegionPartition,
    build_region_references,
    export_pair_references_csv,
    lookup_pair,
)
from triptime.speedref import fit_reference
from triptime.synthgen import Hotspot, SynthSpec, generate

from conftest import BBOX, sinusoid_spec

CFG = TimeSlotConfig()


class TestPartition:
    def test_every_point_maps_to_one_region(self):
        part = RegionPartition(bbox=BBOX, cols=8, rows=8)
        rng = np.random.default_rng(0)
        lat = rng.uniform(BBOX.lat_min, BBOX.lat_max, 1000)
        lon = rng.uniform(BBOX.lon_min, BBOX.lon_max, 1000)
        rids = part.region_ids(lat, lon)
        assert np.all((rids >= 0) & (rids < part.k))

    def test_edges_clip_into_last_region(self):
        part = RegionPartition(bbox=BBOX, cols=2, rows=2)
        rid = part.region_of(GeoPoint(BBOX.lat_max, BBOX.lon_max))
        assert rid == part.k - 1

    def test_k(self):
        assert RegionPartition(bbox=BBOX, cols=3, rows=4).k == 12


class TestBuild:
    def test_k1_degenerates_to_global(self, small_city):
        table, _ = small_city
        part = RegionPartition(bbox=BBOX, cols=1, rows=1)
        refs = build_region_references(table, part, CFG, "relative", min_support=1)
        glob = fit_reference(table, CFG, "relative")
        assert len(refs.pair_refs) == 1
        pair = refs.pair_refs[0]
        same = np.array_equal(pair.relative.values, glob.relative.values, equal_nan=True)
        assert same

    def test_two_pair_speed_ratio_recovered(self):
        hot = (Hotspot(40.72, -74.01, 200, 1.0), Hotspot(40.72, -73.99, 200, 1.0),
               Hotspot(40.80, -73.95, 200, 1.0), Hotspot(40.80, -73.93, 200, 1.0))
        spec = SynthSpec(bbox=BBOX, n_trips=60_000, duration_weeks=2.0, hotspots=hot,
                         base_speed_mph=10.0, noise_sd=0.05, region_shape=(1, 2),
                         region_multipliers=(1.0, 2.0), seed=17)
        table, _ = generate(spec)
        part = RegionPartition(bbox=BBOX, cols=1, rows=2)
        refs = build_region_references(table, part, CFG, "relative", min_support=5)
        south = refs.pair_refs.get(0)          # region 0 -> region 0
        north = refs.pair_refs.get(part.k + 1)  # region 1 -> region 1
        assert south is not None and north is not None
        ratio = np.nanmean(north.relative.values) / np.nanmean(south.relative.values)
        assert ratio == pytest.approx(2.0, rel=0.05)

    def test_min_support_drops_thin_pairs(self, small_city):
        table, _ = small_city
        sub = table.select(np.arange(40))
        part = RegionPartition(bbox=BBOX, cols=8, rows=8)
        refs = build_region_references(sub, part, CFG, "relative", min_support=50)
        assert len(refs.pair_refs) == 0

    def test_absolute_mode_sparse_pairs_fall_back_to_relative(self, small_city):
        table, _ = small_city
        part = RegionPartition(bbox=BBOX, cols=8, rows=8)
        refs = build_region_references(table, part, CFG, "absolute", min_support=10)
        # 10k trips over 2 weeks cannot give dense per-pair hourly series
        assert all(r.mode == "relative" for r in refs.pair_refs.values())
        assert refs.global_ref.mode == "absolute"


@pytest.fixture(scope="module")
def refs(small_city):
    table, _ = small_city
    part = RegionPartition(bbox=BBOX, cols=2, rows=2)
    return table, build_region_references(table, part, CFG, "relative", min_support=5)


class TestLookup:
    def test_populated_pair_value(self, refs):
        table, rr = refs
        pid = next(iter(rr.pair_refs))
        ref = rr.pair_refs[pid]
        slot = int(np.flatnonzero(np.isfinite(ref.relative.values))[0])
        s = float(WEEK_ANCHOR_EPOCH + slot * 3600 + 60)
        vals = rr.values_at(np.array([pid]), np.array([s]))
        assert vals[0] == pytest.approx(ref.relative.values[slot])

    def test_missing_pair_falls_back_to_global(self, refs):
        table, rr = refs
        missing_pid = max(rr.pair_refs) + 1
        s = float(table.start[0])
        v = rr.values_at(np.array([missing_pid]), np.array([s]))[0]
        assert v == pytest.approx(float(rr.global_ref.values_at(np.array([s]))[0]))

    def test_chain_terminates_at_global_mean(self, refs):
        table, rr = refs
        # a relative slot nobody drove in: 2-week fixture covers all slots,
        # so probe via an explicitly emptied copy
        import copy
        rr2 = copy.deepcopy(rr)
        rr2.global_ref.relative.values[:] = np.nan
        for ref in rr2.pair_refs.values():
            ref.relative.values[:] = np.nan
        s = float(table.start[0])
        v = rr2.values_at(np.array([0]), np.array([s]))[0]
        assert v == pytest.approx(rr2.global_ref.global_mean)

    def test_lookup_pair_api(self, refs):
        table, rr = refs
        t0 = table[0]
        v = lookup_pair(rr, t0.origin, t0.destination, t0.start_time)
        assert np.isfinite(v) and v > 0

    def test_fallback_total_with_one_trip(self):
        trips = generate(sinusoid_spec(1, weeks=1.0, seed=1))[0]
        part = RegionPartition(bbox=BBOX, cols=8, rows=8)
        rr = build_region_references(trips, part, CFG, "relative", min_support=10)
        v = lookup_pair(rr, GeoPoint(40.69, -74.04), GeoPoint(40.83, -73.91),
                        WEEK_ANCHOR_EPOCH + 1e6)
        assert np.isfinite(v) and v > 0

    def test_csv_export(self, refs, tmp_path):
        _, rr = refs
        path = tmp_path / "pairs.csv"
        export_pair_references_csv(rr, path)
        header = path.read_text().splitlines()[0]
        assert header == "origin_region,dest_region,slot,value,count"
