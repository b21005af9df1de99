import numpy as np
import pytest

from triptime.core import GeoBoundingBox, GeoPoint, GridCell, Query
from triptime.errors import OutOfBoundsError
from triptime.index import (
    brute_force_neighbors,
    build_index,
    coverage,
    load_index,
    neighbors,
    save_index,
)
from triptime.synthgen import generate

from conftest import BBOX, queries_from, query_of, sinusoid_spec


@pytest.fixture(scope="module")
def city(small_city):
    table, _ = small_city
    return table, build_index(table, 50.0, BBOX)


class TestBuild:
    def test_shared_bucket(self, city):
        table, index = city
        # two trips sharing both endpoint cells must land in one bucket
        q = query_of(table, 0)
        ns = neighbors(index, q, 0)
        cell_o = index.ocol_s[ns.positions[0]], index.orow_s[ns.positions[0]]
        cell_d = index.dcol_s[ns.positions[0]], index.drow_s[ns.positions[0]]
        bucket = index.bucket(GridCell(*cell_o), GridCell(*cell_d))
        assert set(ns.trip_ids) == set(bucket)

    def test_every_trip_in_exactly_one_bucket(self, city):
        table, index = city
        assert len(index) == len(table)
        assert len(np.unique(index.ids_s)) == len(table)

    def test_out_of_bounds_collected_not_fatal(self, small_city):
        table, _ = small_city
        narrow = GeoBoundingBox(40.70, 40.84, -74.05, -73.90)
        index = build_index(table, 50.0, narrow)
        assert len(index) + len(index.rejected_ids) == len(table)

    def test_permutation_invariance(self, small_city):
        table, _ = small_city
        rng = np.random.default_rng(0)
        shuffled = table.select(rng.permutation(len(table)))
        a = build_index(table, 50.0, BBOX)
        b = build_index(shuffled, 50.0, BBOX)
        assert np.array_equal(a.keys, b.keys)
        assert np.array_equal(a.ids_s, b.ids_s)
        q = query_of(table, 17)
        assert np.array_equal(neighbors(a, q, 3).trip_ids, neighbors(b, q, 3).trip_ids)

    def test_alpha_in_nyc_like_band(self):
        # dominant tight hotspot: the densest 50 m origin cell should hold
        # about 1% of all trips, like the real-data load factor
        from triptime.synthgen import Hotspot, SynthSpec
        spec = SynthSpec(
            bbox=BBOX, n_trips=50_000, duration_weeks=2.0,
            hotspots=(Hotspot(40.75, -73.99, 100, 2.0),
                      Hotspot(40.77, -73.96, 300, 1.0),
                      Hotspot(40.72, -74.00, 400, 1.0)),
            base_speed_mph=12.0, seed=4)
        table, _ = generate(spec)
        index = build_index(table, 50.0, BBOX)
        assert 0.005 <= index.max_bucket_fraction <= 0.05


class TestNeighbors:
    def test_exact_cell_match_included_at_tau0(self, city):
        table, index = city
        q = query_of(table, 5)
        ns = neighbors(index, q, 0)
        assert table.id[5] in ns.trip_ids

    def test_threshold_excludes_beyond_tau(self, city):
        table, index = city
        q = query_of(table, 5)
        ns = neighbors(index, q, 3)
        assert np.all(ns.origin_cell_l1 <= 3)
        assert np.all(ns.dest_cell_l1 <= 3)

    @pytest.mark.parametrize("tau", [0, 1, 3, 6])
    def test_oracle_equality(self, city, tau):
        table, index = city
        rng = np.random.default_rng(tau)
        for row in rng.choice(len(table), 40, replace=False):
            q = query_of(table, int(row))
            got = np.sort(neighbors(index, q, tau).trip_ids)
            want = brute_force_neighbors(table, 50.0, BBOX, q, tau)
            assert np.array_equal(got, want)

    def test_query_outside_bbox_raises(self, city):
        _, index = city
        q = Query(GeoPoint(10.0, 10.0), GeoPoint(40.75, -73.97), 0.0)
        with pytest.raises(OutOfBoundsError):
            neighbors(index, q, 3)

    def test_negative_tau_rejected(self, city):
        table, index = city
        with pytest.raises(ValueError):
            neighbors(index, query_of(table, 0), -1)

    def test_entries_expose_trips_and_distances(self, city):
        table, index = city
        ns = neighbors(index, query_of(table, 9), 2)
        for trip, ol1, dl1 in ns.entries:
            assert 0 <= ol1 <= 2 and 0 <= dl1 <= 2
            assert trip.duration > 0


class TestCoverage:
    def test_monotone_in_tau(self, city, small_city):
        table, index = city
        qs = queries_from(table, np.arange(0, 400, 7))
        values = [coverage(index, [qs[i] for i in range(len(qs))], tau) for tau in (0, 1, 3, 6)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_empty_index_coverage_zero(self, small_city):
        table, _ = small_city
        empty = build_index(table.select(np.array([], dtype=int)), 50.0, BBOX)
        qs = [query_of(table, 3)]
        assert coverage(empty, qs, 6) == 0.0

    def test_wide_tau_covers_everything(self, city):
        table, index = city
        qs = [query_of(table, i) for i in range(20)]
        assert coverage(index, qs, 400) == 1.0

    def test_rejects_empty_queries(self, city):
        _, index = city
        with pytest.raises(ValueError):
            coverage(index, [], 3)


class TestSnapshot:
    def test_round_trip_bit_identical(self, city, tmp_path):
        table, index = city
        path = tmp_path / "index.npz"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.cell_size == index.cell_size
        assert np.array_equal(loaded.keys, index.keys)
        q = query_of(table, 11)
        a = neighbors(index, q, 3)
        b = neighbors(loaded, q, 3)
        assert np.array_equal(a.trip_ids, b.trip_ids)
        assert np.array_equal(a.durations, b.durations)

    def test_version_check(self, city, tmp_path):
        _, index = city
        path = tmp_path / "index.npz"
        save_index(index, path)
        import numpy as np_
        with np_.load(path) as z:
            payload = {k: z[k] for k in z.files}
        payload["version"] = np_.array([99])
        np_.savez(path, **payload)
        with pytest.raises(ValueError):
            load_index(path)
