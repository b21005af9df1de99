import numpy as np
import pytest

from triptime.core import (
    GeoPoint,
    Query,
    QueryTable,
    SECONDS_PER_WEEK,
    TimeSlotConfig,
    TripTable,
    WEEK_ANCHOR_EPOCH,
)
from triptime.errors import (
    DegenerateDesignError,
    NoNeighborsError,
    NoReferenceAvailableError,
)
from triptime.estimator import (
    STATUS_FALLBACK_LR,
    STATUS_NO_COVERAGE,
    STATUS_OK,
    STATUS_OUT_OF_BOUNDS,
    estimate_avg,
    estimate_batch,
    estimate_single,
    estimate_temp,
    estimate_weighted,
    fit_lr,
    scaling_factor,
)
from triptime.evaluation import assumption_report, ols_line
from triptime.index import build_index, neighbors
from triptime.speedref import fit_reference

from conftest import BBOX, query_of

CFG = TimeSlotConfig()


def straight_line_trips(n=50, beta1=60.0, beta0=30.0, seed=0):
    rng = np.random.default_rng(seed)
    olat = np.full(n, 40.73)
    olon = np.full(n, -74.0)
    dlat = 40.73 + rng.uniform(0.005, 0.06, n)
    dlon = np.full(n, -74.0)
    from triptime.core import l1_miles_between
    dist = l1_miles_between(olat, olon, dlat, dlon)
    return TripTable(
        id=np.arange(n, dtype=np.int64), olat=olat, olon=olon, dlat=dlat, dlon=dlon,
        start=np.zeros(n), distance=np.maximum(dist, 0.01),
        duration=beta1 * dist + beta0,
    )


class TestLr:
    def test_exact_line(self):
        table = straight_line_trips()
        m = fit_lr(table)
        assert m.beta1 == pytest.approx(60.0, abs=1e-6)
        assert m.beta0 == pytest.approx(30.0, abs=1e-6)

    def test_noisy_line_within_3_se(self):
        rng = np.random.default_rng(1)
        table = straight_line_trips(n=500)
        noisy = TripTable(id=table.id, olat=table.olat, olon=table.olon,
                          dlat=table.dlat, dlon=table.dlon, start=table.start,
                          distance=table.distance,
                          duration=table.duration + rng.standard_normal(500) * 20.0)
        m = fit_lr(noisy)
        from triptime.core import endpoint_l1_miles
        x = endpoint_l1_miles(noisy)
        se = 20.0 / np.sqrt(np.sum((x - x.mean()) ** 2))
        assert abs(m.beta1 - 60.0) < 3 * se

    def test_degenerate_design(self):
        table = straight_line_trips(n=10)
        same = TripTable(id=table.id, olat=table.olat, olon=table.olon,
                         dlat=np.full(10, 40.78), dlon=table.dlon,
                         start=table.start, distance=table.distance,
                         duration=table.duration)
        with pytest.raises(DegenerateDesignError):
            fit_lr(same)


@pytest.fixture(scope="module")
def fitted(small_city):
    table, truth = small_city
    index = build_index(table, 50.0, BBOX)
    rel = fit_reference(table, CFG, "relative")
    lr = fit_lr(table)
    return table, index, rel, lr


class TestPointEstimators:
    def test_avg_of_two(self, fitted):
        table, index, rel, _ = fitted
        ns = neighbors(index, query_of(table, 3), 3)
        est = estimate_avg(ns)
        assert est.value == pytest.approx(float(ns.durations.mean()))
        assert est.neighbor_count == len(ns)

    def test_avg_empty_raises(self, fitted):
        table, index, _, _ = fitted
        q = Query(GeoPoint(40.689, -74.049), GeoPoint(40.839, -73.901), 0.0)
        ns = neighbors(index, q, 0)
        with pytest.raises(NoNeighborsError):
            estimate_avg(ns)

    def test_weighted_equal_weights_equals_avg(self, fitted):
        table, index, _, _ = fitted
        ns = neighbors(index, query_of(table, 8), 3)
        w = np.ones(len(ns))
        assert estimate_weighted(ns, w).value == pytest.approx(estimate_avg(ns).value)

    def test_weighted_dominant_weight(self, fitted):
        table, index, _, _ = fitted
        ns = neighbors(index, query_of(table, 8), 3)
        if len(ns) < 2:
            pytest.skip("need 2+ neighbors")
        w = np.full(len(ns), 1e-9)
        w[0] = 1.0
        assert estimate_weighted(ns, w).value == pytest.approx(float(ns.durations[0]), rel=1e-6)

    def test_weighted_rejects_nonpositive(self, fitted):
        table, index, _, _ = fitted
        ns = neighbors(index, query_of(table, 8), 3)
        with pytest.raises(ValueError):
            estimate_weighted(ns, np.zeros(len(ns)))


class TestScalingFactor:
    def test_identity(self):
        assert scaling_factor(10.0, 10.0) == 1.0

    def test_twice_as_slow_regime(self):
        # historical regime twice as fast as query's: factor 2 on duration
        assert scaling_factor(20.0, 10.0) == 2.0

    def test_clamped(self):
        assert scaling_factor(100.0, 10.0) == 5.0
        assert scaling_factor(1.0, 100.0) == 0.2

    def test_invalid_reference(self):
        with pytest.raises(NoReferenceAvailableError):
            scaling_factor(0.0, 10.0)
        with pytest.raises(NoReferenceAvailableError):
            scaling_factor(10.0, float("nan"))


class TestEstimateTemp:
    def test_constant_reference_equals_avg(self, fitted):
        table, index, rel, _ = fitted
        import copy
        const = copy.deepcopy(rel)
        const.relative.values[:] = 12.0
        const.global_mean = 12.0
        q = query_of(table, 3)
        ns = neighbors(index, q, 3)
        t = estimate_temp(ns, const, q)
        assert t.value == pytest.approx(estimate_avg(ns).value)
        assert t.mean_scaling_factor == pytest.approx(1.0)

    def test_uniform_double_speed_factor(self):
        # four neighbors depart in slot 5 (20 mph regime), the query in
        # slot 9 (10 mph): every duration is scaled by exactly 2
        n = 4
        starts = np.full(n, WEEK_ANCHOR_EPOCH + 5 * 3600.0 + 60.0)
        table = TripTable(
            id=np.arange(n, dtype=np.int64),
            olat=np.full(n, 40.75), olon=np.full(n, -73.98),
            dlat=np.full(n, 40.77), dlon=np.full(n, -73.95),
            start=starts, distance=np.full(n, 2.0),
            duration=np.array([300.0, 400.0, 500.0, 600.0]))
        index = build_index(table, 50.0, BBOX)
        ref = fit_reference(table, CFG, "relative")
        ref.relative.values[:] = np.nan
        ref.relative.values[5] = 20.0
        ref.relative.values[9] = 10.0
        q = Query(GeoPoint(40.75, -73.98), GeoPoint(40.77, -73.95),
                  WEEK_ANCHOR_EPOCH + 9 * 3600.0 + 60.0)
        ns = neighbors(index, q, 0)
        t = estimate_temp(ns, ref, q)
        assert t.value == pytest.approx(2.0 * estimate_avg(ns).value)
        assert t.mean_scaling_factor == pytest.approx(2.0)

    def test_week_shift_equivariance(self, small_city):
        table, _ = small_city
        shifted = TripTable(id=table.id, olat=table.olat, olon=table.olon,
                            dlat=table.dlat, dlon=table.dlon,
                            start=table.start + 2 * SECONDS_PER_WEEK,
                            distance=table.distance, duration=table.duration)
        idx1 = build_index(table, 50.0, BBOX)
        idx2 = build_index(shifted, 50.0, BBOX)
        ref1 = fit_reference(table, CFG, "relative")
        ref2 = fit_reference(shifted, CFG, "relative")
        q1 = query_of(table, 21)
        q2 = Query(q1.origin, q1.destination, q1.start_time + 2 * SECONDS_PER_WEEK, q1.id)
        e1 = estimate_temp(neighbors(idx1, q1, 3), ref1, q1)
        e2 = estimate_temp(neighbors(idx2, q2, 3), ref2, q2)
        assert e1.value == pytest.approx(e2.value, rel=1e-12)

    def test_variance_reduction_on_sinusoid(self, fitted):
        table, index, rel, _ = fitted
        rng = np.random.default_rng(2)
        wins = total = 0
        for row in rng.choice(len(table), 200, replace=False):
            q = query_of(table, int(row))
            ns = neighbors(index, q, 3)
            if len(ns) < 5:
                continue
            den = rel.value_at(q.start_time)
            factors = np.clip(rel.values_at(ns.start_times) / den, 0.2, 5.0)
            scaled = ns.durations * factors
            total += 1
            wins += float(np.var(scaled)) <= float(np.var(ns.durations))
        assert total > 50
        assert wins / total >= 0.8

    def test_scaling_assumption_slope(self, fitted):
        table, _, rel, _ = fitted
        rep = assumption_report(table, rel, 500, seed=9, bbox=BBOX)
        slope, _, _ = ols_line(rep.reference_ratio, rep.duration_ratio)
        assert 0.85 <= slope <= 1.1


class TestBatch:
    def test_statuses_and_fallback(self, fitted):
        table, index, rel, lr = fitted
        good = query_of(table, 0)
        nocov = Query(GeoPoint(40.689, -74.049), GeoPoint(40.839, -73.901),
                      float(table.start[0]), id=990)
        outside = Query(GeoPoint(40.5, -74.0), GeoPoint(40.75, -73.95),
                        float(table.start[0]), id=991)
        queries = QueryTable.from_queries([good, nocov, outside])
        batch = estimate_batch(index, queries, "temp_rel", reference=rel, lr_model=lr)
        assert list(batch.status) == [STATUS_OK, STATUS_NO_COVERAGE, STATUS_OUT_OF_BOUNDS]
        assert np.isnan(batch.value[1]) and np.isnan(batch.value[2])

        with_fb = estimate_batch(index, queries, "temp_rel", reference=rel,
                                 lr_model=lr, fallback="lr")
        assert with_fb.status[1] == STATUS_FALLBACK_LR
        assert with_fb.value[1] == pytest.approx(lr.predict_query(nocov))
        assert with_fb.status[2] == STATUS_OUT_OF_BOUNDS

    def test_lr_method_answers_everything(self, fitted):
        table, index, _, lr = fitted
        queries = QueryTable.from_trip_table(table.select(np.arange(50)))
        batch = estimate_batch(index, queries, "lr", lr_model=lr)
        assert np.all(batch.status == STATUS_OK)
        assert np.all(batch.value > 0)

    def test_batch_matches_single_query_path(self, fitted):
        table, index, rel, lr = fitted
        rows = np.arange(0, 300, 7)
        queries = QueryTable.from_trip_table(table.select(rows))
        batch = estimate_batch(index, queries, "temp_rel", reference=rel, lr_model=lr)
        for i in range(len(queries)):
            q = queries[i]
            if batch.status[i] != STATUS_OK:
                continue
            single = estimate_single(index, q, "temp_rel", reference=rel, lr_model=lr)
            assert single.value == pytest.approx(float(batch.value[i]), rel=1e-12)
            assert single.neighbor_count == batch.neighbor_count[i]

    def test_thread_count_bit_identical(self, fitted):
        table, index, rel, lr = fitted
        queries = QueryTable.from_trip_table(table.select(np.arange(2000)))
        b1 = estimate_batch(index, queries, "temp_rel", reference=rel, thread_count=1)
        b4 = estimate_batch(index, queries, "temp_rel", reference=rel, thread_count=4)
        assert np.array_equal(b1.value, b4.value, equal_nan=True)
        assert np.array_equal(b1.status, b4.status)
        assert np.array_equal(b1.neighbor_count, b4.neighbor_count)

    def test_weighted_batch_matches_weighted_op(self, fitted):
        table, index, rel, lr = fitted
        q = query_of(table, 42)
        queries = QueryTable.from_queries([q])
        batch = estimate_batch(index, queries, "avg", lr_model=lr, weighted=True)
        ns = neighbors(index, q, 3)
        assert batch.value[0] == pytest.approx(estimate_weighted(ns).value)

    def test_unknown_method_rejected(self, fitted):
        _, index, rel, lr = fitted
        with pytest.raises(ValueError):
            estimate_batch(index, QueryTable.from_queries([]), "nope")

    def test_mode_mismatch_rejected(self, fitted):
        table, index, rel, lr = fitted
        queries = QueryTable.from_trip_table(table.select(np.arange(3)))
        with pytest.raises(ValueError):
            estimate_batch(index, queries, "temp_abs", reference=rel)

    def test_csv_output(self, fitted, tmp_path):
        table, index, rel, lr = fitted
        queries = QueryTable.from_trip_table(table.select(np.arange(5)))
        batch = estimate_batch(index, queries, "temp_rel", reference=rel)
        path = tmp_path / "batch.csv"
        batch.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "query_id,method,estimate_seconds,neighbor_count,status"
        assert len(lines) == 6
