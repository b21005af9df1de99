import json
import math

import numpy as np
import pytest

from triptime.core import TimeSlotConfig, slots_of_arrays
from triptime.errors import InvalidSpecError
from triptime.synthgen import SynthSpec, generate

from conftest import BBOX, diamond_spec, sinusoid_spec


class TestDeterminism:
    def test_same_seed_same_output(self):
        spec = sinusoid_spec(2000, seed=5)
        t1, g1 = generate(spec)
        t2, g2 = generate(spec)
        assert np.array_equal(t1.start, t2.start)
        assert np.array_equal(t1.duration, t2.duration)
        assert np.array_equal(g1.outlier_ids, g2.outlier_ids)

    def test_different_seed_differs(self):
        t1, _ = generate(sinusoid_spec(2000, seed=5))
        t2, _ = generate(sinusoid_spec(2000, seed=6))
        assert not np.array_equal(t1.start, t2.start)


class TestSpeedLaw:
    def test_zero_noise_exact_base_speed(self):
        spec = SynthSpec(bbox=BBOX, n_trips=500, duration_weeks=1.0, hotspots=None,
                         base_speed_mph=11.0, amplitude=0.0, noise_sd=0.0,
                         route_factor_sd=0.0, route_factor_mean=1.0, seed=1)
        table, _ = generate(spec)
        assert np.allclose(table.speed_mph, 11.0)

    def test_profile_recovered_within_2pct_at_100k(self):
        spec = sinusoid_spec(100_000, weeks=4.0, seed=8, noise_sd=0.1)
        table, truth = generate(spec)
        cfg = TimeSlotConfig()
        _, rel = slots_of_arrays(table.start, cfg)
        speeds = table.speed_mph
        law = 12.0 * (1 + 0.5 * np.sin(2 * np.pi * np.arange(168) / 168))
        got = np.array([speeds[rel == k].mean() for k in range(168)])
        assert np.all(np.abs(got - law) / law < 0.02)

    def test_holiday_window_applies(self):
        h0, h1 = 345600.0 + 7 * 86400, 345600.0 + 9 * 86400
        spec = sinusoid_spec(40_000, weeks=3.0, seed=9, amplitude=0.0,
                             holiday=(h0, h1, 1.5))
        table, truth = generate(spec)
        inside = (table.start >= h0) & (table.start < h1)
        assert truth.regime_speed[inside].mean() == pytest.approx(18.0, rel=1e-9)
        assert truth.regime_speed[~inside].mean() == pytest.approx(12.0, rel=1e-9)

    def test_true_speed_at_matches_regime(self):
        spec = sinusoid_spec(5000, weeks=2.0, seed=10)
        table, truth = generate(spec)
        again = truth.true_speed_at(table.start, table.olat, table.olon)
        assert np.allclose(again, truth.regime_speed)


class TestOutlierPlanting:
    def test_fraction_exact_and_disjoint(self):
        spec = diamond_spec(10_000, outlier_fraction=0.05, seed=3)
        table, truth = generate(spec)
        assert len(truth.outlier_ids) == 500
        families = list(truth.family_ids.values())
        all_ids = np.concatenate(families)
        assert len(np.unique(all_ids)) == len(all_ids) == 500

    def test_clean_values_preserved(self):
        spec = diamond_spec(5_000, outlier_fraction=0.04, seed=4)
        table, truth = generate(spec)
        clean_rows = ~np.isin(table.id, truth.outlier_ids)
        assert np.array_equal(table.duration[clean_rows], truth.clean_duration[clean_rows])
        assert np.array_equal(table.distance[clean_rows], truth.clean_distance[clean_rows])

    def test_extreme_speed_changes_duration_only(self):
        spec = diamond_spec(5_000, outlier_fraction=0.04, seed=5,
                            outlier_families=("extreme_speed",))
        table, truth = generate(spec)
        rows = truth.family_ids["extreme_speed"]
        assert np.array_equal(table.distance[rows], truth.clean_distance[rows])
        assert not np.any(table.duration[rows] == truth.clean_duration[rows])


class TestValidation:
    def test_bad_fraction(self):
        with pytest.raises(InvalidSpecError):
            SynthSpec(bbox=BBOX, n_trips=10, outlier_fraction=0.5).validate()

    def test_bad_amplitude(self):
        with pytest.raises(InvalidSpecError):
            SynthSpec(bbox=BBOX, n_trips=10, amplitude=1.0).validate()

    def test_region_params_need_shape(self):
        with pytest.raises(InvalidSpecError):
            SynthSpec(bbox=BBOX, n_trips=10, region_multipliers=(1.0,)).validate()

    def test_region_params_length(self):
        with pytest.raises(InvalidSpecError):
            SynthSpec(bbox=BBOX, n_trips=10, region_shape=(2, 1),
                      region_multipliers=(1.0,)).validate()

    def test_unknown_family(self):
        with pytest.raises(InvalidSpecError):
            SynthSpec(bbox=BBOX, n_trips=10, outlier_families=("nope",)).validate()


class TestJson:
    def test_spec_round_trip(self):
        spec = diamond_spec(1000, outlier_fraction=0.02, seed=6,
                            region_shape=(2, 1), region_multipliers=(1.0, 2.0),
                            region_amplitudes=(0.3, 0.1),
                            region_phases=(0.0, math.pi / 2),
                            holiday=(345600.0, 345600.0 + 86400, 1.4))
        back = SynthSpec.from_json(spec.to_json())
        assert back == spec

    def test_ground_truth_json(self):
        spec = diamond_spec(1000, outlier_fraction=0.02, seed=7)
        _, truth = generate(spec)
        payload = json.loads(truth.to_json())
        assert payload["n_outliers"] == 20
        assert set(payload["family_ids"]) == {"extreme_speed", "detour"}
