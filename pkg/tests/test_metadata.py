import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_record
from rgb2thermal.metadata import (
    FEATURE_DIM,
    IngestionError,
    MetadataVector,
    SLOT_NAMES,
    StandardizerError,
    apply_standardizer,
    build_feature_vector,
    encode_time_of_day,
    encode_wind_direction,
    fit_standardizer,
    invert_standardizer,
)


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


class TestTimeOfDayEncoding:
    @pytest.mark.parametrize(
        "hour,expected",
        [(0, (0.0, 1.0)), (6, (1.0, 0.0)), (18, (-1.0, 0.0))],
    )
    def test_quarter_period_anchors(self, hour, expected):
        s, c = encode_time_of_day(utc(2024, 1, 1, hour, 0, 0))
        assert abs(s - expected[0]) < 1e-12
        assert abs(c - expected[1]) < 1e-12

    def test_midnight_continuity(self):
        s1, c1 = encode_time_of_day(utc(2024, 1, 1, 23, 59, 59))
        s2, c2 = encode_time_of_day(utc(2024, 1, 2, 0, 0, 1))
        angle_gap = math.atan2(s1 * c2 - c1 * s2, c1 * c2 + s1 * s2)
        assert abs(angle_gap) < 2 * math.pi * 2 / 86400 + 1e-6

    @given(st.integers(min_value=0, max_value=86399))
    @settings(max_examples=50, deadline=None)
    def test_unit_circle_identity(self, seconds):
        ts = utc(2024, 3, 1) .replace(
            hour=seconds // 3600, minute=(seconds // 60) % 60, second=seconds % 60
        )
        s, c = encode_time_of_day(ts)
        assert abs(s * s + c * c - 1.0) < 1e-12


class TestWindDirectionEncoding:
    def test_cardinal_anchors(self):
        assert encode_wind_direction(0.0) == (0.0, 1.0)
        s, c = encode_wind_direction(90.0)
        assert abs(s - 1.0) < 1e-12 and abs(c) < 1e-12

    def test_wraparound_continuity(self):
        a = np.array(encode_wind_direction(359.9))
        b = np.array(encode_wind_direction(0.1))
        assert np.linalg.norm(a - b) < 0.01

    def test_out_of_range_rejected(self):
        with pytest.raises(IngestionError):
            encode_wind_direction(360.0)
        with pytest.raises(IngestionError):
            encode_wind_direction(-1.0)


class TestBuildFeatureVector:
    def test_zero_record_at_jan1_midnight(self):
        record = make_record(
            latitude=0.0, longitude=0.0, temperature=0.0, relative_humidity=0.0,
            wind_speed=0.0, wind_direction=0.0, solar=0.0, cloud_cover=0.0,
            timestamp=utc(2024, 1, 1, 0, 0, 0),
        )
        v = build_feature_vector(record).values
        # Zero angles force cos slots (and their product, slot 13) to one.
        ones = {"wind_dir_cos", "time_of_day_cos", "day_of_year_cos", "solar_elevation_proxy"}
        for i, name in enumerate(SLOT_NAMES):
            if name in ones:
                assert abs(v[i] - 1.0) < 1e-12, name
            else:
                assert abs(v[i]) < 1e-12, name

    def test_single_field_difference_hits_single_slot(self):
        a = build_feature_vector(make_record(cloud_cover=25.0)).values
        b = build_feature_vector(make_record(cloud_cover=60.0)).values
        diff = np.nonzero(a != b)[0]
        assert diff.tolist() == [SLOT_NAMES.index("cloud_cover")]

    def test_reference_record_hand_computed(self):
        record = make_record(
            temperature=20.0, relative_humidity=50.0, wind_speed=3.0,
            wind_direction=270.0, solar=600.0, cloud_cover=25.0,
            latitude=42.3, longitude=-83.0,
            timestamp=utc(2024, 6, 21, 12, 0, 0),
        )
        v = build_feature_vector(record).values
        # Independent slot-by-slot evaluation. Jun 21 2024 is day 173 (leap year).
        tod_angle = 2 * math.pi * (12 * 3600) / 86400
        doy_angle = 2 * math.pi * (173 - 1) / 365.25
        wind_angle = math.radians(270.0)
        expected = [
            42.3, -83.0, 20.0, 50.0, 3.0,
            math.sin(wind_angle), math.cos(wind_angle),
            600.0, 25.0,
            math.sin(tod_angle), math.cos(tod_angle),
            math.sin(doy_angle), math.cos(doy_angle),
            math.cos(tod_angle) * math.cos(doy_angle),
            1.0,
        ]
        np.testing.assert_allclose(v, expected, atol=1e-12)

    def test_daylight_flag_threshold(self):
        dim = build_feature_vector(make_record(solar=10.0)).values
        lit = build_feature_vector(make_record(solar=10.5)).values
        assert dim[SLOT_NAMES.index("is_daylight")] == 0.0
        assert lit[SLOT_NAMES.index("is_daylight")] == 1.0

    def test_pure_function(self):
        record = make_record()
        a = build_feature_vector(record).values
        b = build_feature_vector(record).values
        np.testing.assert_array_equal(a, b)

    def test_utc_offset_shifts_local_time(self):
        record = make_record(timestamp=utc(2024, 6, 21, 5, 0, 0))
        shifted = build_feature_vector(record, utc_offset_hours=-5.0).values
        s, c = encode_time_of_day(utc(2024, 6, 21, 0, 0, 0))
        assert abs(shifted[SLOT_NAMES.index("time_of_day_sin")] - s) < 1e-12
        assert abs(shifted[SLOT_NAMES.index("time_of_day_cos")] - c) < 1e-12

    def test_invalid_record_rejected_naming_field(self):
        record = make_record(relative_humidity=130.0)
        with pytest.raises(IngestionError, match="relative_humidity"):
            build_feature_vector(record)

    def test_cyclical_invariant_check(self):
        good = build_feature_vector(make_record())
        assert good.violations() == []
        tampered = np.array(good.values)
        tampered[SLOT_NAMES.index("time_of_day_sin")] += 0.1
        assert MetadataVector(tampered).violations() != []

    def test_length_is_enforced(self):
        with pytest.raises(IngestionError):
            MetadataVector(np.zeros(14))


def _random_vectors(n, seed=0):
    rng = np.random.default_rng(seed)
    return [MetadataVector(rng.normal(size=FEATURE_DIM)) for _ in range(n)]


class TestStandardizer:
    def test_symmetric_vectors_have_zero_mean(self):
        v = _random_vectors(1)[0]
        neg = MetadataVector(-v.values)
        s = fit_standardizer([v, neg], fold=0)
        np.testing.assert_allclose(s.mean, 0.0, atol=1e-15)

    def test_identical_vectors_hit_std_clamp(self):
        v = _random_vectors(1)[0]
        s = fit_standardizer([v, v, v], fold=1)
        np.testing.assert_array_equal(s.std, np.full(FEATURE_DIM, 1e-6))

    def test_matches_two_pass_oracle(self):
        vectors = _random_vectors(10, seed=7)
        s = fit_standardizer(vectors, fold=2)
        stack = np.stack([v.values for v in vectors])
        mean = np.zeros(FEATURE_DIM)
        for row in stack:
            mean += row
        mean /= len(vectors)
        var = np.zeros(FEATURE_DIM)
        for row in stack:
            var += (row - mean) ** 2
        std = np.sqrt(var / len(vectors))
        np.testing.assert_allclose(s.mean, mean, atol=1e-9)
        np.testing.assert_allclose(s.std, std, atol=1e-9)

    def test_too_few_vectors(self):
        with pytest.raises(StandardizerError):
            fit_standardizer(_random_vectors(1), fold=0)

    def test_apply_at_mean_gives_zero(self):
        vectors = _random_vectors(5)
        s = fit_standardizer(vectors, fold=0)
        out = apply_standardizer(MetadataVector(s.mean), s)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-12)

    def test_apply_one_std_above_gives_ones(self):
        vectors = _random_vectors(5)
        s = fit_standardizer(vectors, fold=0)
        out = apply_standardizer(MetadataVector(s.mean + s.std), s)
        np.testing.assert_allclose(out.values, 1.0, atol=1e-12)

    def test_round_trip(self):
        vectors = _random_vectors(6, seed=3)
        s = fit_standardizer(vectors, fold=0)
        v = vectors[2]
        back = invert_standardizer(apply_standardizer(v, s), s)
        np.testing.assert_allclose(back.values, v.values, atol=1e-9)

    def test_fold_provenance_recorded(self):
        s = fit_standardizer(_random_vectors(3), fold=4)
        assert s.fitted_on_fold == 4
