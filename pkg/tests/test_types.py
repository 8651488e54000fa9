import math

import numpy as np
import pytest

from helpers import make_record, make_sample, make_samples
from rgb2thermal.data import load_dataset, write_dataset
from rgb2thermal.types import (
    RAW_0_255,
    SIGNED_PM1,
    UNIT_0_1,
    ImageTensor,
    MetricReport,
    PairedSample,
    RangeTagError,
    require_range,
    validate_sample,
)


class TestImageTensor:
    def test_valid_tensor_has_no_violations(self):
        img = ImageTensor(np.zeros((3, 8, 8)), RAW_0_255)
        assert img.violations() == []

    def test_bad_channel_count(self):
        img = ImageTensor(np.zeros((2, 8, 8)), RAW_0_255)
        assert any("channel count" in v for v in img.violations())

    def test_out_of_range_values(self):
        img = ImageTensor(np.full((1, 4, 4), 300.0), RAW_0_255)
        assert any("outside" in v for v in img.violations())
        img = ImageTensor(np.full((1, 4, 4), -0.5), UNIT_0_1)
        assert any("outside" in v for v in img.violations())

    def test_data_is_immutable(self):
        img = ImageTensor(np.zeros((1, 4, 4)), UNIT_0_1)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_require_range_rejects_wrong_tag(self):
        img = ImageTensor(np.zeros((3, 4, 4)), RAW_0_255)
        with pytest.raises(RangeTagError, match="signed_pm1"):
            require_range(img, SIGNED_PM1, "model input")

    def test_require_range_accepts_matching_tag(self):
        img = ImageTensor(np.zeros((3, 4, 4)), SIGNED_PM1)
        assert require_range(img, SIGNED_PM1) is img


class TestValidateSample:
    def test_well_formed_pair(self):
        sample = make_sample(size=384)
        assert validate_sample(sample, expected_size=384) == []

    def test_thermal_size_mismatch(self):
        sample = make_sample(size=384)
        small = make_sample(size=256)
        bad = PairedSample(
            sample_id=sample.sample_id,
            rgb=sample.rgb,
            thermal=small.thermal,
            metadata=sample.metadata,
            group_id=sample.group_id,
        )
        assert any("thermal size mismatch" in v for v in validate_sample(bad))

    def test_wind_direction_out_of_range(self):
        record = make_record()
        bad_record = type(record)(**{**record.__dict__, "wind_direction": 400.0})
        sample = make_sample(record=bad_record)
        assert any("wind_direction out of [0,360)" in v for v in validate_sample(sample))

    def test_empty_group_id(self):
        sample = make_sample(group_id="")
        assert any("group_id" in v for v in validate_sample(sample))

    def test_validation_reports_rather_than_raises(self):
        bad = PairedSample(
            sample_id="",
            rgb=ImageTensor(np.zeros((2, 4, 4)), RAW_0_255),
            thermal=ImageTensor(np.zeros((1, 8, 8)), RAW_0_255),
            metadata=make_record(),
            group_id="",
        )
        violations = validate_sample(bad)
        assert len(violations) >= 3


class TestDatasetRoundTrip:
    def test_write_read_identity(self, tmp_path):
        samples = make_samples(4, 2, size=32)
        write_dataset(tmp_path, samples)
        loaded = load_dataset(tmp_path)
        assert [s.sample_id for s in loaded] == sorted(s.sample_id for s in samples)
        by_id = {s.sample_id: s for s in samples}
        for got in loaded:
            want = by_id[got.sample_id]
            assert got.group_id == want.group_id
            np.testing.assert_array_equal(got.rgb.data, np.rint(want.rgb.data))
            np.testing.assert_allclose(
                got.thermal.data, np.rint(want.thermal.data * 255.0) / 255.0, atol=1e-7
            )
            assert got.metadata == want.metadata

    def test_reload_is_exact_fixed_point(self, tmp_path):
        samples = make_samples(2, 2, size=16)
        write_dataset(tmp_path, samples)
        first = load_dataset(tmp_path)
        write_dataset(tmp_path / "again", first)
        second = load_dataset(tmp_path / "again")
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.rgb.data, b.rgb.data)
            np.testing.assert_array_equal(a.thermal.data, b.thermal.data)
            assert a.metadata == b.metadata


class TestMetricReport:
    def test_fold_mean_is_arithmetic_mean(self):
        report = MetricReport(
            fold_id=0,
            per_sample=[("a", 20.0, 0.9, 0.1), ("b", 30.0, 0.7, 0.3)],
        )
        p, s, l = report.fold_mean
        assert abs(p - 25.0) < 1e-9
        assert abs(s - 0.8) < 1e-9
        assert abs(l - 0.2) < 1e-9

    def test_infinite_psnr_is_allowed(self):
        report = MetricReport(fold_id=0, per_sample=[("a", math.inf, 1.0, 0.0)])
        assert report.violations() == []
        assert math.isinf(report.fold_mean[0])

    def test_bad_metric_values_flagged(self):
        report = MetricReport(fold_id=0, per_sample=[("a", -3.0, 1.5, -0.1)])
        assert len(report.violations()) == 3
