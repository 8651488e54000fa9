from datetime import datetime, timezone

import pytest
import requests

from rgb2thermal.weather import (
    ARCHIVE_URL,
    FixtureMissError,
    FixtureStore,
    WeatherFetchError,
    WeatherParseError,
    fetch_weather,
    fixture_key,
    parse_hourly_payload,
)

TS = datetime(2024, 6, 21, 14, 37, tzinfo=timezone.utc)

FIELDS = {
    "temperature": 24.5,
    "relative_humidity": 48.0,
    "wind_speed": 3.2,
    "wind_direction": 210.0,
    "solar_radiation": 710.0,
    "cloud_cover": 15.0,
}


class TestFixtureMode:
    def test_hit_returns_fixture_contents(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(42.3, -83.0, TS, FIELDS)
        rec = fetch_weather(42.3, -83.0, TS, mode="fixture", fixture_dir=tmp_path)
        assert rec.temperature == 24.5
        assert rec.relative_humidity == 48.0
        assert rec.wind_speed == 3.2
        assert rec.wind_direction == 210.0
        assert rec.solar_radiation == 710.0
        assert rec.cloud_cover == 15.0
        assert rec.latitude == 42.3 and rec.longitude == -83.0

    def test_miss_raises(self, tmp_path):
        with pytest.raises(FixtureMissError):
            fetch_weather(10.0, 10.0, TS, mode="fixture", fixture_dir=tmp_path)

    def test_key_rounds_to_2dp_and_hour(self):
        key = fixture_key(42.30123, -83.0049, TS)
        assert key == "42.30_-83.00_2024-06-21T14"

    def test_incomplete_fixture_rejected(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(1.0, 2.0, TS, {"temperature": 20.0})
        with pytest.raises(WeatherParseError, match="missing"):
            fetch_weather(1.0, 2.0, TS, mode="fixture", fixture_dir=tmp_path)


def _hourly_payload():
    # Hand-built document in the Open-Meteo hourly-arrays shape, one day of
    # hourly observations.
    hours = [f"2024-06-21T{h:02d}:00" for h in range(24)]
    return {
        "latitude": 42.3,
        "longitude": -83.0,
        "hourly": {
            "time": hours,
            "temperature_2m": [10.0 + h for h in range(24)],
            "relative_humidity_2m": [80.0 - h for h in range(24)],
            "wind_speed_10m": [1.0 + 0.1 * h for h in range(24)],
            "wind_direction_10m": [(h * 15) % 360 for h in range(24)],
            "shortwave_radiation": [max(0, 100 * (h - 5)) for h in range(24)],
            "cloud_cover": [h * 4 % 100 for h in range(24)],
        },
    }


class _FakeResponse:
    def __init__(self, payload):
        self._payload = payload

    def raise_for_status(self):
        pass

    def json(self):
        return self._payload


class TestLiveMode:
    def test_selects_nearest_hour(self):
        # 14:37 rounds to the 15:00 observation.
        fields = parse_hourly_payload(_hourly_payload(), TS)
        assert fields["temperature"] == 25.0
        assert fields["relative_humidity"] == 65.0
        assert fields["wind_direction"] == (15 * 15) % 360
        assert fields["solar_radiation"] == 1000.0

    def test_live_fetch_through_injected_transport(self):
        seen = {}

        def fake_get(url, params=None, timeout=None):
            seen["url"], seen["params"] = url, params
            return _FakeResponse(_hourly_payload())

        rec = fetch_weather(42.3, -83.0, TS, mode="live", http_get=fake_get)
        assert seen["url"] == ARCHIVE_URL
        assert seen["params"]["start_date"] == "2024-06-21"
        assert rec.temperature == 25.0

    def test_network_failure_is_retryable(self):
        def down(url, params=None, timeout=None):
            raise requests.ConnectionError("no route to host")

        with pytest.raises(WeatherFetchError) as err:
            fetch_weather(42.3, -83.0, TS, mode="live", http_get=down)
        assert err.value.retryable

    def test_malformed_payload_keeps_raw_document(self):
        bogus = {"unexpected": True}

        def weird(url, params=None, timeout=None):
            return _FakeResponse(bogus)

        with pytest.raises(WeatherParseError) as err:
            fetch_weather(42.3, -83.0, TS, mode="live", http_get=weird)
        assert err.value.payload == bogus

    def test_null_observation_rejected(self):
        payload = _hourly_payload()
        payload["hourly"]["temperature_2m"][15] = None
        with pytest.raises(WeatherParseError, match="temperature_2m"):
            parse_hourly_payload(payload, TS)
