import json
from datetime import datetime, timezone

import numpy as np
import pytest

from hybridcast.core import (Frequency, TimeSeries, calendar_features, denormalize,
                             ingest, normalize, series_from_record, series_to_record,
                             write_jsonl)
from hybridcast.errors import DataError, EmptyInputError, IngestError

UTC = timezone.utc


def _series(values, freq="day", start=datetime(2024, 1, 1, tzinfo=UTC), sid="a"):
    return TimeSeries(id=sid, freq=Frequency(freq), start=start, values=np.asarray(values, float))


class TestIngestJsonl:
    def test_basic_record(self, tmp_path):
        p = tmp_path / "f.jsonl"
        p.write_text('{"id":"a","freq":"day","start":"2024-01-01T00:00:00Z","values":[1,2,3]}\n')
        series = ingest(p, "jsonl")
        assert len(series) == 1
        assert series[0].id == "a"
        assert len(series[0]) == 3
        assert series[0].freq.class_ == "day"

    def test_nan_value_rejected_naming_record(self, tmp_path):
        p = tmp_path / "f.jsonl"
        p.write_text('{"id":"a","freq":"day","start":"2024-01-01T00:00:00Z","values":[1,2,3]}\n'
                     '{"id":"b","freq":"day","start":"2024-01-01T00:00:00Z","values":[1,"NaN",3]}\n')
        with pytest.raises(IngestError) as err:
            ingest(p, "jsonl")
        assert "line 2" in str(err.value)

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "f.jsonl"
        p.write_text('{"id":"a","freq":"day","start":"2024-01-01T00:00:00Z","values":[1]}\n{oops\n')
        with pytest.raises(IngestError) as err:
            ingest(p, "jsonl")
        assert "line 2" in str(err.value)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "f.jsonl"
        p.write_text("")
        with pytest.raises(EmptyInputError):
            ingest(p, "jsonl")

    def test_lenient_skips_bad_records(self, tmp_path):
        p = tmp_path / "f.jsonl"
        p.write_text('{"id":"a","freq":"day","start":"2024-01-01T00:00:00Z","values":[1]}\n'
                     'not json\n')
        series = ingest(p, "jsonl", lenient=True)
        assert [s.id for s in series] == ["a"]

    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        originals = [
            _series(rng.normal(size=17), "day"),
            _series(rng.normal(size=5) * 1e6, "month", datetime(2021, 3, 1, tzinfo=UTC), "b"),
            TimeSeries(id="c", freq=Frequency("hour", 48),
                       start=datetime(2022, 6, 1, 12, tzinfo=UTC),
                       values=rng.normal(size=9)),
        ]
        p = tmp_path / "rt.jsonl"
        write_jsonl(originals, p)
        back = ingest(p, "jsonl")
        assert len(back) == len(originals)
        for a, b in zip(originals, back):
            assert a.id == b.id
            assert a.freq == b.freq
            assert a.start == b.start
            assert np.array_equal(a.values, b.values)
        # serialize(ingest(f)) re-parses identically, field for field
        for s in back:
            rec = series_to_record(s)
            again = series_from_record(json.loads(json.dumps(rec)))
            assert series_to_record(again) == rec


class TestIngestCsv:
    def test_grouping_by_id(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,timestamp,value\na,2024-01-01,1.0\na,2024-01-02,2.0\n")
        series = ingest(p, "csv")
        assert len(series) == 1
        assert series[0].id == "a"
        assert np.array_equal(series[0].values, [1.0, 2.0])
        assert series[0].freq.class_ == "day"

    def test_monthly_inference(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,timestamp,value\nm,2024-01-01,1\nm,2024-02-01,2\nm,2024-03-01,3\n")
        assert ingest(p, "csv")[0].freq.class_ == "month"

    def test_irregular_spacing_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,timestamp,value\na,2024-01-01,1\na,2024-01-02,2\na,2024-01-05,3\n")
        with pytest.raises(IngestError):
            ingest(p, "csv")

    def test_non_increasing_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,timestamp,value\na,2024-01-02,1\na,2024-01-01,2\n")
        with pytest.raises(IngestError):
            ingest(p, "csv")


class TestCalendarFeatures:
    def test_monday_start(self):
        s = _series([0.0] * 10)  # 2024-01-01 is a Monday
        assert calendar_features(s, 0).day_of_week == 0

    def test_weekly_wrap(self):
        s = _series([0.0] * 10)
        assert calendar_features(s, 7).day_of_week == 0

    def test_month_freq_december(self):
        s = TimeSeries(id="m", freq=Frequency("month"),
                       start=datetime(2024, 1, 1, tzinfo=UTC), values=np.zeros(12))
        assert calendar_features(s, 11).month == 12

    def test_pure_and_deterministic(self):
        s = _series(np.arange(30.0))
        a = calendar_features(s, 13)
        b = calendar_features(s, 13)
        assert a == b

    def test_oracle_against_stdlib(self):
        # independent oracle: python datetime arithmetic, day frequency
        from datetime import timedelta
        start = datetime(2023, 11, 20, tzinfo=UTC)
        s = _series(np.zeros(60), start=start)
        for idx in (0, 10, 31, 59):
            expected = start + timedelta(days=idx)
            got = calendar_features(s, idx)
            assert got.day_of_week == expected.weekday()
            assert got.day_of_month == expected.day
            assert got.month == expected.month
            assert 0.0 <= got.fraction_of_cycle < 1.0

    def test_out_of_range(self):
        s = _series([1.0, 2.0])
        with pytest.raises(DataError):
            calendar_features(s, 2)
        with pytest.raises(DataError):
            calendar_features(s, -1)


class TestNormalize:
    def test_constant_series_floor(self):
        normed, stats = normalize([2.0, 2.0, 2.0])
        assert np.array_equal(normed, [0.0, 0.0, 0.0])
        assert stats.mean == 2.0
        assert stats.std == 1e-8

    def test_symmetric_pair(self):
        normed, stats = normalize([0.0, 2.0])
        assert np.allclose(normed, [-1.0, 1.0])
        assert stats.mean == 1.0
        assert stats.std == 1.0  # population std

    def test_round_trip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            x = rng.normal(scale=rng.uniform(0.1, 100), size=rng.integers(2, 50))
            normed, stats = normalize(x)
            back = denormalize(normed, stats)
            assert np.max(np.abs(x - back)) <= 1e-12 * max(np.max(np.abs(x)), 1.0)


class TestInvariants:
    def test_non_finite_rejected_at_construction(self):
        with pytest.raises(DataError):
            _series([1.0, np.nan])
        with pytest.raises(DataError):
            _series([np.inf])

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            _series([])

    def test_values_read_only(self):
        s = _series([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 9.0

    def test_unknown_freq_class(self):
        with pytest.raises(DataError):
            Frequency("fortnight")

    def test_default_periods(self):
        assert Frequency("day").steps_per_cycle == 7
        assert Frequency("month").steps_per_cycle == 12
        assert Frequency("minute").steps_per_cycle == 1440
        assert Frequency("hour", 48).steps_per_cycle == 48
