from datetime import datetime, timezone

import numpy as np
import pytest

from hybridcast.core import Frequency, TimeSeries
from hybridcast.decomp import loess, stl_decompose
from hybridcast.errors import DataError


def _series(values, period=12):
    return TimeSeries(id="s", freq=Frequency("day", period),
                      start=datetime(2024, 1, 1, tzinfo=timezone.utc),
                      values=np.asarray(values, float))


class TestLoess:
    def test_constant(self):
        out = loess(np.full(25, 3.5), span=0.4, degree=0)
        assert np.allclose(out, 3.5, atol=1e-12)
        out = loess(np.full(25, 3.5), span=0.4, degree=1)
        assert np.allclose(out, 3.5, atol=1e-9)

    def test_exact_line_degree1(self):
        t = np.arange(40.0)
        y = 2.0 * t + 1.0
        out = loess(y, span=0.3, degree=1)
        assert np.max(np.abs(out - y)) <= 1e-9

    def test_idempotent_on_degree0_constant(self):
        y = np.full(30, -2.0)
        once = loess(y, span=0.5, degree=0)
        twice = loess(once, span=0.5, degree=0)
        assert np.allclose(once, twice, atol=1e-12)

    def test_smoothing_reduces_variance(self):
        rng = np.random.default_rng(1)
        t = np.arange(200)
        y = np.sin(2 * np.pi * t / 40) + rng.normal(scale=0.5, size=200)
        out = loess(y, span=0.3, degree=1)
        assert np.var(out) < np.var(y)

    def test_window_too_small(self):
        with pytest.raises(DataError):
            loess(np.arange(10.0), span=0.05, degree=1)  # 1-point window

    def test_too_short(self):
        with pytest.raises(DataError):
            loess([1.0, 2.0], span=1.0, degree=0)


class TestStl:
    def test_generator_oracle(self):
        t = np.arange(120.0)
        amplitude = 3.0
        y = 0.5 * t + amplitude * np.cos(2 * np.pi * t / 12)
        d = stl_decompose(_series(y), period=12)
        assert np.max(np.abs(d.residual)) <= 0.05 * amplitude
        assert np.max(np.abs(d.reconstruct() - y)) <= 1e-9

    def test_constant_series(self):
        d = stl_decompose(_series(np.full(60, 4.0), period=6), period=6)
        assert np.allclose(d.trend, 4.0, atol=1e-6)
        assert np.max(np.abs(d.seasonal)) <= 1e-6
        assert np.max(np.abs(d.residual)) <= 1e-6

    def test_reconstruction_identity_random(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            period = int(rng.integers(2, 13))
            n = int(rng.integers(2 * period, 150))
            y = rng.normal(size=n) * rng.uniform(0.5, 20)
            d = stl_decompose(_series(y, period), period=period)
            assert np.max(np.abs(d.reconstruct() - y)) <= 1e-9

    def test_deterministic(self):
        y = np.random.default_rng(3).normal(size=80)
        a = stl_decompose(_series(y), period=8)
        b = stl_decompose(_series(y), period=8)
        assert np.array_equal(a.trend, b.trend)
        assert np.array_equal(a.seasonal, b.seasonal)

    def test_too_short(self):
        with pytest.raises(DataError):
            stl_decompose(_series(np.arange(10.0), period=6), period=6)

    def test_bad_period(self):
        with pytest.raises(DataError):
            stl_decompose(_series(np.arange(30.0)), period=1)

    def test_seasonal_period_centering(self):
        # per-cycle means of the seasonal component should not drift
        t = np.arange(144.0)
        y = 0.3 * t + 5.0 * np.cos(2 * np.pi * t / 12 + 0.7)
        d = stl_decompose(_series(y), period=12)
        cycle_means = d.seasonal[: 144 // 12 * 12].reshape(-1, 12).mean(axis=1)
        assert np.max(np.abs(np.diff(cycle_means))) < 0.2
