"""LOESS smoothing and additive seasonal-trend decomposition.

The decomposition is a simplified two-loop STL: per-phase LOESS of the
detrended series gives the seasonal component (re-centered with a full-period
moving average so level and trend stay out of it), then the trend is a LOESS
fit of the deseasonalized series. The residual is the exact remainder, so
trend + seasonal + residual reconstructs the input by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TimeSeries
from .errors import DataError


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.residual


def loess(values, span: float, degree: int = 1) -> np.ndarray:
    """Tricube-weighted local polynomial smoother.

    At each point the ``ceil(span * T)`` nearest neighbors (by index distance,
    ties toward smaller index) are fit with a weighted polynomial of the given
    degree and the fit is evaluated at the point.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 3:
        raise DataError("loess needs at least 3 points")
    if degree not in (0, 1):
        raise DataError("degree must be 0 or 1")
    if not 0 < span <= 1:
        raise DataError("span must be in (0, 1]")
    m = int(np.ceil(span * n))
    if m < degree + 1:
        raise DataError(f"window of {m} points cannot fit degree {degree}")
    m = min(m, n)
    t = np.arange(n, dtype=float)
    out = np.empty(n)
    for i in range(n):
        dist = np.abs(t - i)
        idx = np.argsort(dist, kind="stable")[:m]
        d = dist[idx]
        dmax = d.max()
        if dmax == 0:
            out[i] = y[i]
            continue
        w = (1.0 - (d / dmax) ** 3) ** 3
        if degree == 0:
            sw = w.sum()
            if sw <= 0:
                w = np.ones_like(w)
                sw = w.sum()
            out[i] = float(np.dot(w, y[idx]) / sw)
        else:
            x = t[idx] - i
            # weighted least squares for a + b*x; tiny ridge keeps ties solvable
            s0 = w.sum()
            s1 = np.dot(w, x)
            s2 = np.dot(w, x * x)
            r0 = np.dot(w, y[idx])
            r1 = np.dot(w, x * y[idx])
            a_mat = np.array([[s0, s1], [s1, s2]]) + 1e-12 * np.eye(2)
            coef = np.linalg.solve(a_mat, np.array([r0, r1]))
            out[i] = float(coef[0])
    return out


def _period_window_mean(values: np.ndarray, period: int) -> np.ndarray:
    """Mean over a full-period window; near the edges the window slides to stay
    inside the series so it always covers exactly one period."""
    n = values.size
    cum = np.concatenate([[0.0], np.cumsum(values)])
    half = period // 2
    out = np.empty(n)
    for i in range(n):
        start = min(max(i - half, 0), n - period)
        out[i] = (cum[start + period] - cum[start]) / period
    return out


def _seasonal_pass(detrended: np.ndarray, period: int, span: float) -> np.ndarray:
    n = detrended.size
    raw = np.empty(n)
    for phase in range(period):
        sub = detrended[phase::period]
        if sub.size >= 3:
            raw[phase::period] = loess(sub, span=span, degree=1)
        else:
            raw[phase::period] = float(np.mean(sub))
    return raw


def stl_decompose(series: TimeSeries | np.ndarray, period: int, inner_iters: int = 2,
                  seasonal_span: float = 0.6, trend_span: float | None = None) -> Decomposition:
    """Additive seasonal-trend decomposition with LOESS components.

    Preconditions: ``period >= 2`` and the series holds at least two full
    periods. Deterministic; residual is defined as the exact remainder.
    """
    y = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    n = y.size
    if period < 2:
        raise DataError("period must be >= 2")
    if n < 2 * period:
        raise DataError(f"series of length {n} is shorter than two periods ({2 * period})")
    if trend_span is None:
        trend_span = min(max(1.5 * period / n, 3.0 / n), 1.0)
    trend = loess(y, span=trend_span, degree=1)
    seasonal = np.zeros(n)
    for _ in range(max(1, inner_iters)):
        raw = _seasonal_pass(y - trend, period, seasonal_span)
        seasonal = raw - _period_window_mean(raw, period)
        trend = loess(y - seasonal, span=trend_span, degree=1)
    residual = y - trend - seasonal
    return Decomposition(trend=trend, seasonal=seasonal, residual=residual)
