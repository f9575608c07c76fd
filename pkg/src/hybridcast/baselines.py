"""Classical small forecasters.

These serve three roles: reference models for robust data mixing, members of
the fusion model pool, and the trainable small models of the large/small
coordination scheme. Every forecaster exposes fit/predict and a confidence
score in (0, 1] derived from its in-sample one-step residual spread.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .core import TimeSeries
from .errors import DataError

log = logging.getLogger(__name__)


def as_values(history) -> np.ndarray:
    """Forecasters accept plain arrays or TimeSeries interchangeably."""
    if isinstance(history, TimeSeries):
        return np.asarray(history.values, dtype=float)
    return np.asarray(history, dtype=float)


@runtime_checkable
class Forecaster(Protocol):
    """Minimal pool-member capability."""

    name: str

    def fit(self, history: np.ndarray) -> "Forecaster": ...

    def predict(self, history: np.ndarray, horizon: int) -> np.ndarray: ...

    def confidence(self, history: np.ndarray, horizon: int) -> float: ...


def naive_forecast(history, horizon: int) -> np.ndarray:
    """Repeat the last observed value."""
    h = as_values(history)
    if h.size == 0:
        raise DataError("naive forecast needs a non-empty history")
    return np.full(horizon, h[-1])


def seasonal_naive(history, period: int, horizon: int) -> np.ndarray:
    """Repeat the last full seasonal cycle."""
    h = as_values(history)
    if h.size < period:
        raise DataError(f"history of {h.size} is shorter than period {period}")
    cycle = h[-period:]
    idx = np.arange(horizon) % period
    return cycle[idx]


def ses_forecast(history, alpha: float, horizon: int) -> np.ndarray:
    """Simple exponential smoothing; the final level is repeated."""
    h = as_values(history)
    if h.size == 0:
        raise DataError("ses forecast needs a non-empty history")
    if not 0 < alpha <= 1:
        raise DataError("alpha must be in (0, 1]")
    level = h[0]
    for y in h[1:]:
        level = alpha * y + (1 - alpha) * level
    return np.full(horizon, level)


@dataclass
class LinearARModel:
    """Autoregressive model of order p fitted by least squares."""

    order: int
    coef: np.ndarray  # lag coefficients a_1..a_p
    intercept: float
    residual_std: float
    ridge_fallback: bool = False

    def copy(self) -> "LinearARModel":
        return LinearARModel(self.order, self.coef.copy(), self.intercept,
                             self.residual_std, self.ridge_fallback)


def ar_fit(history, p: int) -> LinearARModel:
    """Least-squares AR(p) fit; singular normal equations fall back to a tiny
    ridge (flagged on the model and logged)."""
    y = as_values(history)
    if p < 1:
        raise DataError("order p must be >= 1")
    if y.size < 2 * p + 1:
        raise DataError(f"history of {y.size} too short for AR({p}); need >= {2 * p + 1}")
    rows = np.stack([y[p - i - 1:y.size - i - 1] for i in range(p)], axis=1)
    design = np.concatenate([rows, np.ones((rows.shape[0], 1))], axis=1)
    target = y[p:]
    gram = design.T @ design
    rhs = design.T @ target
    ridge_fallback = False
    try:
        cond = np.linalg.cond(gram)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        gram = gram + 1e-6 * np.eye(gram.shape[0])
        ridge_fallback = True
        log.warning("ar_fit: singular normal equations, using ridge fallback")
    theta = np.linalg.solve(gram, rhs)
    coef, intercept = theta[:p], float(theta[p])
    resid = target - design @ theta
    return LinearARModel(order=p, coef=coef, intercept=intercept,
                         residual_std=float(np.std(resid)), ridge_fallback=ridge_fallback)


def ar_predict(model: LinearARModel, history, horizon: int) -> np.ndarray:
    """Roll the AR recursion forward, feeding predictions back in."""
    y = as_values(history)
    p = model.order
    if y.size < p:
        raise DataError(f"history of {y.size} too short for AR({p}) prediction")
    buf = list(y[-p:])
    out = np.empty(horizon)
    for t in range(horizon):
        lags = buf[::-1][:p]
        out[t] = model.intercept + float(np.dot(model.coef, lags))
        buf.append(out[t])
        buf.pop(0)
    return out


def robust_scale(values) -> float:
    """Median absolute deviation; scale-equivariant, zero for constants."""
    v = as_values(values)
    return float(np.median(np.abs(v - np.median(v))))


def residual_confidence(residual_std: float, history) -> float:
    """Confidence in (0, 1]: 1 / (1 + residual_std / history scale).

    Scale-invariant because both numbers scale together; equals 1 when the
    residuals vanish and 0.5 when they match the history's spread.
    """
    scale = robust_scale(history)
    return 1.0 / (1.0 + residual_std / (scale + 1e-8))


def baseline_confidence(model: LinearARModel, history, horizon: int = 1) -> float:
    if model.coef is None:
        raise DataError("model is not fitted")
    return residual_confidence(model.residual_std, history)


# ---------------------------------------------------------------------------
# Pool-member wrappers
# ---------------------------------------------------------------------------

class NaiveForecaster:
    def __init__(self, name: str = "naive"):
        self.name = name

    def fit(self, history):
        return self

    def predict(self, history, horizon):
        return naive_forecast(history, horizon)

    def confidence(self, history, horizon=1):
        h = as_values(history)
        resid = np.diff(h) if h.size > 1 else np.zeros(1)
        return residual_confidence(float(np.std(resid)), h)


class SeasonalNaiveForecaster:
    """Repeats the last cycle; with ``period=None`` the period is read from
    the series frequency (plain arrays then degrade to the naive forecast)."""

    def __init__(self, period: int | None = None, name: str | None = None):
        self.period = period
        self.name = name or (f"seasonal_naive{period}" if period else "seasonal_naive")

    def _period(self, history) -> int:
        if self.period is not None:
            return self.period
        if isinstance(history, TimeSeries):
            return history.freq.steps_per_cycle
        return 1

    def fit(self, history):
        return self

    def predict(self, history, horizon):
        period = min(self._period(history), as_values(history).size)
        return seasonal_naive(history, period, horizon)

    def confidence(self, history, horizon=1):
        h = as_values(history)
        period = self._period(history)
        if h.size <= period:
            return 0.5
        resid = h[period:] - h[:-period]
        return residual_confidence(float(np.std(resid)), h)


class SESForecaster:
    def __init__(self, alpha: float = 0.3, name: str | None = None):
        self.alpha = alpha
        self.name = name or f"ses{alpha:g}"

    def fit(self, history):
        return self

    def predict(self, history, horizon):
        return ses_forecast(history, self.alpha, horizon)

    def confidence(self, history, horizon=1):
        h = as_values(history)
        level = h[0]
        errors = []
        for y in h[1:]:
            errors.append(y - level)
            level = self.alpha * y + (1 - self.alpha) * level
        resid_std = float(np.std(errors)) if errors else 0.0
        return residual_confidence(resid_std, h)


class ARForecaster:
    """Refits an AR(p) on each history window; optional first differencing."""

    def __init__(self, order: int, difference: bool = False, name: str | None = None):
        self.order = order
        self.difference = difference
        self.model: LinearARModel | None = None
        self.name = name or f"ar{order}{'d' if difference else ''}"

    def _prepare(self, history):
        h = as_values(history)
        return np.diff(h) if self.difference else h

    def fit(self, history):
        self.model = ar_fit(self._prepare(history), self.order)
        return self

    def predict(self, history, horizon):
        h = as_values(history)
        model = self.model if self.model is not None else ar_fit(self._prepare(h), self.order)
        steps = ar_predict(model, self._prepare(h), horizon)
        if self.difference:
            return h[-1] + np.cumsum(steps)
        return steps

    def confidence(self, history, horizon=1):
        h = as_values(history)
        model = self.model if self.model is not None else ar_fit(self._prepare(h), self.order)
        return residual_confidence(model.residual_std, self._prepare(h))
