"""Recursive inference, series embeddings and the pool-member wrapper."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from ..core import Frequency, TimeSeries, denormalize
from ..errors import DataError
from .losses import StudentTParams, student_t_nll
from .network import forward
from .params import Parameters
from .tokenizer import tokenize


@dataclass(frozen=True)
class ForecastOutput:
    """Per-step predictive Student-T parameters in the original scale, the
    point forecast (the location) and a confidence score in (0, 1]."""

    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    confidence: float

    @property
    def point(self) -> np.ndarray:
        return self.mu


def forecast(params: Parameters, series: TimeSeries, horizon: int,
             freq: Frequency | None = None) -> ForecastOutput:
    """Emit the next patch, feed the predicted locations back into the context
    and repeat until the horizon is covered; outputs are de-normalized.

    Confidence is 1 / (1 + mean sigma) over the horizon, in normalized space.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    freq = freq or series.freq
    cfg = params.config
    p_len = cfg.patch_len_for(freq.class_)
    n_steps = -(-horizon // p_len)
    current = series
    nus, mus, sigmas, norm_sigmas = [], [], [], []
    for _ in range(n_steps):
        tokens, stats = tokenize(current, p_len, cfg.context_patches)
        pred, _ = forward(params, tokens, freq)
        nu = pred.nu[-1]
        mu = pred.mu[-1]
        sigma = pred.sigma[-1]
        mu_dn = denormalize(mu, stats)
        nus.append(nu)
        mus.append(mu_dn)
        sigmas.append(sigma * stats.std)
        norm_sigmas.append(sigma)
        current = current.with_values(np.concatenate([current.values, mu_dn]))
    nu = np.concatenate(nus)[:horizon]
    mu = np.concatenate(mus)[:horizon]
    sigma = np.concatenate(sigmas)[:horizon]
    norm_sigma = np.concatenate(norm_sigmas)[:horizon]
    confidence = float(1.0 / (1.0 + np.mean(norm_sigma)))
    return ForecastOutput(nu=nu, mu=mu, sigma=sigma, confidence=confidence)


def embed_series(params: Parameters, series: TimeSeries,
                 freq: Frequency | None = None) -> np.ndarray:
    """Mean-pooled final hidden state over tokens holding any real data."""
    freq = freq or series.freq
    cfg = params.config
    p_len = cfg.patch_len_for(freq.class_)
    tokens, _ = tokenize(series, p_len, cfg.context_patches)
    _, hidden = forward(params, tokens, freq)
    keep = np.array([t.pad_mask.any() for t in tokens])
    return hidden[keep].mean(axis=0)


class TsfmForecaster:
    """Pool-member wrapper around a trained parameter set (zero-shot: fit is
    a no-op)."""

    def __init__(self, params: Parameters, name: str = "tsfm"):
        self.params = params
        self.name = name

    def fit(self, history):
        return self

    def _as_series(self, history) -> TimeSeries:
        if isinstance(history, TimeSeries):
            return history
        return TimeSeries(id="history", freq=Frequency("day"),
                          start=datetime(2020, 1, 1, tzinfo=timezone.utc),
                          values=np.asarray(history, dtype=float))

    def predict(self, history, horizon):
        series = self._as_series(history)
        return forecast(self.params, series, horizon).point

    def confidence(self, history, horizon=1):
        series = self._as_series(history)
        return forecast(self.params, series, horizon).confidence

    def predictive_nll(self, history, truth) -> float:
        """Mean NLL of the realized continuation under the predictive
        distribution (original scale)."""
        series = self._as_series(history)
        truth = np.asarray(truth, dtype=float)
        out = forecast(self.params, series, truth.size)
        return float(np.mean(student_t_nll(truth, out.nu, out.mu, out.sigma)))
