"""Group-robust dataset weighting.

Maintains a probability vector over datasets, driven by each dataset's excess
loss over a per-dataset reference model. Updates are exponentiated-gradient
steps on the simplex with an optional uniform-smoothing floor; weights control
the sampling probability of training batches (a loss-multiplier mode is
available where the trainer supports it).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import ar_fit, ar_predict, naive_forecast, seasonal_naive, ses_forecast
from .core import TimeSeries
from .errors import DataError
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass
class GroupWeights:
    """Probability vector over datasets plus its update constants."""

    weights: dict[str, float]
    eta: float = 0.1
    smoothing: float = 0.1

    def __post_init__(self):
        if self.eta <= 0:
            raise DataError("step size eta must be positive")
        if not 0 <= self.smoothing <= 1:
            raise DataError("smoothing must lie in [0, 1]")
        self._check_simplex()

    def _check_simplex(self):
        vals = np.array(list(self.weights.values()))
        if np.any(vals < 0) or abs(vals.sum() - 1.0) > 1e-12:
            raise DataError("weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, dataset_ids, eta: float = 0.1, smoothing: float = 0.1) -> "GroupWeights":
        ids = list(dataset_ids)
        if not ids:
            raise DataError("need at least one dataset")
        return cls(weights={d: 1.0 / len(ids) for d in ids}, eta=eta, smoothing=smoothing)

    def as_arrays(self) -> tuple[list[str], np.ndarray]:
        ids = list(self.weights)
        return ids, np.array([self.weights[d] for d in ids])


@dataclass(frozen=True)
class ReferenceLosses:
    losses: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.losses.items():
            if not np.isfinite(val):
                raise DataError(f"reference loss for {key!r} is not finite")


def _gaussian_nll(errors: np.ndarray) -> float:
    var = max(float(np.mean(errors ** 2)), 1e-12)
    return 0.5 * float(np.log(2 * np.pi * var)) + 0.5


def fit_reference(dataset: list[TimeSeries], model_kind: str = "ar",
                  horizon: int = 8, loss: str = "mse") -> float:
    """Held-out forecast loss of a small baseline fitted per series.

    The last ``horizon`` points of each series are held out. ``loss`` is
    "mse" or "gaussian_nll" (the latter scores the point forecast under a
    Gaussian with the empirical error variance, making it comparable to a
    probabilistic trainer's NLL up to that approximation).
    """
    if not dataset:
        raise DataError("dataset is empty")
    if loss not in ("mse", "gaussian_nll"):
        raise DataError(f"unknown loss {loss!r}")
    all_errors = []
    for series in dataset:
        values = np.asarray(series.values, dtype=float)
        h = min(horizon, max(1, len(values) // 4))
        train, test = values[:-h], values[-h:]
        if train.size == 0:
            train, test = values, values[-1:]
        period = series.freq.steps_per_cycle
        try:
            pred = _reference_predict(model_kind, train, period, test.size)
        except DataError:
            log.warning("fit_reference: %s baseline failed on %r, falling back to naive",
                        model_kind, series.id)
            pred = naive_forecast(train, test.size)
        all_errors.append(test - pred)
    errors = np.concatenate(all_errors)
    if loss == "mse":
        return float(np.mean(errors ** 2))
    return _gaussian_nll(errors)


def _reference_predict(model_kind: str, train: np.ndarray, period: int, horizon: int) -> np.ndarray:
    if model_kind == "naive":
        return naive_forecast(train, horizon)
    if model_kind == "seasonal_naive":
        if train.size < period:
            return naive_forecast(train, horizon)
        return seasonal_naive(train, period, horizon)
    if model_kind == "ses":
        return ses_forecast(train, 0.3, horizon)
    if model_kind == "ar":
        p = min(period, max(1, (train.size - 1) // 2))
        model = ar_fit(train, p)
        return ar_predict(model, train, horizon)
    raise DataError(f"unknown baseline kind {model_kind!r}")


def excess_loss(current: dict[str, float], reference: ReferenceLosses) -> dict[str, float]:
    """Per-dataset excess over the reference, clamped at zero."""
    if set(current) != set(reference.losses):
        raise DataError("current and reference losses must share dataset keys")
    return {k: max(current[k] - reference.losses[k], 0.0) for k in current}


def update_weights(w: GroupWeights, excess: dict[str, float]) -> GroupWeights:
    """Exponentiated-gradient step followed by uniform smoothing.

    w' propto w * exp(eta * excess), renormalized;
    w'' = (1 - smoothing) * w' + smoothing * uniform.
    """
    if set(excess) != set(w.weights):
        raise DataError("excess keys must match weight keys")
    for key, val in excess.items():
        if not np.isfinite(val):
            raise DataError(f"excess loss for {key!r} is not finite")
    ids, vals = w.as_arrays()
    exc = np.array([excess[d] for d in ids])
    updated = vals * np.exp(w.eta * exc)
    updated = updated / updated.sum()
    uniform = 1.0 / len(ids)
    mixed = (1.0 - w.smoothing) * updated + w.smoothing * uniform
    mixed = mixed / mixed.sum()
    return GroupWeights(weights=dict(zip(ids, mixed)), eta=w.eta, smoothing=w.smoothing)


def sample_batch(datasets: dict[str, list[TimeSeries]], w: GroupWeights,
                 batch_size: int, seed: int, window_len: int | None = None,
                 ) -> list[tuple[str, TimeSeries]]:
    """Draw (dataset id, window) pairs: the dataset categorically by weight,
    the series and window start uniformly within it. Empty datasets are
    resampled."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    ids, probs = w.as_arrays()
    if not any(datasets.get(d) for d in ids):
        raise DataError("all datasets are empty")
    rng = rng_for(seed, "sample_batch")
    out = []
    while len(out) < batch_size:
        d = ids[rng.choice(len(ids), p=probs)]
        pool = datasets.get(d) or []
        if not pool:
            continue
        series = pool[rng.integers(0, len(pool))]
        if window_len is None or len(series) <= window_len:
            window = series
        else:
            start = int(rng.integers(0, len(series) - window_len + 1))
            window = TimeSeries(id=series.id, freq=series.freq,
                                start=series.timestamp_at(start),
                                values=series.values[start:start + window_len])
        out.append((d, window))
    return out
