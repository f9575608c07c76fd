"""Forecast metrics, rolling-origin benchmark harness and the skill probe.

The headline metric is forecast accuracy FA = 1 - WMAPE with true values as
weights. FA is always derived from the same WMAPE float, so the identity is
bit-exact everywhere it appears.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import TimeSeries
from .errors import DataError
from .simulate import SKILL_NAMES, skill_suite

log = logging.getLogger(__name__)


def mape(truth, forecast) -> float:
    """Mean absolute percentage error over nonzero-truth points (zero-truth
    points are skipped; see ``mape_with_skips`` for the count)."""
    value, _ = mape_with_skips(truth, forecast)
    return value


def mape_with_skips(truth, forecast) -> tuple[float, int]:
    y = np.asarray(truth, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if y.size != f.size or y.size == 0:
        raise DataError("truth and forecast must share a positive length")
    nz = y != 0
    skipped = int(y.size - nz.sum())
    if not nz.any():
        raise DataError("mape undefined: all truth values are zero")
    return float(np.mean(np.abs((y[nz] - f[nz]) / y[nz]))), skipped


def wmape(truth, forecast) -> float:
    """Sum of absolute errors over the sum of absolute true values."""
    y = np.asarray(truth, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if y.size != f.size or y.size == 0:
        raise DataError("truth and forecast must share a positive length")
    denom = np.sum(np.abs(y))
    if denom == 0:
        raise DataError("wmape undefined: truth is identically zero")
    return float(np.sum(np.abs(y - f)) / denom)


def fa(truth, forecast) -> float:
    """Forecast accuracy: exactly 1 - wmape (same float, bit for bit)."""
    return 1.0 - wmape(truth, forecast)


@dataclass
class MetricRow:
    model: str
    dataset: str
    windows: int
    mape: float | None
    wmape: float
    mean_nll: float | None = None
    zero_truth_points: int = 0

    @property
    def fa(self) -> float:
        return 1.0 - self.wmape

    @property
    def one_minus_mape(self) -> float | None:
        return None if self.mape is None else 1.0 - self.mape


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def row(self, model: str, dataset: str) -> MetricRow:
        for r in self.rows:
            if r.model == model and r.dataset == dataset:
                return r
        raise KeyError((model, dataset))

    def to_records(self) -> list[dict]:
        return [{
            "model": r.model, "dataset": r.dataset, "windows": r.windows,
            "mape": r.mape, "one_minus_mape": r.one_minus_mape,
            "wmape": r.wmape, "fa": r.fa, "mean_nll": r.mean_nll,
            "zero_truth_points": r.zero_truth_points,
        } for r in self.rows]


def iter_windows(series: TimeSeries, horizon: int, n_origins: int,
                 min_history: int = 8):
    """Expanding-window splits: the last ``n_origins`` forecast origins spaced
    ``horizon`` apart. Yields (history values, truth values) pairs."""
    values = np.asarray(series.values, dtype=float)
    t_len = values.size
    first_origin = t_len - horizon * n_origins
    if first_origin < min_history:
        return
    for j in range(n_origins):
        origin = first_origin + j * horizon
        yield values[:origin], values[origin:origin + horizon]


def _series_wmape_parts(model, series: TimeSeries, horizon: int, n_origins: int,
                        min_history: int):
    """Per-window metric pieces for one (model, series) pair. The history is
    passed as a TimeSeries so calendar-aware members keep their timestamps;
    statistical members read just the values."""
    window_wmapes, window_mapes, window_nlls = [], [], []
    skipped = 0
    has_nll = hasattr(model, "predictive_nll")
    for history, truth in iter_windows(series, horizon, n_origins, min_history):
        hist_series = series.with_values(history)
        model.fit(hist_series)
        pred = np.asarray(model.predict(hist_series, truth.size), dtype=float)
        if np.sum(np.abs(truth)) > 0:
            window_wmapes.append(wmape(truth, pred))
        if np.any(truth != 0):
            m, sk = mape_with_skips(truth, pred)
            window_mapes.append(m)
            skipped += sk
        else:
            skipped += truth.size
        if has_nll:
            window_nlls.append(model.predictive_nll(hist_series, truth))
    return window_wmapes, window_mapes, window_nlls, skipped


def rolling_benchmark(models, datasets: dict[str, list[TimeSeries]], horizon: int,
                      n_origins: int = 1, min_history: int = 8) -> MetricReport:
    """Expanding-window evaluation; aggregation is mean over windows, then
    over series within a dataset. Series too short for the requested origins
    are skipped with a log message."""
    if horizon < 1 or n_origins < 1:
        raise DataError("horizon and n_origins must be >= 1")
    report = MetricReport()
    for ds_name, series_list in datasets.items():
        for model in models:
            series_wmapes, series_mapes, series_nlls = [], [], []
            windows = 0
            skipped_points = 0
            for series in series_list:
                ws, ms, nlls, sk = _series_wmape_parts(model, series, horizon,
                                                       n_origins, min_history)
                if not ws:
                    log.info("skipping %r for %s: too short or zero truth", series.id, model.name)
                    continue
                windows += len(ws)
                skipped_points += sk
                series_wmapes.append(float(np.mean(ws)))
                if ms:
                    series_mapes.append(float(np.mean(ms)))
                if nlls:
                    series_nlls.append(float(np.mean(nlls)))
            if not series_wmapes:
                continue
            report.rows.append(MetricRow(
                model=model.name, dataset=ds_name, windows=windows,
                mape=float(np.mean(series_mapes)) if series_mapes else None,
                wmape=float(np.mean(series_wmapes)),
                mean_nll=float(np.mean(series_nlls)) if series_nlls else None,
                zero_truth_points=skipped_points,
            ))
    return report


def skill_report(model, seed: int = 0, horizon: int = 12, n_origins: int = 2) -> list[dict]:
    """FA of one model on each of the seven skill presets; exactly one row per
    skill, in the canonical order."""
    suite = skill_suite(seed)
    rows = []
    for skill in SKILL_NAMES:
        report = rolling_benchmark([model], {skill: suite[skill]}, horizon, n_origins)
        try:
            row = report.row(model.name, skill)
            rows.append({"skill": skill, "fa": row.fa, "wmape": row.wmape,
                         "mape": row.mape, "windows": row.windows})
        except KeyError:
            rows.append({"skill": skill, "fa": None, "wmape": None,
                         "mape": None, "windows": 0})
    return rows
