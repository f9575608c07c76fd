"""Canonical time-series data model, ingestion, calendar features and normalization.

A series is univariate, regularly sampled and strictly finite. On disk the
canonical format is JSONL (one series per line); long-format CSV is accepted
as a convenience and converted on ingestion.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import DataError, EmptyInputError, IngestError

FREQ_CLASSES = ("minute", "hour", "day", "week", "month", "quarter")

# Default dominant seasonal period per frequency class. Overridable per series
# via the optional "period" field.
DEFAULT_PERIODS = {
    "minute": 1440,
    "hour": 24,
    "day": 7,
    "week": 52,
    "month": 12,
    "quarter": 4,
}

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Frequency:
    """Sampling frequency class plus its dominant seasonal period in steps."""

    class_: str
    steps_per_cycle: int = 0

    def __post_init__(self):
        if self.class_ not in FREQ_CLASSES:
            raise DataError(f"unknown frequency class {self.class_!r}")
        if self.steps_per_cycle == 0:
            object.__setattr__(self, "steps_per_cycle", DEFAULT_PERIODS[self.class_])
        if self.steps_per_cycle < 1:
            raise DataError("steps_per_cycle must be >= 1")

    @property
    def index(self) -> int:
        """Stable integer id of the class, used by embedding tables."""
        return FREQ_CLASSES.index(self.class_)


@dataclass(frozen=True)
class TimeSeries:
    """A univariate series: id, frequency, UTC start timestamp and finite values."""

    id: str
    freq: Frequency
    start: datetime
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 1:
            raise DataError(f"series {self.id!r}: values must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"series {self.id!r}: non-finite values")
        if self.start.tzinfo is None:
            object.__setattr__(self, "start", self.start.replace(tzinfo=timezone.utc))
        else:
            object.__setattr__(self, "start", self.start.astimezone(timezone.utc))

    def __len__(self) -> int:
        return int(self.values.size)

    def with_values(self, values, id: str | None = None, freq: Frequency | None = None) -> "TimeSeries":
        return replace(self, values=np.asarray(values, dtype=float),
                       id=self.id if id is None else id,
                       freq=self.freq if freq is None else freq)

    def timestamp_at(self, index: int) -> datetime:
        return timestamp_at(self.start, self.freq, index)


@dataclass(frozen=True)
class CalendarFeatures:
    day_of_week: int
    day_of_month: int
    month: int
    fraction_of_cycle: float

    def as_vector(self) -> np.ndarray:
        """Scaled feature vector used by embedding layers (each entry in [0,1])."""
        return np.array([
            self.day_of_week / 6.0,
            (self.day_of_month - 1) / 30.0,
            (self.month - 1) / 11.0,
            self.fraction_of_cycle,
        ])


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def _add_months(ts: datetime, months: int) -> datetime:
    """Calendar month arithmetic; day of month clamps to the target month length."""
    y, m = divmod(ts.year * 12 + (ts.month - 1) + months, 12)
    # days in target month
    if m == 11:
        nxt = datetime(y + 1, 1, 1, tzinfo=timezone.utc)
    else:
        nxt = datetime(y, m + 2, 1, tzinfo=timezone.utc)
    last_day = (nxt - timedelta(days=1)).day
    return ts.replace(year=y, month=m + 1, day=min(ts.day, last_day))


def timestamp_at(start: datetime, freq: Frequency, index: int) -> datetime:
    """Timestamp implied by start + index steps. Negative indices are allowed
    (used for positions padded before the series start)."""
    c = freq.class_
    if c == "minute":
        return start + timedelta(minutes=index)
    if c == "hour":
        return start + timedelta(hours=index)
    if c == "day":
        return start + timedelta(days=index)
    if c == "week":
        return start + timedelta(weeks=index)
    if c == "month":
        return _add_months(start, index)
    return _add_months(start, 3 * index)  # quarter


def calendar_at(start: datetime, freq: Frequency, index: int) -> CalendarFeatures:
    """Calendar features of position ``index``; no range check (any int is valid)."""
    ts = timestamp_at(start, freq, index)
    period = freq.steps_per_cycle
    return CalendarFeatures(
        day_of_week=ts.weekday(),
        day_of_month=ts.day,
        month=ts.month,
        fraction_of_cycle=(index % period) / period,
    )


def calendar_features(series: TimeSeries, index: int) -> CalendarFeatures:
    """Calendar features at a position of the series (proleptic Gregorian)."""
    if not 0 <= index < len(series):
        raise DataError(f"index {index} out of range for series of length {len(series)}")
    return calendar_at(series.start, series.freq, index)


def normalize(values) -> tuple[np.ndarray, NormStats]:
    """Center and scale by the population standard deviation (floored at 1e-8)."""
    vals = np.asarray(values, dtype=float)
    mean = float(np.mean(vals))
    std = float(np.std(vals))
    std = max(std, STD_FLOOR)
    return (vals - mean) / std, NormStats(mean=mean, std=std)


def denormalize(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=float) * stats.std + stats.mean


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _format_ts(ts: datetime) -> str:
    s = ts.astimezone(timezone.utc).isoformat()
    return s.replace("+00:00", "Z")


def _parse_ts(text: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def series_to_record(series: TimeSeries) -> dict:
    rec = {
        "id": series.id,
        "freq": series.freq.class_,
        "start": _format_ts(series.start),
        "values": [float(v) for v in series.values],
    }
    if series.freq.steps_per_cycle != DEFAULT_PERIODS[series.freq.class_]:
        rec["period"] = series.freq.steps_per_cycle
    return rec


def series_from_record(rec: dict) -> TimeSeries:
    allowed = {"id", "freq", "start", "values", "period"}
    unknown = set(rec) - allowed
    if unknown:
        raise DataError(f"unknown keys {sorted(unknown)}")
    for key in ("id", "freq", "start", "values"):
        if key not in rec:
            raise DataError(f"missing key {key!r}")
    values = rec["values"]
    if not isinstance(values, list) or not values:
        raise DataError("values must be a non-empty array")
    for v in values:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise DataError(f"non-finite or non-numeric value {v!r}")
    freq = Frequency(rec["freq"], int(rec.get("period", 0)))
    return TimeSeries(id=str(rec["id"]), freq=freq, start=_parse_ts(rec["start"]),
                      values=np.array(values, dtype=float))


def write_jsonl(series_list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in series_list:
            fh.write(json.dumps(series_to_record(s), sort_keys=True, allow_nan=False))
            fh.write("\n")


def _ingest_jsonl(path, lenient: bool):
    out, errors = [], []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        try:
            out.append(series_from_record(rec))
        except DataError as exc:
            errors.append(f"line {lineno}: {exc}")
    if errors and not lenient:
        raise IngestError(errors)
    return out, errors


def _infer_freq_from_deltas(timestamps: list[datetime], sid: str) -> Frequency:
    deltas = [b - a for a, b in zip(timestamps, timestamps[1:])]
    if not deltas:
        return Frequency("day")
    fixed = {
        timedelta(minutes=1): "minute",
        timedelta(hours=1): "hour",
        timedelta(days=1): "day",
        timedelta(weeks=1): "week",
    }
    if deltas[0] in fixed and all(d == deltas[0] for d in deltas):
        return Frequency(fixed[deltas[0]])
    # month or quarter spacing: consecutive month counts must be constant
    months = []
    for a, b in zip(timestamps, timestamps[1:]):
        months.append((b.year - a.year) * 12 + (b.month - a.month))
    if months and all(m == months[0] for m in months) and months[0] in (1, 3):
        return Frequency("month" if months[0] == 1 else "quarter")
    raise DataError(f"series {sid!r}: timestamps are not regular at a supported frequency")


def _ingest_csv(path, lenient: bool):
    groups: dict[str, list[tuple[datetime, float]]] = {}
    errors = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"empty file: {path}")
        if [h.strip().lower() for h in header] != ["id", "timestamp", "value"]:
            raise DataError(f"CSV header must be id,timestamp,value (got {header})")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 3:
                    raise DataError(f"expected 3 columns, got {len(row)}")
                sid, ts_text, val_text = row
                val = float(val_text)
                if not math.isfinite(val):
                    raise DataError(f"non-finite value {val_text!r}")
                groups.setdefault(sid, []).append((_parse_ts(ts_text), val))
            except (DataError, ValueError) as exc:
                errors.append(f"line {lineno}: {exc}")
    out = []
    for sid, rows in groups.items():
        timestamps = [r[0] for r in rows]
        if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
            errors.append(f"series {sid!r}: timestamps not strictly increasing")
            continue
        try:
            freq = _infer_freq_from_deltas(timestamps, sid)
            out.append(TimeSeries(id=sid, freq=freq, start=timestamps[0],
                                  values=np.array([r[1] for r in rows])))
        except DataError as exc:
            errors.append(str(exc))
    if errors and not lenient:
        raise IngestError(errors)
    return out, errors


def ingest(path, format: str = "jsonl", lenient: bool = False) -> list[TimeSeries]:
    """Read series from a JSONL or long-format CSV file.

    Every returned series satisfies the type invariants (finite values, regular
    spacing). Records violating them fail ingestion with an error naming the
    line; with ``lenient=True`` bad records are skipped instead.
    """
    if format == "jsonl":
        out, _ = _ingest_jsonl(path, lenient)
    elif format == "csv":
        out, _ = _ingest_csv(path, lenient)
    else:
        raise DataError(f"unknown format {format!r}")
    if not out:
        raise EmptyInputError(f"no usable series in {path}")
    return out
