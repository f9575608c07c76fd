"""Compositional synthetic time-series generator.

Series are built from trend, seasonality and noise components combined
additively or multiplicatively, with optional state transitions realized by
stitching two recipes together. A labeled preset suite probes seven
forecasting skills (trend, seasonality, transitions, entropy, horizons,
long memory, intermittency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .core import Frequency, TimeSeries
from .errors import DataError
from .seeding import rng_for

_MAX_ABS_VALUE = 1e12
_DEFAULT_START = datetime(2020, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class TrendSpec:
    kind: str = "linear"  # linear | exponential
    rate: float = 0.0  # slope (linear) or exponential growth rate per step
    intercept: float = 0.0

    def build(self, length: int) -> np.ndarray:
        t = np.arange(length, dtype=float)
        if self.kind == "linear":
            return self.intercept + self.rate * t
        if self.kind == "exponential":
            peak = abs(self.intercept) * math.exp(max(self.rate * (length - 1), 0.0))
            if peak > _MAX_ABS_VALUE:
                raise DataError("exponential trend exceeds the 1e12 magnitude bound")
            return self.intercept * np.exp(self.rate * t)
        raise DataError(f"unknown trend kind {self.kind!r}")


@dataclass(frozen=True)
class SeasonSpec:
    kind: str = "cosine"  # cosine | random_periodic
    period: int = 12
    amplitude: float = 1.0
    phase: float = 0.0
    template: tuple[float, ...] | None = None  # drawn once per spec when absent

    def __post_init__(self):
        if self.period < 2:
            raise DataError("seasonal period must be >= 2")

    def build(self, length: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(length, dtype=float)
        if self.kind == "cosine":
            return self.amplitude * np.cos(2 * np.pi * t / self.period + self.phase)
        if self.kind == "random_periodic":
            if self.template is not None:
                template = np.asarray(self.template, dtype=float)
                if template.size != self.period:
                    raise DataError("template length must equal period")
            else:
                template = rng.uniform(-1.0, 1.0, size=self.period)
                template = (template - template.mean()) * self.amplitude
            reps = -(-length // self.period)
            return np.tile(template, reps)[:length]
        raise DataError(f"unknown season kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"  # gaussian | red
    sigma: float = 0.0
    ar_coefficient: float = 0.0  # red noise only, in (-1, 1)

    def __post_init__(self):
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise DataError("ar_coefficient must be in (-1, 1)")

    def build(self, length: int, rng: np.random.Generator) -> np.ndarray:
        eps = rng.normal(0.0, self.sigma, size=length) if self.sigma > 0 else np.zeros(length)
        if self.kind == "gaussian":
            return eps
        if self.kind == "red":
            out = np.empty(length)
            prev = 0.0
            for i in range(length):
                prev = self.ar_coefficient * prev + eps[i]
                out[i] = prev
            return out
        raise DataError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    length: int
    trend: TrendSpec = field(default_factory=TrendSpec)
    season: SeasonSpec | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    composition: str = "additive"  # additive | multiplicative
    transition: tuple[int, "SyntheticSpec"] | None = None
    discontinuous: bool = False
    freq: Frequency = field(default_factory=lambda: Frequency("day"))
    id: str = "sim"

    def __post_init__(self):
        if self.length < 1:
            raise DataError("length must be >= 1")
        if self.composition not in ("additive", "multiplicative"):
            raise DataError(f"unknown composition {self.composition!r}")
        if self.transition is not None:
            split, other = self.transition
            if not 0 < split < self.length:
                raise DataError("transition split must lie strictly inside the series")
            if not isinstance(other, SyntheticSpec):
                raise DataError("transition second element must be a SyntheticSpec")


def _compose(spec: SyntheticSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    trend = spec.trend.build(length)
    season = spec.season.build(length, rng) if spec.season is not None else np.zeros(length)
    noise = spec.noise.build(length, rng)
    if spec.composition == "additive":
        return trend + season + noise
    # multiplicative: seasonal swing is taken relative to the local trend level
    season_frac = season / np.maximum(np.abs(trend), 1.0)
    return trend * (1.0 + season_frac) * (1.0 + noise)


def _generate_values(spec: SyntheticSpec, seed: int) -> np.ndarray:
    if spec.transition is None:
        return _compose(spec, spec.length, rng_for(seed, "sim", spec.id))
    split, other = spec.transition
    head = _compose(spec, split, rng_for(seed, "sim", spec.id, "head"))
    # the tail spec's own length is ignored; it fills the remainder
    tail_spec = replace(other, length=spec.length - split, id=f"{spec.id}/tail")
    tail = _generate_values(tail_spec, seed)
    if not spec.discontinuous:
        tail = tail + (head[-1] - tail[0])
    return np.concatenate([head, tail])


def generate(spec: SyntheticSpec, seed: int = 0) -> TimeSeries:
    """Deterministic generation per (spec, seed).

    With a transition, the first segment follows this spec, the rest is
    generated from the second spec and offset so the series stays continuous
    at the splice (unless ``discontinuous``).
    """
    values = _generate_values(spec, seed)
    if not np.all(np.isfinite(values)):
        raise DataError("generated series contains non-finite values")
    return TimeSeries(id=spec.id, freq=spec.freq, start=_DEFAULT_START, values=values)


def intermittent_series(length: int, spike_prob: float = 0.3, scale: float = 1.0,
                        seed: int = 0, id: str = "intermittent",
                        freq: Frequency | None = None) -> TimeSeries:
    """Zero-inflated spikes: Bernoulli(spike_prob) gated exponential values,
    so the long-run fraction of zeros is 1 - spike_prob."""
    rng = rng_for(seed, "intermittent", id)
    gate = rng.random(length) < spike_prob
    spikes = rng.exponential(scale, size=length)
    return TimeSeries(id=id, freq=freq or Frequency("day"), start=_DEFAULT_START,
                      values=np.where(gate, spikes, 0.0))


def _check_keys(data: dict, allowed: set[str], where: str):
    unknown = set(data) - allowed
    if unknown:
        raise DataError(f"unknown keys {sorted(unknown)} in {where}")


def spec_from_dict(data: dict) -> SyntheticSpec:
    """Build a SyntheticSpec from its JSON form (field-for-field mirror)."""
    _check_keys(data, {"length", "trend", "season", "noise", "composition",
                       "transition", "discontinuous", "freq", "period", "id"}, "spec")
    trend_d = data.get("trend", {})
    _check_keys(trend_d, {"kind", "rate", "intercept"}, "trend")
    trend = TrendSpec(**trend_d)
    season = None
    if data.get("season") is not None:
        season_d = data["season"]
        _check_keys(season_d, {"kind", "period", "amplitude", "phase", "template"}, "season")
        if season_d.get("template") is not None:
            season_d = dict(season_d, template=tuple(season_d["template"]))
        season = SeasonSpec(**season_d)
    noise_d = data.get("noise", {})
    _check_keys(noise_d, {"kind", "sigma", "ar_coefficient"}, "noise")
    noise = NoiseSpec(**noise_d)
    transition = None
    if data.get("transition") is not None:
        trans = data["transition"]
        _check_keys(trans, {"split", "spec"}, "transition")
        transition = (int(trans["split"]), spec_from_dict(trans["spec"]))
    freq = Frequency(data.get("freq", "day"), int(data.get("period", 0)))
    return SyntheticSpec(length=int(data["length"]), trend=trend, season=season,
                         noise=noise, composition=data.get("composition", "additive"),
                         transition=transition,
                         discontinuous=bool(data.get("discontinuous", False)),
                         freq=freq, id=str(data.get("id", "sim")))


def spec_to_dict(spec: SyntheticSpec) -> dict:
    out: dict = {
        "length": spec.length, "id": spec.id,
        "trend": {"kind": spec.trend.kind, "rate": spec.trend.rate,
                  "intercept": spec.trend.intercept},
        "noise": {"kind": spec.noise.kind, "sigma": spec.noise.sigma,
                  "ar_coefficient": spec.noise.ar_coefficient},
        "composition": spec.composition, "discontinuous": spec.discontinuous,
        "freq": spec.freq.class_, "season": None, "transition": None,
    }
    if spec.season is not None:
        out["season"] = {"kind": spec.season.kind, "period": spec.season.period,
                         "amplitude": spec.season.amplitude, "phase": spec.season.phase,
                         "template": list(spec.season.template) if spec.season.template else None}
    if spec.transition is not None:
        out["transition"] = {"split": spec.transition[0],
                             "spec": spec_to_dict(spec.transition[1])}
    return out


SKILL_NAMES = (
    "trend_sensitivity",
    "seasonality_sensitivity",
    "state_transition_speed",
    "high_entropy_forecasting",
    "short_long_horizon",
    "long_term_memory",
    "intermittent_forecasting",
)


def skill_suite(seed: int = 0, length: int = 240) -> dict[str, list[TimeSeries]]:
    """Deterministic preset series for the seven forecasting skills.

    Each seasonal preset carries its true period in the frequency metadata so
    period-aware members pick it up.
    """
    def spec(period: int = 7, **kw) -> SyntheticSpec:
        kw.setdefault("length", length)
        kw.setdefault("freq", Frequency("day", period))
        return SyntheticSpec(**kw)

    suite: dict[str, list[TimeSeries]] = {}
    suite["trend_sensitivity"] = [
        generate(spec(id="trend/up", trend=TrendSpec("linear", 0.4, 20.0),
                      noise=NoiseSpec("gaussian", 0.3)), seed),
        generate(spec(id="trend/down", trend=TrendSpec("linear", -0.25, 120.0),
                      noise=NoiseSpec("gaussian", 0.3)), seed),
        generate(spec(id="trend/exp", trend=TrendSpec("exponential", 0.008, 10.0),
                      noise=NoiseSpec("gaussian", 0.2)), seed),
    ]
    suite["seasonality_sensitivity"] = [
        generate(spec(12, id="season/cos", trend=TrendSpec("linear", 0.0, 50.0),
                      season=SeasonSpec("cosine", period=12, amplitude=8.0)), seed),
        generate(spec(7, id="season/rand", trend=TrendSpec("linear", 0.0, 40.0),
                      season=SeasonSpec("random_periodic", period=7, amplitude=6.0)), seed),
    ]
    up_tail = SyntheticSpec(length=length, trend=TrendSpec("linear", 0.6, 0.0),
                            season=SeasonSpec("cosine", period=12, amplitude=4.0),
                            noise=NoiseSpec("gaussian", 0.4),
                            freq=Frequency("day", 12), id="transition/tail")
    suite["state_transition_speed"] = [
        generate(spec(12, id="transition/du", trend=TrendSpec("linear", -0.5, 120.0),
                      season=SeasonSpec("cosine", period=12, amplitude=4.0),
                      noise=NoiseSpec("gaussian", 0.4),
                      transition=(length // 2, up_tail)), seed),
    ]
    suite["high_entropy_forecasting"] = [
        generate(spec(id="entropy/white", trend=TrendSpec("linear", 0.0, 30.0),
                      noise=NoiseSpec("gaussian", 5.0)), seed),
        generate(spec(id="entropy/red", trend=TrendSpec("linear", 0.0, 30.0),
                      noise=NoiseSpec("red", 3.0, 0.7)), seed),
    ]
    suite["short_long_horizon"] = [
        generate(spec(24, id="horizon/mixed", trend=TrendSpec("linear", 0.15, 40.0),
                      season=SeasonSpec("cosine", period=24, amplitude=6.0),
                      noise=NoiseSpec("gaussian", 0.5)), seed),
    ]
    suite["long_term_memory"] = [
        generate(spec(96, id="memory/slow", trend=TrendSpec("linear", 0.0, 60.0),
                      season=SeasonSpec("cosine", period=96, amplitude=10.0),
                      noise=NoiseSpec("gaussian", 0.3)), seed),
    ]
    suite["intermittent_forecasting"] = [
        intermittent_series(length, spike_prob=0.3, scale=1.0, seed=seed),
    ]
    assert tuple(suite) == SKILL_NAMES
    return suite
