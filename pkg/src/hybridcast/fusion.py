"""Model fusion: pool, profiling, averaging/linear/router combination and the
large/small confidence cascade with distillation.

The router maps a series embedding to simplex weights over pool members
through a small one-hidden-layer network; the classifier contract (simplex
weights from embeddings) is architecture independent, so a heavier classifier
can be slotted in behind the same interface. The cascade routes each sample
to a small model s1, its distilled copy s2 or the large model by comparing
confidence scores against thresholds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import (LinearARModel, ar_fit, ar_predict, as_values,
                        baseline_confidence, residual_confidence)
from .core import TimeSeries
from .decomp import stl_decompose
from .errors import DataError
from .evaluate import iter_windows, wmape
from .seeding import rng_for

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Statistical feature embedder (fallback when no encoder embeddings exist)
# ---------------------------------------------------------------------------

def stat_features(series: TimeSeries, scale_free: bool = True) -> np.ndarray:
    """Six summary features: mean, std, lag-1 autocorrelation, fitted slope,
    seasonal strength and spectral entropy.

    With ``scale_free`` the scale-carrying features (mean, std, slope) are
    divided by the robust scale of the series, making every feature invariant
    under positive rescaling.
    """
    v = np.asarray(series.values, dtype=float)
    n = v.size
    mean = float(np.mean(v))
    std = float(np.std(v))
    if n > 1 and std > 1e-12:
        x0, x1 = v[:-1] - np.mean(v[:-1]), v[1:] - np.mean(v[1:])
        denom = np.sqrt(np.sum(x0 * x0) * np.sum(x1 * x1))
        lag1 = float(np.sum(x0 * x1) / denom) if denom > 0 else 0.0
    else:
        lag1 = 0.0
    t = np.arange(n, dtype=float)
    slope = float(np.polyfit(t, v, 1)[0]) if n > 1 else 0.0
    period = series.freq.steps_per_cycle
    seasonal_strength = 0.0
    if period >= 2 and n >= 2 * period and std > 1e-12:
        dec = stl_decompose(v, period=period)
        var_sr = float(np.var(dec.seasonal + dec.residual))
        if var_sr > 1e-12:
            seasonal_strength = max(0.0, 1.0 - float(np.var(dec.residual)) / var_sr)
    entropy = 0.0
    if n >= 4 and std > 1e-12:
        spec = np.abs(np.fft.rfft(v - mean)[1:]) ** 2
        total = spec.sum()
        if total > 0 and spec.size > 1:
            p = spec / total
            p = p[p > 0]
            entropy = float(-(p * np.log(p)).sum() / np.log(spec.size))
    if scale_free:
        mad = float(np.median(np.abs(v - np.median(v))))
        s = mad + 1e-8
        return np.array([mean / s, std / s, lag1, slope / s, seasonal_strength, entropy])
    return np.array([mean, std, lag1, slope, seasonal_strength, entropy])


class StatFeatureEmbedder:
    """Series -> feature vector callable for router training."""

    dim = 6

    def __init__(self, scale_free: bool = True):
        self.scale_free = scale_free

    def __call__(self, series: TimeSeries) -> np.ndarray:
        return stat_features(series, scale_free=self.scale_free)


class TsfmEmbedder:
    """Embeds a series with a trained forecaster's encoder states."""

    def __init__(self, params):
        self.params = params
        self.dim = params.config.d_model

    def __call__(self, series: TimeSeries) -> np.ndarray:
        from .tsfm.forecaster import embed_series
        return embed_series(self.params, series)


# ---------------------------------------------------------------------------
# Pool and profiling
# ---------------------------------------------------------------------------

@dataclass
class ModelPool:
    """Ordered registry of named forecasters; weight vectors index by it."""

    members: list[tuple[str, object]]
    metadata: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        names = [n for n, _ in self.members]
        if len(set(names)) != len(names):
            raise DataError("pool member names must be unique")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.members]

    @property
    def forecasters(self) -> list[object]:
        return [m for _, m in self.members]

    def require_fusible(self):
        if len(self.members) < 2:
            raise DataError("fusion needs at least 2 pool members")

    def predict_all(self, history, horizon: int) -> np.ndarray:
        """(K, horizon) matrix of member point forecasts."""
        preds = []
        for name, member in self.members:
            member.fit(history)
            preds.append(np.asarray(member.predict(history, horizon), dtype=float))
        return np.stack(preds)


@dataclass
class ProfileEntry:
    fa: float
    wmape: float
    mape: float | None
    mean_confidence: float
    windows: int


@dataclass
class ModelProfile:
    entries: dict[tuple[str, str], ProfileEntry] = field(default_factory=dict)

    def ranking(self, dataset: str) -> list[str]:
        rows = [(name, e) for (name, d), e in self.entries.items() if d == dataset]
        return [name for name, e in sorted(rows, key=lambda kv: -kv[1].fa)]

    def best_member(self, dataset: str) -> str:
        ranking = self.ranking(dataset)
        if not ranking:
            raise KeyError(dataset)
        return ranking[0]

    def to_records(self) -> list[dict]:
        return [{
            "model": name, "dataset": ds, "fa": e.fa, "wmape": e.wmape,
            "mape": e.mape, "mean_confidence": e.mean_confidence, "windows": e.windows,
        } for (name, ds), e in sorted(self.entries.items())]


def profile(pool: ModelPool, datasets: dict[str, list[TimeSeries]], horizon: int,
            n_origins: int = 1, min_history: int = 8) -> ModelProfile:
    """Held-out rolling-origin portrait of every member on every dataset."""
    out = ModelProfile()
    for ds_name, series_list in datasets.items():
        for name, member in pool.members:
            wmapes, mapes, confs = [], [], []
            windows = 0
            for series in series_list:
                per_series_w, per_series_m = [], []
                for history, truth in iter_windows(series, horizon, n_origins, min_history):
                    hist = series.with_values(history)
                    member.fit(hist)
                    pred = np.asarray(member.predict(hist, truth.size), dtype=float)
                    if np.sum(np.abs(truth)) == 0:
                        continue
                    per_series_w.append(wmape(truth, pred))
                    nz = truth != 0
                    per_series_m.append(float(np.mean(np.abs((truth[nz] - pred[nz]) / truth[nz]))))
                    confs.append(float(member.confidence(hist, truth.size)))
                    windows += 1
                if per_series_w:
                    wmapes.append(float(np.mean(per_series_w)))
                    mapes.append(float(np.mean(per_series_m)))
            if not wmapes:
                log.warning("profile: dataset %r too short for %s, skipped", ds_name, name)
                continue
            mean_wmape = float(np.mean(wmapes))
            out.entries[(name, ds_name)] = ProfileEntry(
                fa=1.0 - mean_wmape, wmape=mean_wmape,
                mape=float(np.mean(mapes)) if mapes else None,
                mean_confidence=float(np.mean(confs)) if confs else 0.0,
                windows=windows)
    return out


# ---------------------------------------------------------------------------
# Direct averaging and learned linear fusion
# ---------------------------------------------------------------------------

def fuse_average(forecasts) -> np.ndarray:
    """Elementwise mean of K equal-length point forecasts."""
    mat = np.asarray(forecasts, dtype=float)
    if mat.ndim != 2:
        lengths = {np.asarray(f).shape for f in forecasts}
        raise DataError(f"forecast lengths differ: {lengths}")
    return mat.mean(axis=0)


@dataclass
class LinearFusion:
    weights: np.ndarray
    intercept: float
    ridge_fallback: bool = False

    def apply(self, forecasts) -> np.ndarray:
        mat = np.asarray(forecasts, dtype=float)
        return self.weights @ mat + self.intercept


def fit_linear_fusion(forecast_matrix, truths) -> LinearFusion:
    """Least-squares weights (unconstrained, may be negative) plus intercept.

    ``forecast_matrix`` stacks one row per evaluated point with K member
    columns. Rank-deficient designs fall back to a tiny ridge, flagged.
    """
    f_mat = np.asarray(forecast_matrix, dtype=float)
    y = np.asarray(truths, dtype=float)
    if f_mat.ndim != 2 or f_mat.shape[0] != y.size:
        raise DataError("forecast matrix rows must match truth length")
    n, k = f_mat.shape
    if n < k + 1:
        raise DataError(f"need at least K+1={k + 1} rows, got {n}")
    design = np.concatenate([f_mat, np.ones((n, 1))], axis=1)
    gram = design.T @ design
    rhs = design.T @ y
    ridge = False
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        gram = gram + 1e-6 * np.eye(k + 1)
        ridge = True
        log.warning("fit_linear_fusion: rank-deficient design, ridge fallback")
    theta = np.linalg.solve(gram, rhs)
    return LinearFusion(weights=theta[:k], intercept=float(theta[k]), ridge_fallback=ridge)


# ---------------------------------------------------------------------------
# Router fusion
# ---------------------------------------------------------------------------

@dataclass
class RouterParams:
    """One-hidden-layer softmax classifier over pool members."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    feat_mean: np.ndarray
    feat_std: np.ndarray
    member_names: list[str]

    @classmethod
    def zeros(cls, feature_dim: int, hidden: int, member_names: list[str]) -> "RouterParams":
        k = len(member_names)
        return cls(w1=np.zeros((feature_dim, hidden)), b1=np.zeros(hidden),
                   w2=np.zeros((hidden, k)), b2=np.zeros(k),
                   feat_mean=np.zeros(feature_dim), feat_std=np.ones(feature_dim),
                   member_names=list(member_names))

    def _normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feat_mean) / self.feat_std

    def weights_for(self, features) -> np.ndarray:
        """Simplex weight vector over the pool for one feature vector."""
        x = self._normalize(np.asarray(features, dtype=float))
        u = np.tanh(x @ self.w1 + self.b1)
        logits = u @ self.w2 + self.b2
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class _RouterWindow:
    features: np.ndarray
    member_forecasts: np.ndarray  # (K, horizon)
    truth: np.ndarray


def _router_windows(pool: ModelPool, embedder, datasets, horizon, n_origins,
                    min_history) -> list[_RouterWindow]:
    windows = []
    for ds_name in sorted(datasets):
        for series in datasets[ds_name]:
            for history, truth in iter_windows(series, horizon, n_origins, min_history):
                hist = series.with_values(history)
                if np.sum(np.abs(truth)) == 0:
                    continue
                windows.append(_RouterWindow(
                    features=np.asarray(embedder(hist), dtype=float),
                    member_forecasts=pool.predict_all(hist, truth.size),
                    truth=truth))
    return windows


class _DictAdam:
    def __init__(self, arrays: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - 0.9 ** self.t
        b2c = 1.0 - 0.999 ** self.t
        for k, g in grads.items():
            self.m[k] = 0.9 * self.m[k] + 0.1 * g
            self.v[k] = 0.999 * self.v[k] + 0.001 * g * g
            arrays[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + 1e-8)


def train_router(pool: ModelPool, embedder, datasets: dict[str, list[TimeSeries]],
                 mode: str = "best_member_ce", seed: int = 0, horizon: int = 8,
                 n_origins: int = 2, hidden: int = 32, steps: int = 400,
                 lr: float = 0.02, min_history: int = 8) -> RouterParams:
    """Fit the routing classifier.

    "best_member_ce" trains cross-entropy against the per-window argmin-error
    member; "end_to_end" minimizes the error of the softmax-combined forecast
    directly. Both run full-batch and are deterministic per seed.
    """
    pool.require_fusible()
    if mode not in ("best_member_ce", "end_to_end"):
        raise DataError(f"unknown router mode {mode!r}")
    windows = _router_windows(pool, embedder, datasets, horizon, n_origins, min_history)
    if not windows:
        raise DataError("no training windows for the router")
    k = len(pool.members)
    feats = np.stack([w.features for w in windows])
    feat_mean = feats.mean(axis=0)
    feat_std = np.maximum(feats.std(axis=0), 1e-8)
    x = (feats - feat_mean) / feat_std
    labels = np.array([int(np.argmin([wmape(w.truth, f) for f in w.member_forecasts]))
                       for w in windows])
    rng = rng_for(seed, "router-init")
    arrays = {
        "w1": rng.normal(0.0, 0.2, size=(x.shape[1], hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 0.2, size=(hidden, k)),
        "b2": np.zeros(k),
    }
    optimizer = _DictAdam(arrays, lr)
    n = x.shape[0]
    fmat = np.stack([w.member_forecasts for w in windows])  # (n, K, h)
    truths = np.stack([w.truth for w in windows])  # (n, h)
    # normalize the end-to-end objective per window so large-scale series do
    # not dominate
    truth_scale = np.maximum(np.mean(np.abs(truths), axis=1, keepdims=True), 1e-8)
    for _ in range(steps):
        z1 = x @ arrays["w1"] + arrays["b1"]
        u = np.tanh(z1)
        logits = u @ arrays["w2"] + arrays["b2"]
        lmax = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - lmax)
        probs = e / e.sum(axis=1, keepdims=True)
        if mode == "best_member_ce":
            dlogits = probs.copy()
            dlogits[np.arange(n), labels] -= 1.0
            dlogits /= n
        else:
            combined = np.einsum("nk,nkh->nh", probs, fmat)
            err = (combined - truths) / truth_scale
            dcombined = 2.0 * err / (err.shape[1] * n) / truth_scale
            dprobs = np.einsum("nh,nkh->nk", dcombined, fmat)
            dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
        grads = {
            "w2": u.T @ dlogits,
            "b2": dlogits.sum(axis=0),
        }
        du = dlogits @ arrays["w2"].T
        dz1 = du * (1.0 - u * u)
        grads["w1"] = x.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        optimizer.step(arrays, grads)
    return RouterParams(w1=arrays["w1"], b1=arrays["b1"], w2=arrays["w2"],
                        b2=arrays["b2"], feat_mean=feat_mean, feat_std=feat_std,
                        member_names=pool.names)


def route_fuse(router: RouterParams, embedder, series: TimeSeries, pool: ModelPool,
               horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted combination of member forecasts; returns the forecast
    plus the weight vector for audit."""
    if router.member_names != pool.names:
        raise DataError("router was trained for a different pool ordering")
    weights = router.weights_for(embedder(series))
    members = pool.predict_all(series, horizon)
    return weights @ members, weights


# ---------------------------------------------------------------------------
# Large/small coordination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoordinationConfig:
    tau1: float = 0.6  # small-model easy threshold
    tau2: float = 0.6  # large-model challenging threshold
    lam: float = 1.0  # distillation balance

    def __post_init__(self):
        if not 0.0 <= self.tau1 <= 1.0 or not 0.0 <= self.tau2 <= 1.0:
            raise DataError("thresholds must lie in [0, 1]")
        if self.lam < 0:
            raise DataError("lambda must be nonnegative")


@dataclass
class CoordinationResult:
    s2: LinearARModel
    n_easy: int
    n_hard: int
    n_challenging: int
    loss_trajectory: list[float]
    notice: str | None = None


def _ar_rollout_jacobian(coef: np.ndarray, intercept: float, history: np.ndarray,
                         horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Recursive AR forecast plus its Jacobian w.r.t. (coef..., intercept)."""
    p = coef.size
    buf = list(history[-p:])
    dbuf = [np.zeros(p + 1) for _ in range(p)]
    preds = np.empty(horizon)
    jac = np.empty((horizon, p + 1))
    for t in range(horizon):
        lags = np.array(buf[::-1], dtype=float)
        dval = np.zeros(p + 1)
        dval[:p] = lags
        dval[p] = 1.0
        for i in range(p):
            dval += coef[i] * dbuf[-1 - i]
        val = intercept + float(coef @ lags)
        preds[t] = val
        jac[t] = dval
        buf.append(val)
        buf.pop(0)
        dbuf.append(dval)
        dbuf.pop(0)
    return preds, jac


def _recompute_residual_std(coef: np.ndarray, intercept: float,
                            dataset: list[TimeSeries]) -> float:
    errors = []
    p = coef.size
    for series in dataset:
        v = np.asarray(series.values, dtype=float)
        for t in range(p, v.size):
            lags = v[t - 1::-1][:p]
            errors.append(v[t] - (intercept + float(coef @ lags)))
    return float(np.std(errors)) if errors else 0.0


def coordinate_train(s1: LinearARModel, large, dataset: list[TimeSeries],
                     cfg: CoordinationConfig, seed: int = 0, horizon: int = 8,
                     n_origins: int = 2, steps: int = 300, lr: float = 0.05,
                     min_history: int = 8) -> CoordinationResult:
    """Split samples by confidence, then distill: s2 starts as an exact copy
    of s1 and is trained to stay consistent with s1 on easy samples while
    matching the large model on challenging ones."""
    windows = []
    for series in dataset:
        for history, truth in iter_windows(series, horizon, n_origins, min_history):
            if history.size < s1.order:
                continue
            windows.append((series.with_values(history), truth))
    if not windows:
        raise DataError("no coordination windows in the dataset")
    easy, challenging = [], []
    n_hard = 0
    for hist, _ in windows:
        conf1 = baseline_confidence(s1, hist.values)
        if conf1 > cfg.tau1:
            easy.append(hist)
        else:
            n_hard += 1
            if float(large.confidence(hist, horizon)) > cfg.tau2:
                challenging.append(hist)
    s2 = s1.copy()
    if not challenging or cfg.lam == 0.0:
        notice = ("no challenging samples; s2 returned as a copy of s1"
                  if not challenging else None)
        if notice:
            log.warning("coordinate_train: %s", notice)
        return CoordinationResult(s2=s2, n_easy=len(easy), n_hard=n_hard,
                                  n_challenging=len(challenging),
                                  loss_trajectory=[], notice=notice)

    easy_targets = [ar_predict(s1, h.values, horizon) for h in easy]
    chal_targets = [np.asarray(large.fit(h).predict(h, horizon), dtype=float)
                    for h in challenging]
    theta = np.concatenate([s2.coef, [s2.intercept]])
    arrays = {"theta": theta}
    optimizer = _DictAdam(arrays, lr)
    losses = []
    for _ in range(steps):
        total = 0.0
        grad = np.zeros_like(theta)
        coef, intercept = arrays["theta"][:-1], float(arrays["theta"][-1])
        for subset, targets, weight in ((easy, easy_targets, 1.0),
                                        (challenging, chal_targets, cfg.lam)):
            if not subset or weight == 0.0:
                continue
            for hist, target in zip(subset, targets):
                preds, jac = _ar_rollout_jacobian(coef, intercept, hist.values, horizon)
                err = preds - target
                total += weight * float(np.mean(err ** 2)) / len(subset)
                grad += weight * (2.0 / (horizon * len(subset))) * (err @ jac)
        losses.append(total)
        if not np.isfinite(total):
            raise DataError("coordination distillation diverged")
        optimizer.step(arrays, {"theta": grad})
    coef, intercept = arrays["theta"][:-1], float(arrays["theta"][-1])
    s2 = LinearARModel(order=s1.order, coef=coef, intercept=intercept,
                       residual_std=_recompute_residual_std(coef, intercept, dataset))
    return CoordinationResult(s2=s2, n_easy=len(easy), n_hard=n_hard,
                              n_challenging=len(challenging), loss_trajectory=losses)


def coordinate_infer(s1: LinearARModel, s2: LinearARModel, large,
                     series: TimeSeries, horizon: int, cfg: CoordinationConfig,
                     ) -> tuple[np.ndarray, str]:
    """Cascade inference: s1 if confident, else s2 if confident, else large."""
    values = as_values(series)
    if baseline_confidence(s1, values) > cfg.tau1:
        return ar_predict(s1, values, horizon), "s1"
    if baseline_confidence(s2, values) > cfg.tau1:
        return ar_predict(s2, values, horizon), "s2"
    large.fit(series)
    return np.asarray(large.predict(series, horizon), dtype=float), "large"
