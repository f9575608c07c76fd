"""Training loop: Adam on teacher-forced NLL, optionally with robust dataset
reweighting driving the batch sampling (or multiplying per-dataset losses)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import TimeSeries
from ..dromix import GroupWeights, ReferenceLosses, excess_loss, fit_reference, sample_batch, update_weights
from ..errors import DataError, TrainingDivergedError
from ..seeding import rng_for
from .config import ModelConfig
from .network import TrainingExample, batch_loss, loss_and_grad
from .params import Parameters, init_params
from .tokenizer import tokenize

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class AdamOptimizer:
    """First-order moment-based optimizer with bias correction."""

    def __init__(self, params: Parameters, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: Parameters, grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - ADAM_BETA1 ** self.t
        b2c = 1.0 - ADAM_BETA2 ** self.t
        for name, g in grads.items():
            m = self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * g
            v = self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * g * g
            params.arrays[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)


@dataclass
class TrainResult:
    params: Parameters
    loss_trajectory: list[float]
    weight_trajectory: list[dict[str, float]] = field(default_factory=list)
    reference_losses: dict[str, float] = field(default_factory=dict)


def make_example(series: TimeSeries, config: ModelConfig) -> TrainingExample:
    p_len = config.patch_len_for(series.freq.class_)
    tokens, _ = tokenize(series, p_len, config.context_patches)
    return TrainingExample(tokens=tokens, freq=series.freq)


def _window(series: TimeSeries, length: int, rng: np.random.Generator) -> TimeSeries:
    if len(series) <= length:
        return series
    start = int(rng.integers(0, len(series) - length + 1))
    return TimeSeries(id=series.id, freq=series.freq,
                      start=series.timestamp_at(start),
                      values=series.values[start:start + length])


def train(config: ModelConfig, datasets: dict[str, list[TimeSeries]],
          dro: GroupWeights | None = None, steps: int = 200, seed: int | None = None,
          dro_update_every: int = 20, dro_mode: str = "sample",
          reference_losses: ReferenceLosses | None = None) -> TrainResult:
    """Train from scratch; fully reproducible per (config, data, seed).

    With ``dro`` given, batches are sampled by the group weights ("sample"
    mode) or weighted in the loss ("loss" mode), and the weights update every
    ``dro_update_every`` steps from the excess of current over reference loss.
    """
    if not datasets or not any(datasets.values()):
        raise DataError("datasets are empty")
    if dro_mode not in ("sample", "loss"):
        raise DataError(f"unknown dro_mode {dro_mode!r}")
    seed = config.seed if seed is None else seed
    params = init_params(config, seed=seed)
    optimizer = AdamOptimizer(params, lr=config.learning_rate)
    ids = sorted(datasets)
    weights = dro
    weight_traj: list[dict[str, float]] = []
    ref: dict[str, float] = {}
    if weights is not None:
        if reference_losses is None:
            ref = {d: fit_reference(datasets[d], "ar", loss="gaussian_nll") for d in ids}
            reference_losses = ReferenceLosses(losses=ref)
        else:
            ref = dict(reference_losses.losses)
        weight_traj.append(dict(weights.weights))

    losses: list[float] = []
    last_good = params.copy()
    for step in range(steps):
        batch_rng = rng_for(seed, "train-batch", step)
        examples, example_ids = _draw_batch(config, datasets, ids, weights, step,
                                            seed, batch_rng)
        if dro_mode == "loss" and weights is not None:
            loss, grads = _weighted_loss_and_grad(params, examples, example_ids, weights)
        else:
            loss, grads = loss_and_grad(params, examples)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, last_good)
        losses.append(float(loss))
        last_good = params.copy()
        optimizer.step(params, grads)
        if weights is not None and (step + 1) % dro_update_every == 0:
            current = _probe_losses(params, config, datasets, ids, seed, step)
            excess = excess_loss(current, reference_losses)
            weights = update_weights(weights, excess)
            weight_traj.append(dict(weights.weights))
    params.check_finite()
    return TrainResult(params=params, loss_trajectory=losses,
                       weight_trajectory=weight_traj, reference_losses=ref)


def _draw_batch(config, datasets, ids, weights, step, seed, rng):
    window_len = None  # window length varies with the per-frequency patch size
    examples, example_ids = [], []
    if weights is not None:
        pairs = sample_batch(datasets, weights, config.batch_size,
                             seed=int(rng.integers(0, 2 ** 31)))
        for d, series in pairs:
            win_len = config.patch_len_for(series.freq.class_) * config.context_patches
            window = _window(series, win_len, rng)
            examples.append(make_example(window, config))
            example_ids.append(d)
        return examples, example_ids
    for _ in range(config.batch_size):
        d = ids[int(rng.integers(0, len(ids)))]
        pool = datasets[d]
        series = pool[int(rng.integers(0, len(pool)))]
        win_len = config.patch_len_for(series.freq.class_) * config.context_patches
        window = _window(series, win_len, rng)
        examples.append(make_example(window, config))
        example_ids.append(d)
    return examples, example_ids


def _weighted_loss_and_grad(params, examples, example_ids, weights: GroupWeights):
    """Loss-multiplier mode: per-dataset mean NLL scaled by its group weight."""
    by_ds: dict[str, list[TrainingExample]] = {}
    for ex, d in zip(examples, example_ids):
        by_ds.setdefault(d, []).append(ex)
    total = 0.0
    grads = None
    n_groups = sum(1 for d in by_ds)
    for d, exs in sorted(by_ds.items()):
        w = weights.weights[d] * len(weights.weights)
        loss, g = loss_and_grad(params, exs)
        total += w * loss / n_groups
        if grads is None:
            grads = {k: (w / n_groups) * v for k, v in g.items()}
        else:
            for k in grads:
                grads[k] += (w / n_groups) * g[k]
    return total, grads


def _probe_losses(params, config, datasets, ids, seed, step) -> dict[str, float]:
    """Current per-dataset loss estimated on a small deterministic probe batch."""
    out = {}
    for d in ids:
        rng = rng_for(seed, "dro-probe", d, step)
        pool = datasets[d]
        examples = []
        for _ in range(min(4, max(1, len(pool)))):
            series = pool[int(rng.integers(0, len(pool)))]
            win_len = config.patch_len_for(series.freq.class_) * config.context_patches
            examples.append(make_example(_window(series, win_len, rng), config))
        out[d] = batch_loss(params, examples)
    return out
