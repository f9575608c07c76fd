"""Data-driven augmentation strategies.

Four families: frequency aggregation, moving-block bootstrap over STL
residuals, DTW barycenter averaging within shape-based clusters, and Dirichlet
mixup. All randomized operations take an explicit seed and are reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Frequency, TimeSeries
from .decomp import stl_decompose
from .errors import DataError
from .seeding import rng_for

# Aggregating by these exact factors promotes the frequency class; any other
# factor keeps the class and divides the seasonal period instead.
_FREQ_PROMOTIONS = {
    ("minute", 60): "hour",
    ("minute", 1440): "day",
    ("hour", 24): "day",
    ("day", 7): "week",
    ("month", 3): "quarter",
}


@dataclass(frozen=True)
class DtwResult:
    """Optimal alignment cost and the path that realizes it."""

    cost: float
    path: list[tuple[int, int]]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    centroids: list[np.ndarray]


def _aggregated_freq(freq: Frequency, factor: int) -> Frequency:
    promoted = _FREQ_PROMOTIONS.get((freq.class_, factor))
    if promoted is not None:
        return Frequency(promoted)
    return Frequency(freq.class_, max(1, round(freq.steps_per_cycle / factor)))


def frequency_aggregate(series: TimeSeries, factor: int, mode: str = "mean") -> TimeSeries:
    """Aggregate consecutive windows of ``factor`` points; trailing remainder dropped."""
    if factor < 2:
        raise DataError("factor must be >= 2")
    if mode not in ("mean", "sum"):
        raise DataError(f"unknown mode {mode!r}")
    n = len(series)
    if factor > n:
        raise DataError(f"factor {factor} exceeds series length {n}")
    k = n // factor
    blocks = series.values[: k * factor].reshape(k, factor)
    agg = blocks.mean(axis=1) if mode == "mean" else blocks.sum(axis=1)
    return series.with_values(agg, id=f"{series.id}/agg{factor}",
                              freq=_aggregated_freq(series.freq, factor))


def mbb_augment(series: TimeSeries, period: int, block_len: int | None = None,
                n_variants: int = 1, seed: int = 0) -> list[TimeSeries]:
    """Moving-block bootstrap: keep STL trend and seasonal parts, resample the
    residual from overlapping blocks (with replacement), truncated to length T.
    """
    t_len = len(series)
    if block_len is None:
        block_len = 2 * period
    if block_len < 2:
        raise DataError("block_len must be >= 2")
    block_len = min(block_len, t_len)
    decomp = stl_decompose(series, period=period)
    base = decomp.trend + decomp.seasonal
    residual = decomp.residual
    n_starts = t_len - block_len + 1
    n_blocks = -(-t_len // block_len)  # ceil
    rng = rng_for(seed, "mbb", series.id)
    out = []
    for v in range(n_variants):
        starts = rng.integers(0, n_starts, size=n_blocks)
        resampled = np.concatenate([residual[s:s + block_len] for s in starts])[:t_len]
        out.append(series.with_values(base + resampled, id=f"{series.id}/mbb{v}"))
    return out


def dtw(a, b) -> DtwResult:
    """Dynamic time warping under squared pointwise distance.

    Steps are (1,0), (0,1) and (1,1); ties in the traceback prefer the
    diagonal, then the vertical step.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size == 0 or y.size == 0:
        raise DataError("dtw inputs must be non-empty")
    n, m = x.size, y.size
    cost = (x[:, None] - y[None, :]) ** 2
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        ci = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = ci[j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    # traceback
    path = [(n - 1, m - 1)]
    i, j = n, m
    while i > 1 or j > 1:
        moves = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
        best = int(np.argmin(moves))  # argmin takes the first minimum: diagonal wins ties
        if best == 0:
            i, j = i - 1, j - 1
        elif best == 1:
            i -= 1
        else:
            j -= 1
        path.append((i - 1, j - 1))
    path.reverse()
    return DtwResult(cost=float(acc[n, m]), path=path)


def _dba_step(bary: np.ndarray, seqs: list[np.ndarray]) -> tuple[float, np.ndarray]:
    sums = np.zeros_like(bary)
    counts = np.zeros(bary.size)
    obj = 0.0
    for s in seqs:
        res = dtw(bary, s)
        obj += res.cost
        for i, j in res.path:
            sums[i] += s[j]
            counts[i] += 1
    return obj, np.where(counts > 0, sums / np.maximum(counts, 1), bary)


def dba(series_list, init, max_iters: int = 10, tol: float = 1e-6,
        return_trajectory: bool = False):
    """DTW barycenter averaging: realign members to the current average and
    update every cell to the mean of its aligned points.

    The objective (sum of DTW costs to the barycenter) is non-increasing
    across iterations; stops at max_iters or when the relative improvement
    drops below ``tol``. With ``return_trajectory`` also returns the per-
    iteration objective values.
    """
    seqs = [np.asarray(s, dtype=float) for s in series_list]
    if not seqs:
        raise DataError("dba needs at least one series")
    bary = np.asarray(init, dtype=float).copy()
    if bary.size == 0:
        raise DataError("init must be non-empty")
    trajectory: list[float] = []
    for _ in range(max_iters):
        obj, bary = _dba_step(bary, seqs)
        trajectory.append(obj)
        if obj == 0.0:
            break
        if len(trajectory) > 1 and trajectory[-2] - obj < tol * max(trajectory[-2], 1e-12):
            break
    if return_trajectory:
        return bary, trajectory
    return bary


def _znorm(x: np.ndarray) -> np.ndarray:
    std = float(np.std(x))
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - np.mean(x)) / std


def sbd(a, b) -> float:
    """Shape-based distance: 1 minus the maximum normalized cross-correlation
    over all shifts of the z-normalized series."""
    x = _znorm(np.asarray(a, dtype=float))
    y = _znorm(np.asarray(b, dtype=float))
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx < 1e-12 or ny < 1e-12:
        return 1.0
    cc = np.correlate(x, y, mode="full")
    return float(1.0 - cc.max() / (nx * ny))


def _best_shift(member: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Shift (zero-filled) the member to its best cross-correlation alignment."""
    cc = np.correlate(member, centroid, mode="full")
    shift = int(np.argmax(cc)) - (centroid.size - 1)
    out = np.zeros(centroid.size)
    if shift >= 0:
        take = member[shift:shift + centroid.size]
        out[:take.size] = take
    else:
        take = member[:centroid.size + shift]
        out[-shift:-shift + take.size] = take
    return out


def kshape_cluster(series_list, k: int, seed: int = 0, max_iters: int = 20) -> ClusterAssignment:
    """Shape-based clustering of z-normalized series.

    Centroids are updated as the SBD-aligned mean of the members (each member
    shifted to its best alignment with the current centroid, then averaged and
    re-normalized). Stops on a label fixpoint or after max_iters.
    """
    data = [_znorm(np.asarray(s.values if isinstance(s, TimeSeries) else s, dtype=float))
            for s in series_list]
    n = len(data)
    if k > n:
        raise DataError(f"k={k} exceeds number of series ({n})")
    if k < 1:
        raise DataError("k must be >= 1")
    rng = rng_for(seed, "kshape")
    centroid_idx = rng.choice(n, size=k, replace=False)
    centroids = [data[i].copy() for i in centroid_idx]
    labels = np.full(n, -1)
    for _ in range(max_iters):
        dists = np.array([[sbd(x, c) for c in centroids] for x in data])
        new_labels = dists.argmin(axis=1)
        # keep every cluster populated: move the worst-fitting member into any
        # cluster that emptied
        for c in range(k):
            if not np.any(new_labels == c):
                counts = np.bincount(new_labels, minlength=k)
                movable = np.where(counts[new_labels] > 1)[0]
                worst = movable[np.argmax(dists[movable, new_labels[movable]])]
                new_labels[worst] = c
                centroids[c] = data[worst].copy()
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = [data[i] for i in np.where(labels == c)[0]]
            ref = centroids[c]
            aligned = np.mean([_best_shift(m, ref) for m in members], axis=0)
            centroids[c] = _znorm(aligned)
    return ClusterAssignment(labels=labels, centroids=centroids)


def _medoid(seqs: list[np.ndarray]) -> int:
    if len(seqs) == 1:
        return 0
    best, best_cost = 0, np.inf
    for i, cand in enumerate(seqs):
        total = sum(dtw(cand, s).cost for j, s in enumerate(seqs) if j != i)
        if total < best_cost:
            best, best_cost = i, total
    return best


def dba_augment(series_list: list[TimeSeries], k: int, per_cluster: int,
                seed: int = 0, max_iters: int = 10) -> list[TimeSeries]:
    """Cluster by shape, then synthesize per-cluster series as DBA barycenters
    of bootstrap-resampled members, initialized at the cluster medoid."""
    assignment = kshape_cluster(series_list, k=k, seed=seed)
    out = []
    for c in range(k):
        member_idx = np.where(assignment.labels == c)[0]
        members = [np.asarray(series_list[i].values, dtype=float) for i in member_idx]
        medoid_local = _medoid(members)
        template = series_list[member_idx[medoid_local]]
        rng = rng_for(seed, "dba", c)
        for v in range(per_cluster):
            chosen = rng.integers(0, len(members), size=len(members))
            subset = [members[i] for i in chosen]
            bary = dba(subset, init=members[medoid_local], max_iters=max_iters)
            out.append(template.with_values(bary, id=f"{template.id}/dba{c}.{v}"))
    return out


def dirichlet_weights(rng: np.random.Generator, m: int, alpha: float) -> np.ndarray:
    return rng.dirichlet(np.full(m, alpha))


def mixup_augment(series_list: list[TimeSeries], m: int = 2, alpha: float = 1.0,
                  n_variants: int = 1, seed: int = 0,
                  weight_sampler=dirichlet_weights) -> list[TimeSeries]:
    """Convex combinations of m randomly chosen series, weights drawn from a
    symmetric Dirichlet. Series are cropped to the shortest length from the
    end (most recent window) before combining.

    ``weight_sampler`` is an injection point for tests; it must return a
    vector on the simplex.
    """
    if m < 2:
        raise DataError("m must be >= 2")
    if len(series_list) < m:
        raise DataError(f"need at least m={m} series, got {len(series_list)}")
    if alpha <= 0:
        raise DataError("alpha must be positive")
    common = min(len(s) for s in series_list)
    cropped = [np.asarray(s.values, dtype=float)[-common:] for s in series_list]
    rng = rng_for(seed, "mixup")
    template = series_list[0]
    out = []
    for v in range(n_variants):
        chosen = rng.choice(len(series_list), size=m, replace=False)
        w = np.asarray(weight_sampler(rng, m, alpha), dtype=float)
        mixed = sum(w[i] * cropped[c] for i, c in enumerate(chosen))
        out.append(TimeSeries(id=f"mixup{v}", freq=template.freq,
                              start=template.start, values=mixed))
    return out
