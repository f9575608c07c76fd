from datetime import datetime, timezone

import numpy as np
import pytest

from hybridcast.augment import (ClusterAssignment, DtwResult, dba, dba_augment, dtw,
                                frequency_aggregate, kshape_cluster, mbb_augment,
                                mixup_augment, sbd)
from hybridcast.core import Frequency, TimeSeries
from hybridcast.decomp import stl_decompose
from hybridcast.errors import DataError


def _series(values, sid="s", freq="day", period=0):
    return TimeSeries(id=sid, freq=Frequency(freq, period),
                      start=datetime(2024, 1, 1, tzinfo=timezone.utc),
                      values=np.asarray(values, float))


class TestFrequencyAggregate:
    def test_sum(self):
        out = frequency_aggregate(_series([1, 2, 3, 4]), factor=2, mode="sum")
        assert np.array_equal(out.values, [3.0, 7.0])

    def test_mean_with_remainder(self):
        out = frequency_aggregate(_series([1, 2, 3, 4, 5]), factor=2, mode="mean")
        assert np.array_equal(out.values, [1.5, 3.5])

    def test_constant_invariance(self):
        out = frequency_aggregate(_series([7.0] * 12), factor=3, mode="mean")
        assert np.allclose(out.values, 7.0)

    def test_factor_exceeds_length(self):
        with pytest.raises(DataError):
            frequency_aggregate(_series([1, 2]), factor=3)

    def test_freq_promotion(self):
        hourly = _series(np.arange(48.0), freq="hour")
        daily = frequency_aggregate(hourly, factor=24, mode="mean")
        assert daily.freq.class_ == "day"
        monthly = _series(np.arange(24.0), freq="month")
        quarterly = frequency_aggregate(monthly, factor=3, mode="sum")
        assert quarterly.freq.class_ == "quarter"

    def test_unmapped_factor_scales_period(self):
        s = _series(np.arange(40.0), freq="day", period=14)
        out = frequency_aggregate(s, factor=2)
        assert out.freq.class_ == "day"
        assert out.freq.steps_per_cycle == 7


class TestMbb:
    def _noiseless(self, n=96, period=12):
        t = np.arange(float(n))
        return _series(1.0 + 0.2 * t + 4 * np.cos(2 * np.pi * t / period), period=period)

    def test_noiseless_reproduced(self):
        s = self._noiseless()
        variants = mbb_augment(s, period=12, n_variants=3, seed=0)
        for v in variants:
            assert len(v) == len(s)
            assert np.max(np.abs(v.values - s.values)) <= 1e-6

    def test_trend_seasonal_preserved_and_blocks_match(self):
        rng = np.random.default_rng(5)
        t = np.arange(120.0)
        y = 0.3 * t + 3 * np.cos(2 * np.pi * t / 12) + rng.normal(scale=0.8, size=120)
        s = _series(y, period=12)
        d = stl_decompose(s, period=12)
        base = d.trend + d.seasonal
        block_len = 24
        variants = mbb_augment(s, period=12, block_len=block_len, n_variants=5, seed=9)
        for v in variants:
            resampled = v.values - base
            # the resampled residual is a concatenation of original blocks
            n_full = len(resampled) // block_len
            for j in range(n_full):
                chunk = resampled[j * block_len:(j + 1) * block_len]
                matches = any(
                    np.allclose(chunk, d.residual[st:st + block_len], atol=1e-9)
                    for st in range(len(y) - block_len + 1))
                assert matches

    def test_bootstrap_mean_against_scheme_expectation(self):
        rng = np.random.default_rng(11)
        t = np.arange(100.0)
        y = 2.0 * np.cos(2 * np.pi * t / 10) + rng.normal(scale=1.0, size=100)
        s = _series(y, period=10)
        d = stl_decompose(s, period=10)
        block_len = 20
        n_variants = 200
        variants = mbb_augment(s, period=10, block_len=block_len,
                               n_variants=n_variants, seed=3)
        base = d.trend + d.seasonal
        variant_means = [float(np.mean(v.values - base)) for v in variants]
        # oracle: expectation of a resampled point at offset r is the mean of
        # residual[start + r] over all block starts
        n = len(y)
        n_starts = n - block_len + 1
        exp_per_offset = np.array([np.mean(d.residual[r:r + n_starts]) for r in range(block_len)])
        offsets = np.arange(n) % block_len
        expected_mean = float(np.mean(exp_per_offset[offsets]))
        se = np.std(variant_means) / np.sqrt(n_variants)
        assert abs(np.mean(variant_means) - expected_mean) <= 3 * se

    def test_reproducible(self):
        s = self._noiseless()
        a = mbb_augment(s, period=12, n_variants=2, seed=4)
        b = mbb_augment(s, period=12, n_variants=2, seed=4)
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values)

    def test_preconditions(self):
        with pytest.raises(DataError):
            mbb_augment(self._noiseless(), period=12, block_len=1)


class TestDtw:
    def test_identity_zero_cost(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=rng.integers(1, 10))
            assert dtw(x, x).cost == 0.0

    def test_single_cell(self):
        res = dtw([0.0], [5.0])
        assert res.cost == 25.0
        assert res.path == [(0, 0)]

    def test_path_invariants(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.normal(size=rng.integers(1, 8))
            b = rng.normal(size=rng.integers(1, 8))
            res = dtw(a, b)
            assert res.path[0] == (0, 0)
            assert res.path[-1] == (len(a) - 1, len(b) - 1)
            steps = {(i2 - i1, j2 - j1)
                     for (i1, j1), (i2, j2) in zip(res.path, res.path[1:])}
            assert steps <= {(1, 0), (0, 1), (1, 1)}
            path_cost = sum((a[i] - b[j]) ** 2 for i, j in res.path)
            assert np.isclose(path_cost, res.cost)

    def test_brute_force_oracle(self):
        def enumerate_paths(n, m):
            # all monotone paths from (0,0) to (n-1,m-1)
            stack = [[(0, 0)]]
            while stack:
                path = stack.pop()
                i, j = path[-1]
                if (i, j) == (n - 1, m - 1):
                    yield path
                    continue
                for di, dj in ((1, 1), (1, 0), (0, 1)):
                    ni, nj = i + di, j + dj
                    if ni < n and nj < m:
                        stack.append(path + [(ni, nj)])

        def brute(a, b):
            best = np.inf
            for path in enumerate_paths(len(a), len(b)):
                cost = sum((a[i] - b[j]) ** 2 for i, j in path)
                best = min(best, cost)
            return best

        rng = np.random.default_rng(7)
        for _ in range(60):
            a = rng.integers(-3, 4, size=rng.integers(1, 7)).astype(float)
            b = rng.integers(-3, 4, size=rng.integers(1, 7)).astype(float)
            assert np.isclose(dtw(a, b).cost, brute(a, b), atol=1e-12)

    def test_specific_pair_against_oracle(self):
        res = dtw([1.0, 2.0, 3.0], [1.0, 2.0, 2.0, 3.0])
        assert res.cost == 0.0  # perfect warped alignment

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = rng.normal(size=rng.integers(1, 9))
            b = rng.normal(size=rng.integers(1, 9))
            assert np.isclose(dtw(a, b).cost, dtw(b, a).cost)

    def test_cost_at_most_euclidean_for_equal_lengths(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(1, 12))
            a, b = rng.normal(size=n), rng.normal(size=n)
            assert dtw(a, b).cost <= np.sum((a - b) ** 2) + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            dtw([], [1.0])


class TestDba:
    def test_identical_copies_fixed_point(self):
        x = np.array([1.0, 3.0, 2.0, 5.0])
        bary, traj = dba([x, x, x], init=x, return_trajectory=True)
        assert np.max(np.abs(bary - x)) <= 1e-12
        assert traj[-1] == 0.0

    def test_two_constants(self):
        a = np.full(6, 2.0)
        b = np.full(6, 6.0)
        bary = dba([a, b], init=a.copy(), max_iters=20)
        assert np.allclose(bary, 4.0, atol=1e-12)

    def test_objective_monotone(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            seqs = [rng.normal(size=rng.integers(5, 15)) for _ in range(4)]
            init = seqs[0]
            _, traj = dba(seqs, init=init, max_iters=12, tol=0.0, return_trajectory=True)
            diffs = np.diff(traj)
            assert np.all(diffs <= 1e-9)

    def test_empty_inputs(self):
        with pytest.raises(DataError):
            dba([], init=[1.0])
        with pytest.raises(DataError):
            dba([[1.0]], init=[])


class TestKshape:
    def test_two_well_separated_clusters(self):
        t = np.arange(40.0)
        sines = [_series(np.sin(2 * np.pi * t / 8) + 0.01 * i, sid=f"sin{i}")
                 for i in range(10)]
        ramps = [_series(0.5 * t + i, sid=f"ramp{i}") for i in range(10)]
        res = kshape_cluster(sines + ramps, k=2, seed=0)
        labels = res.labels
        assert len(set(labels[:10])) == 1
        assert len(set(labels[10:])) == 1
        assert labels[0] != labels[10]

    def test_shift_invariance_single_cluster(self):
        t = np.arange(64.0)
        series = [_series(np.roll(np.sin(2 * np.pi * t / 16), shift), sid=f"s{shift}")
                  for shift in range(0, 12, 2)]
        res = kshape_cluster(series, k=1, seed=1)
        for s in series:
            assert sbd(s.values, res.centroids[0]) <= 0.05

    def test_k_equals_n_permutation(self):
        rng = np.random.default_rng(3)
        series = [_series(rng.normal(size=20) + 3 * i, sid=f"x{i}") for i in range(5)]
        res = kshape_cluster(series, k=5, seed=2)
        assert sorted(res.labels.tolist()) == [0, 1, 2, 3, 4]

    def test_k_too_large(self):
        with pytest.raises(DataError):
            kshape_cluster([_series([1, 2, 3.0])], k=2)

    def test_clusters_non_empty(self):
        rng = np.random.default_rng(8)
        series = [_series(rng.normal(size=30), sid=f"n{i}") for i in range(9)]
        res = kshape_cluster(series, k=3, seed=5)
        assert isinstance(res, ClusterAssignment)
        for c in range(3):
            assert np.any(res.labels == c)


class TestDbaAugment:
    def test_identical_cluster_fixed_point(self):
        x = np.array([1.0, 4.0, 2.0, 6.0, 3.0])
        series = [_series(x, sid=f"c{i}") for i in range(4)]
        out = dba_augment(series, k=1, per_cluster=3, seed=0)
        assert len(out) == 3
        for s in out:
            assert np.max(np.abs(s.values - x)) <= 1e-9

    def test_cohesion(self):
        # weekly-style construction: two clusters of periodic shapes
        rng = np.random.default_rng(17)
        t = np.arange(56.0)
        cluster_a = [
            _series(10 + 3 * np.sin(2 * np.pi * t / 7 + rng.normal(scale=0.1))
                    + rng.normal(scale=0.2, size=56), sid=f"a{i}") for i in range(6)]
        cluster_b = [
            _series(5 + 0.3 * t + rng.normal(scale=0.2, size=56), sid=f"b{i}")
            for i in range(6)]
        all_series = cluster_a + cluster_b
        res = kshape_cluster(all_series, k=2, seed=4)
        out = dba_augment(all_series, k=2, per_cluster=2, seed=4)
        assert len(out) == 4
        for synth in out:
            dists = [sbd(synth.values, c) for c in res.centroids]
            c = int(np.argmin(dists))
            members = [s for s, lab in zip(all_series, res.labels) if lab == c]
            max_member = max(sbd(m.values, res.centroids[c]) for m in members)
            assert dists[c] <= max(max_member * 1.25, 0.05)

    def test_per_cluster_zero(self):
        series = [_series(np.arange(10.0), sid=f"z{i}") for i in range(3)]
        assert dba_augment(series, k=1, per_cluster=0, seed=0) == []


class TestMixup:
    def test_two_constants_linearity(self):
        a = _series(np.full(10, 1.0), sid="a")
        b = _series(np.full(10, 3.0), sid="b")
        out = mixup_augment([a, b], m=2, alpha=1.0, n_variants=5, seed=0)
        for v in out:
            c = v.values[0]
            assert 1.0 <= c <= 3.0
            assert np.allclose(v.values, c)

    def test_degenerate_weights_hook(self):
        a = _series(np.arange(10.0), sid="a")
        b = _series(np.arange(10.0) * 2, sid="b")

        def degenerate(rng, m, alpha):
            w = np.zeros(m)
            w[0] = 1.0
            return w

        out = mixup_augment([a, b], m=2, n_variants=1, seed=1,
                            weight_sampler=degenerate)
        # the chosen first series is returned exactly
        assert np.array_equal(out[0].values, a.values) or np.array_equal(out[0].values, b.values)

    def test_dirichlet_moments(self):
        from hybridcast.augment import dirichlet_weights
        from hybridcast.seeding import rng_for
        rng = rng_for(0, "moments")
        draws = np.stack([dirichlet_weights(rng, 3, 1.0) for _ in range(10_000)])
        assert np.all(np.abs(draws.mean(axis=0) - 1 / 3) <= 0.01)
        assert np.allclose(draws.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(draws >= 0)

    def test_common_length_cropped_from_end(self):
        a = _series(np.arange(10.0), sid="a")
        b = _series(np.arange(6.0), sid="b")

        def first_only(rng, m, alpha):
            return np.array([1.0, 0.0])

        out = mixup_augment([a, b], m=2, n_variants=4, seed=2, weight_sampler=first_only)
        for v in out:
            assert len(v) == 6
            assert np.array_equal(v.values, a.values[-6:]) or np.array_equal(v.values, b.values)

    def test_too_few_series(self):
        with pytest.raises(DataError):
            mixup_augment([_series([1.0, 2.0])], m=2)

    def test_reproducible(self):
        rng = np.random.default_rng(0)
        series = [_series(rng.normal(size=12), sid=f"r{i}") for i in range(5)]
        a = mixup_augment(series, m=3, n_variants=3, seed=7)
        b = mixup_augment(series, m=3, n_variants=3, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values)
