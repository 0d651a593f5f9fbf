from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from ivdg.errors import InvalidArgumentError
from ivdg.mmd import MmdConfig, MmdEstimator, median_heuristic, mmd2, mmd2_and_grad
from ivdg.rng import stream


def brute_mmd2(a, b, cfg: MmdConfig) -> float:
    """Direct double-sum evaluation, written independently of the library."""
    total = 0.0
    for sigma, beta in zip(cfg.bandwidths, cfg.weights):
        def k(p, q):
            return math.exp(-float(np.sum((p - q) ** 2)) / (2 * sigma**2))

        if cfg.estimator is MmdEstimator.BIASED:
            kaa = sum(k(p, q) for p in a for q in a) / len(a) ** 2
            kbb = sum(k(p, q) for p in b for q in b) / len(b) ** 2
        else:
            kaa = sum(k(a[i], a[j]) for i in range(len(a)) for j in range(len(a)) if i != j) / (len(a) * (len(a) - 1))
            kbb = sum(k(b[i], b[j]) for i in range(len(b)) for j in range(len(b)) if i != j) / (len(b) * (len(b) - 1))
        kab = sum(k(p, q) for p in a for q in b) / (len(a) * len(b))
        total += beta * (kaa + kbb - 2 * kab)
    return total


samples = st.integers(0, 2**31).map(lambda s: stream(s, "mmd"))


class TestConfig:
    def test_convex_weights(self):
        with pytest.raises(InvalidArgumentError):
            MmdConfig((1.0, 2.0), (0.7, 0.7))
        with pytest.raises(InvalidArgumentError):
            MmdConfig((1.0, 2.0), (1.5, -0.5))

    def test_increasing_bandwidths(self):
        with pytest.raises(InvalidArgumentError):
            MmdConfig((2.0, 1.0), (0.5, 0.5))
        with pytest.raises(InvalidArgumentError):
            MmdConfig((0.0, 1.0), (0.5, 0.5))

    def test_from_scale(self):
        cfg = MmdConfig.from_scale(2.0, (0.5, 1.0, 2.0))
        assert cfg.bandwidths == (1.0, 2.0, 4.0)
        assert sum(cfg.weights) == pytest.approx(1.0)


class TestMedianHeuristic:
    def test_degenerate(self):
        assert median_heuristic(np.ones((3, 2)), np.ones((2, 2))) == 1.0

    def test_single_pair(self):
        assert median_heuristic(np.array([[0.0]]), np.array([[2.0]])) == 2.0

    def test_matches_brute_force(self, rng):
        a, b = rng.normal(size=(60, 3)), rng.normal(2.0, 1.0, size=(40, 3))
        pooled = np.vstack([a, b])
        d = cdist(pooled, pooled)
        oracle = np.median(d[np.triu_indices(len(pooled), k=1)])
        assert median_heuristic(a, b) == pytest.approx(oracle, rel=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            median_heuristic(np.zeros((0, 2)), np.zeros((1, 2)))


class TestMmd2:
    def test_identical_samples(self, rng):
        a = rng.normal(size=(30, 4))
        assert abs(mmd2(a, a, MmdConfig.from_scale(1.0))) < 1e-12

    def test_hand_case(self):
        value = mmd2(np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]), MmdConfig.single(1.0))
        assert abs(value - 2 * (1 - math.exp(-0.5))) < 1e-9
        assert value == pytest.approx(0.786939, abs=1e-6)

    @pytest.mark.parametrize("estimator", list(MmdEstimator))
    def test_matches_double_sum(self, rng, estimator):
        a, b = rng.normal(size=(7, 2)), rng.normal(0.5, 1.0, size=(5, 2))
        cfg = MmdConfig.from_scale(1.3, estimator=estimator)
        assert mmd2(a, b, cfg) == pytest.approx(brute_mmd2(a, b, cfg), rel=1e-10, abs=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            mmd2(np.zeros((3, 2)), np.zeros((3, 3)), MmdConfig.single(1.0))

    def test_unbiased_needs_two_rows(self):
        cfg = MmdConfig.single(1.0, MmdEstimator.UNBIASED)
        with pytest.raises(InvalidArgumentError):
            mmd2(np.zeros((1, 1)), np.zeros((3, 1)), cfg)

    def test_discrimination(self):
        cfg = MmdConfig.single(1.0)
        ratios = []
        for seed in range(20):
            r = stream(seed, "discrimination")
            a = r.normal(size=(2000, 1))
            same = mmd2(a, r.normal(size=(2000, 1)), cfg)
            shifted = mmd2(a, r.normal(2.0, 1.0, size=(2000, 1)), cfg)
            ratios.append((shifted, same))
        shifted, same = np.mean(ratios, axis=0)
        assert shifted >= 10 * same

    def test_gradient_matches_finite_differences(self, rng):
        a, b = rng.normal(size=(6, 3)), rng.normal(1.0, 1.0, size=(5, 3))
        cfg = MmdConfig.from_scale(1.2)
        _, grad_a, grad_b = mmd2_and_grad(a, b, cfg)
        h = 1e-5
        for arr, grad, which in ((a, grad_a, 0), (b, grad_b, 1)):
            for idx in np.ndindex(arr.shape):
                up, down = arr.copy(), arr.copy()
                up[idx] += h
                down[idx] -= h
                args_up = (up, b) if which == 0 else (a, up)
                args_down = (down, b) if which == 0 else (a, down)
                fd = (mmd2(*args_up, cfg) - mmd2(*args_down, cfg)) / (2 * h)
                assert abs(fd - grad[idx]) <= 1e-4 * max(abs(fd), 1e-6)

    @settings(max_examples=30, deadline=None)
    @given(r=samples, n_a=st.integers(1, 12), n_b=st.integers(1, 12), d=st.integers(1, 3),
           scale=st.floats(0.1, 10.0), shift=st.floats(-3, 3))
    def test_biased_properties(self, r, n_a, n_b, d, scale, shift):
        a, b = r.normal(size=(n_a, d)), r.normal(shift, 1.0, size=(n_b, d))
        cfg = MmdConfig.from_scale(scale)
        value = mmd2(a, b, cfg)
        assert value >= 0.0
        assert mmd2(b, a, cfg) == value
        assert mmd2(a[r.permutation(n_a)], b[r.permutation(n_b)], cfg) == value
        parts = sum(w * mmd2(a, b, cfg.component(u)) for u, w in enumerate(cfg.weights))
        assert abs(parts - value) <= 1e-12 * max(abs(value), 1e-300) or abs(parts - value) < 1e-15

    @settings(max_examples=20, deadline=None)
    @given(r=samples, n=st.integers(2, 10))
    def test_unbiased_symmetric(self, r, n):
        a, b = r.normal(size=(n, 2)), r.normal(size=(n + 1, 2))
        cfg = MmdConfig.from_scale(1.0, estimator=MmdEstimator.UNBIASED)
        assert mmd2(a, b, cfg) == mmd2(b, a, cfg)
