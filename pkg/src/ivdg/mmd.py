"""Multi-kernel maximum mean discrepancy with Gaussian kernels."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InvalidArgumentError

#: Bandwidth multipliers applied to the median heuristic.
DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
MEDIAN_MAX_ROWS = 2000


class MmdEstimator(enum.Enum):
    BIASED = "biased"
    UNBIASED = "unbiased"


@dataclass(frozen=True)
class MmdConfig:
    """Convex combination of Gaussian kernels ``exp(-|x - y|^2 / (2 sigma_u^2))``."""

    bandwidths: tuple[float, ...]
    weights: tuple[float, ...]
    estimator: MmdEstimator = MmdEstimator.BIASED

    def __post_init__(self) -> None:
        bw = np.asarray(self.bandwidths, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if bw.ndim != 1 or bw.size == 0 or bw.shape != w.shape:
            raise InvalidArgumentError("bandwidths and weights must be non-empty and of equal length")
        if np.any(bw <= 0) or np.any(np.diff(bw) <= 0):
            raise InvalidArgumentError(f"bandwidths must be positive and strictly increasing: {self.bandwidths}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"weights must be a convex combination: {self.weights}")
        object.__setattr__(self, "bandwidths", tuple(float(v) for v in bw))
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "estimator", MmdEstimator(self.estimator))

    @classmethod
    def from_scale(
        cls,
        scale: float,
        multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
        estimator: MmdEstimator = MmdEstimator.BIASED,
    ) -> MmdConfig:
        """Equal-weight kernels with bandwidths ``scale * multipliers``."""
        k = len(multipliers)
        return cls(tuple(scale * m for m in multipliers), (1.0 / k,) * k, estimator)

    @classmethod
    def single(cls, bandwidth: float, estimator: MmdEstimator = MmdEstimator.BIASED) -> MmdConfig:
        return cls((float(bandwidth),), (1.0,), estimator)

    def component(self, u: int) -> MmdConfig:
        """The ``u``-th kernel on its own."""
        return MmdConfig.single(self.bandwidths[u], self.estimator)


def _as_sample(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 1-D or 2-D")
    return a


def median_heuristic(a, b, max_rows: int = MEDIAN_MAX_ROWS) -> float:
    """Median pairwise Euclidean distance over the pooled sample.

    Pools larger than ``max_rows`` are thinned to ``max_rows`` evenly spaced
    rows. Returns 1.0 when the median distance is zero.
    """
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    pooled = np.vstack([a, b])
    if pooled.shape[0] < 2:
        raise InvalidArgumentError("median heuristic needs at least two points")
    if pooled.shape[0] > max_rows:
        pooled = pooled[np.linspace(0, pooled.shape[0] - 1, max_rows).astype(int)]
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def _exact_mean(values: np.ndarray, count: int) -> float:
    # Summing sorted entries makes the result independent of row order.
    return float(np.sort(values, axis=None).sum()) / count


def _terms(a: np.ndarray, b: np.ndarray, cfg: MmdConfig):
    n_a, n_b = a.shape[0], b.shape[0]
    unbiased = cfg.estimator is MmdEstimator.UNBIASED
    if unbiased and (n_a < 2 or n_b < 2):
        raise InvalidArgumentError("the unbiased estimator needs at least two rows per sample")
    d_aa = cdist(a, a, "sqeuclidean")
    d_bb = cdist(b, b, "sqeuclidean")
    d_ab = cdist(a, b, "sqeuclidean")
    if unbiased:
        c_aa, c_bb = n_a * (n_a - 1), n_b * (n_b - 1)
    else:
        c_aa, c_bb = n_a * n_a, n_b * n_b
    return d_aa, d_bb, d_ab, c_aa, c_bb, unbiased


def _kernels(d: np.ndarray, sigma: float, drop_diagonal: bool) -> np.ndarray:
    k = np.exp(-d / (2.0 * sigma * sigma))
    if drop_diagonal:
        np.fill_diagonal(k, 0.0)
    return k


def mmd2(a, b, cfg: MmdConfig) -> float:
    """Squared MMD between samples ``a`` (``n_a x d``) and ``b`` (``n_b x d``).

    The biased (V-statistic) estimate is non-negative; the unbiased
    U-statistic drops the diagonal kernel terms and may be negative.
    """
    return mmd2_and_grad(a, b, cfg, grad=False)[0]


def mmd2_and_grad(a, b, cfg: MmdConfig, grad: bool = True):
    """Return ``(mmd2, d/da, d/db)``; the gradients are ``None`` if ``grad`` is false."""
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidArgumentError("empty sample")
    d_aa, d_bb, d_ab, c_aa, c_bb, unbiased = _terms(a, b, cfg)
    n_a, n_b = a.shape[0], b.shape[0]
    c_ab = n_a * n_b

    value = 0.0
    w_aa = np.zeros_like(d_aa) if grad else None
    w_bb = np.zeros_like(d_bb) if grad else None
    w_ab = np.zeros_like(d_ab) if grad else None
    for sigma, beta in zip(cfg.bandwidths, cfg.weights):
        k_aa = _kernels(d_aa, sigma, unbiased)
        k_bb = _kernels(d_bb, sigma, unbiased)
        k_ab = _kernels(d_ab, sigma, False)
        term = _exact_mean(k_aa, c_aa) + _exact_mean(k_bb, c_bb) - 2.0 * _exact_mean(k_ab, c_ab)
        value += beta * term
        if grad:
            s2 = sigma * sigma
            w_aa += (beta / s2) * k_aa
            w_bb += (beta / s2) * k_bb
            w_ab += (beta / s2) * k_ab
    if not unbiased:
        # The V-statistic is a squared norm; clip rounding noise below zero.
        value = max(value, 0.0)
    if not grad:
        return value, None, None

    # d k(x, y) / dx = -k(x, y) (x - y) / sigma^2; symmetric terms appear twice.
    def pull(w: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        return w.sum(axis=1)[:, None] * p - w @ q

    grad_a = -2.0 / c_aa * pull(w_aa, a, a) + 2.0 / c_ab * pull(w_ab, a, b)
    grad_b = -2.0 / c_bb * pull(w_bb, b, b) + 2.0 / c_ab * pull(w_ab.T, b, a)
    return value, grad_a, grad_b
