"""Synthetic domains drawn from the confounded structural causal model.

Each domain ``m`` is generated as::

    X^m = phi_m^T F^ivt + alpha_m^T F^m + e_x^m
    Y^m = f_ivt(X^m)    + beta_m^T F^m  + e_y^m

``F^ivt`` is the domain-invariant factor. Its rows are drawn once per
experiment and are the *same* rows in every domain, so row ``i`` of two
domains shares the invariant factor. ``F^m`` is the domain-specific
(unobserved) confounder, drawn independently per domain.
"""

from __future__ import annotations

import enum
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import Any, Hashable

import numpy as np

from .errors import InvalidArgumentError, LabelingError

#: Scale parameter of the error normals, N(mu_e, ERROR_SCALE).
ERROR_SCALE = 0.1


class FIvtKind(enum.Enum):
    LINEAR = "linear"
    ABSOLUTE_VALUE = "absolute_value"


@dataclass(frozen=True)
class NoiseModel:
    """How the scale parameter of the error normals is read.

    ``scale_is_variance=True`` treats ``N(mu, 0.1)`` as variance 0.1
    (std ~0.316); ``False`` treats 0.1 as the standard deviation.
    """

    scale: float = ERROR_SCALE
    scale_is_variance: bool = True

    @property
    def std(self) -> float:
        return float(np.sqrt(self.scale)) if self.scale_is_variance else float(self.scale)

    def describe(self) -> dict[str, Any]:
        return {
            "error_scale": self.scale,
            "error_scale_interpretation": "variance" if self.scale_is_variance else "std",
            "error_std": self.std,
        }


DEFAULT_NOISE = NoiseModel()


@dataclass(frozen=True)
class SharedInvariants:
    """Quantities shared by every domain of one experiment.

    Attributes:
        lambda_ivt: Invariant linear readout, length ``d_x``.
        f_ivt_kind: Whether the response is linear in ``x`` or in ``|x|``.
        d_f: Factor dimension.
        d_x: Feature dimension.
        mu_ivt: Mean of the invariant factor ``F^ivt``.
        ivt_seed: Seed of the stream that produces the rows of ``F^ivt``.
    """

    lambda_ivt: np.ndarray
    f_ivt_kind: FIvtKind
    d_f: int
    d_x: int
    mu_ivt: float = 0.0
    ivt_seed: int = 0

    def __post_init__(self) -> None:
        if self.d_f < 1 or self.d_x < 1:
            raise InvalidArgumentError(f"dimensions must be >= 1, got d_f={self.d_f}, d_x={self.d_x}")
        if np.shape(self.lambda_ivt) != (self.d_x,):
            raise InvalidArgumentError(f"lambda_ivt must have shape ({self.d_x},), got {np.shape(self.lambda_ivt)}")


@dataclass(frozen=True)
class DomainParams:
    """Per-domain coefficients of the structural equations."""

    phi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    mu_f: float
    mu_e: float
    domain_id: Hashable = None

    def check(self, shared: SharedInvariants) -> None:
        shape = (shared.d_f, shared.d_x)
        if self.phi.shape != shape or self.alpha.shape != shape:
            raise InvalidArgumentError(
                f"phi/alpha must have shape {shape}, got {self.phi.shape} and {self.alpha.shape}"
            )
        if self.beta.shape != (shared.d_f,):
            raise InvalidArgumentError(f"beta must have shape ({shared.d_f},), got {self.beta.shape}")


@dataclass(frozen=True)
class DomainDataset:
    """One sampled domain.

    ``latent_f_m`` holds the confounder draws and exists for test oracles
    only; estimators never look at it.
    """

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray | None = None
    latent_f_m: np.ndarray | None = None
    domain_id: Hashable = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.x.ndim != 2:
            raise InvalidArgumentError(f"x must be 2-D, got shape {self.x.shape}")
        n = self.x.shape[0]
        if self.y.shape != (n,):
            raise InvalidArgumentError(f"y must have shape ({n},), got {self.y.shape}")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise InvalidArgumentError(f"labels must have shape ({n},), got {self.labels.shape}")
            if self.labels.size and (self.labels.min() < 0):
                raise InvalidArgumentError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def centered(self) -> DomainDataset:
        """Copy with ``x`` and ``y`` demeaned within the domain.

        Fitting slopes on centered data is equivalent to fitting with an
        intercept, which absorbs the nonzero factor and error means.
        """
        return replace(self, x=self.x - self.x.mean(axis=0), y=self.y - self.y.mean())

    def subset(self, index: np.ndarray) -> DomainDataset:
        return replace(
            self,
            x=self.x[index],
            y=self.y[index],
            labels=None if self.labels is None else self.labels[index],
            latent_f_m=None if self.latent_f_m is None else self.latent_f_m[index],
        )


LabelRule = Callable[[np.ndarray], np.ndarray]


def median_split(y: np.ndarray) -> np.ndarray:
    """Label rows whose response exceeds the within-domain median as class 1.

    Raises:
        LabelingError: If the split leaves a class empty (e.g. constant ``y``).
    """
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise InvalidArgumentError("median split needs at least 2 observations")
    labels = (y > np.median(y)).astype(np.int64)
    counts = np.bincount(labels, minlength=2)
    if counts.min() == 0:
        raise LabelingError(f"degenerate labeling: class counts {counts.tolist()}")
    return labels


def _uniform(rng: np.random.Generator, bound: float, size=None):
    return rng.uniform(-bound, bound, size=size)


def sample_shared(
    d_f: int,
    d_x: int,
    kind: FIvtKind,
    rng: np.random.Generator,
    r_div: float = 1.0,
) -> SharedInvariants:
    """Draw the experiment-wide invariants.

    ``lambda_ivt`` entries are i.i.d. Unif(-1, 1); the invariant factor mean
    is Unif(-r_div, r_div).
    """
    if d_f < 1 or d_x < 1:
        raise InvalidArgumentError(f"dimensions must be >= 1, got d_f={d_f}, d_x={d_x}")
    if r_div < 0:
        raise InvalidArgumentError(f"r_div must be >= 0, got {r_div}")
    lambda_ivt = _uniform(rng, 1.0, size=d_x)
    mu_ivt = float(_uniform(rng, r_div)) if r_div > 0 else 0.0
    ivt_seed = int(rng.integers(0, 2**63 - 1))
    return SharedInvariants(
        lambda_ivt=lambda_ivt, f_ivt_kind=FIvtKind(kind), d_f=d_f, d_x=d_x, mu_ivt=mu_ivt, ivt_seed=ivt_seed
    )


def _signed_magnitude(rng: np.random.Generator, size, lo: float, hi: float) -> np.ndarray:
    # |v| ~ Unif(lo, hi) with a random sign; lo = 0 gives Unif(-hi, hi).
    magnitude = rng.uniform(lo, hi, size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return sign * magnitude


def sample_domain_params(
    shared: SharedInvariants,
    r_div: float,
    rng: np.random.Generator,
    domain_id: Hashable = None,
    phi_min: float = 0.0,
) -> DomainParams:
    """Draw one domain's coefficients.

    ``phi`` ~ Unif(-1, 1), ``alpha`` and ``beta`` ~ Unif(-0.5, 0.5),
    ``mu_f`` ~ Unif(-r_div, r_div) and ``mu_e`` ~ Unif(-0.1, 0.1).

    ``phi_min > 0`` restricts ``|phi|`` to ``[phi_min, 1)``, keeping the
    instrument relevance bounded away from zero.
    """
    if r_div < 0:
        raise InvalidArgumentError(f"r_div must be >= 0, got {r_div}")
    if not 0.0 <= phi_min < 1.0:
        raise InvalidArgumentError(f"phi_min must lie in [0, 1), got {phi_min}")
    shape = (shared.d_f, shared.d_x)
    if phi_min > 0:
        phi = _signed_magnitude(rng, shape, phi_min, 1.0)
    else:
        phi = _uniform(rng, 1.0, size=shape)
    alpha = _uniform(rng, 0.5, size=shape)
    beta = _uniform(rng, 0.5, size=shared.d_f)
    mu_f = float(_uniform(rng, r_div)) if r_div > 0 else 0.0
    mu_e = float(_uniform(rng, 0.1))
    return DomainParams(phi=phi, alpha=alpha, beta=beta, mu_f=mu_f, mu_e=mu_e, domain_id=domain_id)


def sample_invariant_factor(shared: SharedInvariants, n: int) -> np.ndarray:
    """Rows of ``F^ivt`` (``n x d_f``), identical for every domain of the experiment."""
    rng = np.random.default_rng(shared.ivt_seed)
    return rng.normal(shared.mu_ivt, 1.0, size=(n, shared.d_f))


def _sample_features(
    shared: SharedInvariants,
    params: DomainParams,
    n: int,
    rng: np.random.Generator,
    noise: NoiseModel,
    errors: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    params.check(shared)
    f_ivt = sample_invariant_factor(shared, n)
    f_m = rng.normal(params.mu_f, 1.0, size=(n, shared.d_f))
    e_x = rng.normal(params.mu_e, noise.std, size=(n, shared.d_x))
    e_y = rng.normal(params.mu_e, noise.std, size=n)
    if not errors:
        e_x = np.zeros_like(e_x)
        e_y = np.zeros_like(e_y)
    x = f_ivt @ params.phi + f_m @ params.alpha + e_x
    return x, f_m, e_y


def _metadata(shared: SharedInvariants, params: DomainParams, noise: NoiseModel) -> dict[str, Any]:
    return {"f_ivt_kind": shared.f_ivt_kind.value, "domain_id": params.domain_id, **noise.describe()}


def sample_linear_domain(
    shared: SharedInvariants,
    params: DomainParams,
    n: int,
    rng: np.random.Generator,
    *,
    noise: NoiseModel = DEFAULT_NOISE,
    errors: bool = True,
) -> DomainDataset:
    """Sample ``n`` rows of a linear domain.

    ``errors=False`` zeroes both error terms (test hook).
    """
    if shared.f_ivt_kind is not FIvtKind.LINEAR:
        raise InvalidArgumentError("sample_linear_domain needs f_ivt_kind=LINEAR")
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    x, f_m, e_y = _sample_features(shared, params, n, rng, noise, errors)
    y = x @ shared.lambda_ivt + f_m @ params.beta + e_y
    return DomainDataset(
        x=x, y=y, latent_f_m=f_m, domain_id=params.domain_id, metadata=_metadata(shared, params, noise)
    )


def sample_nonlinear_domain(
    shared: SharedInvariants,
    params: DomainParams,
    n: int,
    rng: np.random.Generator,
    label_rule: LabelRule = median_split,
    *,
    noise: NoiseModel = DEFAULT_NOISE,
    errors: bool = True,
) -> DomainDataset:
    """Sample ``n`` labeled rows with response ``lambda_ivt^T |x| + beta^T f_m + e_y``.

    Raises:
        LabelingError: If ``label_rule`` yields a single class.
    """
    if shared.f_ivt_kind is not FIvtKind.ABSOLUTE_VALUE:
        raise InvalidArgumentError("sample_nonlinear_domain needs f_ivt_kind=ABSOLUTE_VALUE")
    if n < 2:
        raise InvalidArgumentError(f"n must be >= 2, got {n}")
    x, f_m, e_y = _sample_features(shared, params, n, rng, noise, errors)
    y = nonlinear_response(x, shared.lambda_ivt) + f_m @ params.beta + e_y
    labels = label_rule(y)
    return DomainDataset(
        x=x,
        y=y,
        labels=labels,
        latent_f_m=f_m,
        domain_id=params.domain_id,
        metadata=_metadata(shared, params, noise),
    )


def nonlinear_response(x: np.ndarray, lambda_ivt: np.ndarray) -> np.ndarray:
    """Invariant part of the non-linear response, ``lambda^T |x|`` per row."""
    return np.abs(np.atleast_2d(x)) @ np.asarray(lambda_ivt, dtype=float)
