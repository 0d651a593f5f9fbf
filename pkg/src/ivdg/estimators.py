"""Closed-form linear estimators: OLS, two-stage least squares, DG averaging.

All solves go through a thin QR factorization; no explicit inverses are
formed. None of the estimators fits an intercept; call
:meth:`DomainDataset.centered` (or :func:`demean`) first when the data have
nonzero means.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular

from .dgp import DomainDataset
from .errors import InvalidArgumentError, ShapeError, SingularDesignError, WeakInstrumentError

#: Rank tolerance of every least-squares solve, relative to the largest singular value.
RANK_RTOL = 1e-10
#: Weak-instrument threshold on the first-stage fitted regressors.
WEAK_INSTRUMENT_RTOL = 1e-8


class Estimator(enum.Enum):
    OLS = "OLS"
    TWO_STAGE_IV = "TwoStageIV"
    DG_AVERAGE = "DgAverage"


@dataclass(frozen=True)
class FitResult:
    """Estimated coefficients plus diagnostics.

    ``condition_diagnostic`` is the smallest singular value of the
    normal-equations matrix of the final regression.
    """

    lambda_hat: np.ndarray
    estimator: Estimator
    n_used: int
    condition_diagnostic: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.lambda_hat


def _as_design(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got {x.ndim}-D")
    return x


def _singular_values(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(a, compute_uv=False)


def _lstsq(a: np.ndarray, b: np.ndarray, what: str = "design") -> tuple[np.ndarray, float]:
    """Solve ``min ||a c - b||`` by thin QR; return ``(c, smallest sv of a^T a)``."""
    n, d = a.shape
    if b.shape[0] != n:
        raise ShapeError(f"{what}: {n} rows in the design but {b.shape[0]} in the response")
    if n < d:
        raise SingularDesignError(f"{what}: {n} observations for {d} columns")
    q, r = np.linalg.qr(a, mode="reduced")
    sv = _singular_values(r)
    s_max, s_min = float(sv[0]), float(sv[-1])
    if s_max == 0.0 or s_min < RANK_RTOL * s_max:
        raise SingularDesignError(
            f"{what} is rank deficient (smallest/largest singular value {s_min:.3g}/{s_max:.3g})",
            condition=s_min**2,
        )
    coef = solve_triangular(r, q.T @ b, lower=False)
    return coef, s_min**2


def demean(*arrays: np.ndarray) -> tuple[np.ndarray, ...]:
    """Subtract column means; equivalent to partialling out an intercept."""
    return tuple(np.asarray(a, dtype=float) - np.asarray(a, dtype=float).mean(axis=0) for a in arrays)


def ols_fit(x, y) -> FitResult:
    """Ordinary least squares of ``y`` on ``x`` (no intercept).

    ``y`` may be a vector or an ``n x k`` matrix (multi-output), in which case
    ``lambda_hat`` is ``d x k``.

    Raises:
        SingularDesignError: If ``x`` is rank deficient.
    """
    x = _as_design(x)
    y = np.asarray(y, dtype=float)
    coef, cond = _lstsq(x, y, "x")
    return FitResult(lambda_hat=coef, estimator=Estimator.OLS, n_used=x.shape[0], condition_diagnostic=cond)


def two_stage_fit(x_m, y_m, z) -> FitResult:
    """Two-stage least squares of ``y_m`` on ``x_m`` with instruments ``z``.

    Stage 1 regresses every column of ``x_m`` on ``z`` (``gamma_hat``);
    stage 2 regresses ``y_m`` on the fitted ``x_hat = z gamma_hat``. With
    more instruments than regressors, stage 1 projects onto all of them.

    Raises:
        SingularDesignError: If ``z`` is rank deficient.
        WeakInstrumentError: If ``x_hat`` is numerically rank deficient.
    """
    x_m = _as_design(x_m, "x_m")
    z = _as_design(z, "z")
    y_m = np.asarray(y_m, dtype=float)
    n, d = x_m.shape
    if z.shape[0] != n:
        raise ShapeError(f"z has {z.shape[0]} rows, x_m has {n}")
    if z.shape[1] < d:
        raise InvalidArgumentError(f"under-identified: {z.shape[1]} instruments for {d} regressors")

    if z.shape == x_m.shape and np.array_equal(z, x_m):
        # Projecting x onto its own column space returns x.
        _lstsq(z, x_m[:, :0], "z")
        gamma_hat, x_hat = np.eye(d), x_m
    else:
        gamma_hat, _ = _lstsq(z, x_m, "z")
        x_hat = z @ gamma_hat
    sv = _singular_values(x_hat)
    if sv[0] == 0.0 or sv[-1] < WEAK_INSTRUMENT_RTOL * sv[0]:
        cond = float(sv[-1]) ** 2
        raise WeakInstrumentError(
            f"weak instrument: first-stage fit has singular values {sv[-1]:.3g}/{sv[0]:.3g}", condition=cond
        )
    lambda_hat, cond = _lstsq(x_hat, y_m, "x_hat")
    return FitResult(
        lambda_hat=lambda_hat,
        estimator=Estimator.TWO_STAGE_IV,
        n_used=n,
        condition_diagnostic=cond,
        diagnostics={"gamma_hat": gamma_hat},
    )


def dg_average_fit(datasets: Sequence[DomainDataset]) -> FitResult:
    """Average the per-domain OLS coefficients.

    Raises:
        InvalidArgumentError: With fewer than two datasets or mismatched widths.
        SingularDesignError: Re-raised with the failing domain named.
    """
    if len(datasets) < 2:
        raise InvalidArgumentError(f"dg_average_fit needs >= 2 datasets, got {len(datasets)}")
    widths = {ds.n_features for ds in datasets}
    if len(widths) != 1:
        raise InvalidArgumentError(f"datasets disagree on feature dimension: {sorted(widths)}")
    coefs = []
    for i, ds in enumerate(datasets):
        try:
            coefs.append(ols_fit(ds.x, ds.y).lambda_hat)
        except SingularDesignError as exc:
            name = ds.domain_id if ds.domain_id is not None else i
            raise SingularDesignError(f"domain {name!r}: {exc}", condition=exc.condition) from exc
    lambda_hat = np.mean(coefs, axis=0)
    x_all = np.vstack([ds.x for ds in datasets])
    cond = float(_singular_values(x_all)[-1]) ** 2
    return FitResult(
        lambda_hat=lambda_hat,
        estimator=Estimator.DG_AVERAGE,
        n_used=int(sum(len(ds) for ds in datasets)),
        condition_diagnostic=cond,
        diagnostics={"per_domain": np.array(coefs)},
    )


def mae_lambda(lambda_hat, lambda_true) -> float:
    """Mean absolute coefficient error."""
    a = np.ravel(np.asarray(lambda_hat, dtype=float))
    b = np.ravel(np.asarray(lambda_true, dtype=float))
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean(np.abs(a - b)))


def mse_prediction(y_hat, y) -> float:
    """Mean squared prediction error."""
    a = np.ravel(np.asarray(y_hat, dtype=float))
    b = np.ravel(np.asarray(y, dtype=float))
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))
