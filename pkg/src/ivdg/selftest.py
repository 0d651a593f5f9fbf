"""Fast invariant checks runnable from an installed package (``ivdg selftest``)."""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from . import dgp, estimators, mmd, nn
from .rng import stream


def _check_two_stage_hand_case() -> None:
    z = np.array([[1.0], [2.0], [3.0], [4.0]])
    fit = estimators.two_stage_fit(2 * z, 3 * z[:, 0], z)
    assert abs(fit.lambda_hat[0] - 1.5) < 1e-10, fit.lambda_hat


def _check_ols_residual_orthogonality() -> None:
    rng = stream(0, "selftest", "ols")
    x = rng.normal(size=(200, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=200)
    fit = estimators.ols_fit(x, y)
    resid = y - x @ fit.lambda_hat
    assert np.max(np.abs(x.T @ resid)) < 1e-8 * np.linalg.norm(x) * np.linalg.norm(y)


def _check_mmd_hand_case() -> None:
    value = mmd.mmd2(np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]), mmd.MmdConfig.single(1.0))
    assert abs(value - 2 * (1 - math.exp(-0.5))) < 1e-9, value


def _check_mmd_gradient() -> None:
    rng = stream(0, "selftest", "mmd")
    a, b = rng.normal(size=(6, 2)), rng.normal(1.0, 1.0, size=(5, 2))
    cfg = mmd.MmdConfig.from_scale(1.0)
    _, grad, _ = mmd.mmd2_and_grad(a, b, cfg)
    h = 1e-5
    for idx in np.ndindex(a.shape):
        up, down = a.copy(), a.copy()
        up[idx] += h
        down[idx] -= h
        fd = (mmd.mmd2(up, b, cfg) - mmd.mmd2(down, b, cfg)) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-4 * max(abs(fd), 1e-6), (idx, fd, grad[idx])


def _check_backprop() -> None:
    rng = stream(0, "selftest", "mlp")
    model = nn.init_mlp((5, 4, 3), rng)
    x, y = rng.normal(size=(7, 5)), rng.integers(0, 3, size=7)

    def loss_of(m):
        return nn.cross_entropy_loss(m(x), y)[0]

    out, cache = nn.forward(model, x)
    _, d_out = nn.cross_entropy_loss(out, y)
    grads, _ = nn.backward(model, cache, d_out)
    params = model.params()
    h = 1e-5
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            down = [q.copy() for q in params]
            up[k][idx] += h
            down[k][idx] -= h
            fd = (loss_of(model.with_params(up)) - loss_of(model.with_params(down))) / (2 * h)
            assert abs(fd - grads[k][idx]) <= 1e-4 * max(abs(fd), 1e-7) + 1e-9, (k, idx)


def _check_dgp_determinism() -> None:
    def draw():
        shared = dgp.sample_shared(2, 3, dgp.FIvtKind.LINEAR, stream(7, "s"))
        params = dgp.sample_domain_params(shared, 1.0, stream(7, "p"))
        return dgp.sample_linear_domain(shared, params, 50, stream(7, "d"))

    a, b = draw(), draw()
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()


CHECKS: dict[str, Callable[[], None]] = {
    "two-stage hand case": _check_two_stage_hand_case,
    "OLS residual orthogonality": _check_ols_residual_orthogonality,
    "MMD hand case": _check_mmd_hand_case,
    "MMD gradient vs finite differences": _check_mmd_gradient,
    "backprop vs finite differences": _check_backprop,
    "DGP determinism": _check_dgp_determinism,
}


def run_selftest(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        try:
            check()
        except AssertionError as exc:
            ok = False
            echo(f"FAIL  {name}: {exc}")
        else:
            echo(f"PASS  {name}")
    return ok
