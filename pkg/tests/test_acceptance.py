"""Acceptance criteria, each run at its stated tolerance.

Every criterion is a function returning ``(passed, detail)``. The pytest
wrappers assert on it and record one line per criterion, printed in the
terminal summary. ``python3 tests/test_acceptance.py`` prints the same lines
without pytest.

The linear criteria use ``phi_min=0.2``: every domain's loading on the
invariant factor has magnitude at least 0.2, so the instruments stay
relevant (the first-stage moment matrix is bounded away from singular).
With ``phi_min=0`` a just-identified 2SLS estimate has no finite mean and
a single near-irrelevant draw can dominate a 50-seed average; the
unrestricted numbers are printed alongside for reference.
"""

from __future__ import annotations

import math
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ivdg import cli, dgp, mmd, nn, trainer
from ivdg.config import linear_defaults, nonlinear_defaults
from ivdg.estimators import two_stage_fit
from ivdg.rng import stream
from ivdg.studies import MAE, _domain_params, _sample_nonlinear, _scaled, run_linear_study, run_nonlinear_study

RELEVANCE_FLOOR = 0.2
LINE_LOG: list[str] = []


def _record(number: int, title: str, passed: bool, detail: str) -> None:
    LINE_LOG.append(f"{'PASS' if passed else 'FAIL'}  criterion {number:>2} {title}: {detail}")


def _linear_cell(report, estimator, n):
    return report.cell(estimator, n, MAE).mean


# ---------------------------------------------------------------------------
# criteria


def criterion_1():
    started = time.perf_counter()
    report = run_linear_study(linear_defaults(phi_min=RELEVANCE_FLOOR))
    elapsed = time.perf_counter() - started
    iv, ols = _linear_cell(report, "TwoStageIV", 20000), _linear_cell(report, "OLS", 20000)
    raw = run_linear_study(linear_defaults(estimators=("OLS", "TwoStageIV")))
    raw_iv = raw.values("TwoStageIV", 20000, MAE)
    detail = (f"mean MAE IV {iv:.4g} vs 0.5*OLS {0.5 * ols:.4g}; {elapsed:.1f}s "
              f"[phi_min=0 reference: IV mean {np.mean(raw_iv):.4g}, median {np.median(raw_iv):.4g}, "
              f"OLS mean {_linear_cell(raw, 'OLS', 20000):.4g}]")
    return iv < 0.5 * ols and elapsed < 60, detail


def criterion_2():
    sizes = (500, 2000, 8000, 32000)
    started = time.perf_counter()
    cfg = linear_defaults(phi_min=RELEVANCE_FLOOR, sample_sizes=sizes, n_seeds=200, estimators=("TwoStageIV",))
    report = run_linear_study(cfg)
    elapsed = time.perf_counter() - started
    means = [_linear_cell(report, "TwoStageIV", n) for n in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
    detail = f"slope {slope:.3f} (target [-0.65, -0.35]); means {[round(m, 5) for m in means]}; {elapsed:.1f}s"
    return -0.65 <= slope <= -0.35 and elapsed < 300, detail


def criterion_3():
    report = run_linear_study(linear_defaults(phi_min=RELEVANCE_FLOOR, estimators=("TwoStageIV", "DgAverage8")))
    dg, iv = _linear_cell(report, "DgAverage8", 20000), _linear_cell(report, "TwoStageIV", 20000)
    return dg > iv, f"mean MAE DG(8) {dg:.4g} vs IV(2) {iv:.4g}"


def criterion_4():
    n = 20000
    cfg = linear_defaults(phi_min=RELEVANCE_FLOOR, confounded=False, estimators=("OLS", "TwoStageIV"))
    report = run_linear_study(cfg)
    gap = abs(_linear_cell(report, "TwoStageIV", n) - _linear_cell(report, "OLS", n))
    return gap < 10 / math.sqrt(n), f"|MAE IV - MAE OLS| {gap:.3g} vs {10 / math.sqrt(n):.3g}"


def criterion_5():
    z = np.array([[1.0], [2.0], [3.0], [4.0]])
    value = float(two_stage_fit(2 * z, 3 * z[:, 0], z).lambda_hat[0])
    return abs(value - 1.5) < 1e-10, f"lambda_hat {value!r}"


def criterion_6():
    r = stream(6, "acceptance", "mmd")
    a = r.normal(size=(40, 3))
    cfg = mmd.MmdConfig.from_scale(1.0)
    same = mmd.mmd2(a, a, cfg)
    hand = mmd.mmd2(np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]), mmd.MmdConfig.single(1.0))
    hand_err = abs(hand - 2 * (1 - math.exp(-0.5)))
    x, y = r.normal(size=(6, 2)), r.normal(1.0, 1.0, size=(5, 2))
    _, grad, _ = mmd.mmd2_and_grad(x, y, cfg)
    h, worst = 1e-5, 0.0
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        fd = (mmd.mmd2(up, y, cfg) - mmd.mmd2(down, y, cfg)) / (2 * h)
        worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), 1e-6))
    ok = abs(same) < 1e-12 and hand_err < 1e-9 and worst < 1e-4
    return ok, f"identical {same:.1e}, hand error {hand_err:.1e}, gradient rel. error {worst:.1e}"


def criterion_7():
    h, worst = 1e-5, 0.0
    for seed in range(20):
        r = stream(seed, "acceptance", "backprop")
        model = nn.init_mlp((5, 4, 3), r)
        x, labels = r.normal(size=(8, 5)), r.integers(0, 3, size=8)
        out, cache = nn.forward(model, x)
        _, d_out = nn.cross_entropy_loss(out, labels)
        grads, _ = nn.backward(model, cache, d_out)
        params = model.params()
        for k, p in enumerate(params):
            for idx in np.ndindex(p.shape):
                up = [q.copy() for q in params]
                down = [q.copy() for q in params]
                up[k][idx] += h
                down[k][idx] -= h
                lu = nn.cross_entropy_loss(model.with_params(up)(x), labels)[0]
                ld = nn.cross_entropy_loss(model.with_params(down)(x), labels)[0]
                fd = (lu - ld) / (2 * h)
                if abs(fd) < 1e-9 and abs(grads[k][idx]) < 1e-9:
                    continue  # dead unit: both exactly flat
                worst = max(worst, abs(fd - grads[k][idx]) / max(abs(fd), abs(grads[k][idx])))
    return worst < 1e-4, f"max rel. error {worst:.2e} over 20 seeds"


def criterion_8():
    started = time.perf_counter()
    report = run_nonlinear_study(nonlinear_defaults())
    elapsed = time.perf_counter() - started
    iv = np.array(report.values("IVDG", 1.0, "target_accuracy"))
    pooled = np.array(report.values("PooledBaseline", 1.0, "target_accuracy"))
    margin = float(iv.mean() - pooled.mean())
    wins = int(np.sum(iv - pooled > 0))
    detail = (f"IV-DG {iv.mean():.4f} vs pooled {pooled.mean():.4f} (margin {100 * margin:+.2f} points, "
              f"need >= +2); paired wins {wins}/10 (need >= 8); {elapsed:.1f}s")
    return margin >= 0.02 and wins >= 8 and elapsed < 900, detail


def criterion_9():
    cfg = nonlinear_defaults()
    settings = cfg.trainer
    root, seed = cfg.seed, 0
    d_f, d_x = cfg.dims

    def rng_for(*keys):
        return stream(root, "acceptance", "debug", seed, *keys)

    shared = dgp.sample_shared(d_f, d_x, dgp.FIvtKind.ABSOLUTE_VALUE, rng_for("shared"))
    data = _sample_nonlinear(cfg, shared, _domain_params(cfg, shared, 1.0, rng_for), rng_for)
    sources, _ = _scaled(data[:2], data[-1], settings.standardize_inputs)
    ivdg_cfg = replace(settings.ivdg_config(d_x), debug=True)

    checked = {"pairs": 0, "isolation": 0}
    real_pairs, real_unchanged = trainer._check_pairs, trainer._assert_unchanged

    def counting_pairs(y_q, y_1):
        checked["pairs"] += 1
        real_pairs(y_q, y_1)

    def counting_unchanged(before, models, what):
        checked["isolation"] += 1
        real_unchanged(before, models, what)

    trainer._check_pairs, trainer._assert_unchanged = counting_pairs, counting_unchanged
    try:
        model = trainer.train_ivdg(sources, ivdg_cfg, rng_for("train"))
    except Exception as exc:  # noqa: BLE001
        return False, f"{type(exc).__name__}: {exc}"
    finally:
        trainer._check_pairs, trainer._assert_unchanged = real_pairs, real_unchanged
    steps = ivdg_cfg.epochs_iv * ivdg_cfg.steps(len(sources[0]))
    expected_pairs = 2 * steps  # one instrument: stage 1 and stage 2 batches
    expected_isolation = 1 + 2 * ivdg_cfg.epochs_iv
    ok = checked["pairs"] == expected_pairs and checked["isolation"] == expected_isolation and len(model.history) > 0
    return ok, (f"{checked['pairs']} paired batches and {checked['isolation']} isolation snapshots checked "
                f"(expected {expected_pairs} and {expected_isolation})")


def criterion_10():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        outputs = []
        for run in ("first", "second"):
            code = cli.main(["sim-linear", "--seed", "7", "--out", str(tmp / run), "--no-figures"])
            if code != 0:
                return False, f"cli exit code {code}"
            outputs.append((tmp / run / "results.csv").read_bytes())
        cfg = tmp / "nonlinear.yaml"
        cfg.write_text("n_seeds: 2\ntrainer: {pretrain_iterations: 200, iv_iterations: 200, pooled_iterations: 400}\n")
        for run in ("nl-first", "nl-second"):
            code = cli.main(["sim-nonlinear", "--config", str(cfg), "--seed", "7", "--out", str(tmp / run),
                             "--no-figures"])
            if code != 0:
                return False, f"cli exit code {code}"
        nl = [(tmp / run / "results.csv").read_bytes() for run in ("nl-first", "nl-second")]
    same = outputs[0] == outputs[1] and nl[0] == nl[1]
    return same, f"linear {len(outputs[0])} bytes, non-linear {len(nl[0])} bytes, identical={same}"


CRITERIA = {
    1: ("2SLS beats OLS under confounding", criterion_1),
    2: ("2SLS root-n rate", criterion_2),
    3: ("DG averaging stays biased", criterion_3),
    4: ("no-confounding control", criterion_4),
    5: ("two-stage closed-form hand case", criterion_5),
    6: ("MMD correctness", criterion_6),
    7: ("backprop correctness", criterion_7),
    8: ("IV-DG beats pooled baseline", criterion_8),
    9: ("training structural invariants", criterion_9),
    10: ("CLI determinism", criterion_10),
}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    title, fn = CRITERIA[number]
    passed, detail = fn()
    _record(number, title, passed, detail)
    print(LINE_LOG[-1])
    assert passed, detail


def main() -> int:
    failures = 0
    for number in sorted(CRITERIA):
        title, fn = CRITERIA[number]
        passed, detail = fn()
        _record(number, title, passed, detail)
        print(LINE_LOG[-1], flush=True)
        failures += not passed
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
