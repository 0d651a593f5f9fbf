"""Monte-Carlo studies: the linear estimator comparison and the non-linear IV-DG study."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import dgp
from .config import ExperimentConfig, StudyKind
from .errors import ConfigError, LabelingError
from .estimators import dg_average_fit, mae_lambda, mse_prediction, ols_fit, two_stage_fit
from .report import ExperimentReport, Record
from .rng import stream
from .trainer import evaluate, train_ivdg, train_pooled

log = logging.getLogger(__name__)

MAE = "mae_lambda"
MSE = "mse_target"
ACCURACY = "target_accuracy"


def _noise(cfg: ExperimentConfig) -> dgp.NoiseModel:
    return dgp.NoiseModel(scale=dgp.ERROR_SCALE, scale_is_variance=cfg.noise_is_variance)


def _domain_params(cfg, shared, r_div, rng_for) -> list[dgp.DomainParams]:
    params = []
    for m in range(cfg.n_sources + 1):
        p = dgp.sample_domain_params(shared, r_div, rng_for("params", m), domain_id=m, phi_min=cfg.phi_min)
        if not cfg.confounded:
            p = replace(p, alpha=np.zeros_like(p.alpha), beta=np.zeros_like(p.beta))
        params.append(p)
    return params


# ---------------------------------------------------------------------------
# linear study


def linear_trial(cfg: ExperimentConfig, root_seed: int, seed: int, n: int) -> list[Record]:
    """One seed at one sample size: every configured estimator, MAE and target MSE.

    Domain ``0`` is the OLS source and the 2SLS anchor, domain ``1`` the
    instrument; domain ``n_sources`` is the held-out target. All data are
    demeaned within their domain before fitting.
    """
    d_f, d_x = cfg.dims
    r_div = cfg.r_div[0]

    def rng_for(*keys):
        return stream(root_seed, "linear", seed, *keys)

    shared = dgp.sample_shared(d_f, d_x, dgp.FIvtKind.LINEAR, rng_for("shared"), r_div=r_div)
    params = _domain_params(cfg, shared, r_div, rng_for)
    noise = _noise(cfg)
    data = [
        dgp.sample_linear_domain(shared, p, n, rng_for("data", m, n), noise=noise).centered()
        for m, p in enumerate(params)
    ]
    sources, target = data[:-1], data[-1]
    records = []
    for name in cfg.estimators:
        if name == "OLS":
            fit = ols_fit(sources[0].x, sources[0].y)
        elif name == "TwoStageIV":
            fit = two_stage_fit(sources[0].x, sources[0].y, sources[1].x)
        else:
            fit = dg_average_fit(sources[: int(name[len("DgAverage"):])])
        records.append(Record(name, n, seed, MAE, mae_lambda(fit.lambda_hat, shared.lambda_ivt)))
        records.append(Record(name, n, seed, MSE, mse_prediction(fit.predict(target.x), target.y)))
    return records


# ---------------------------------------------------------------------------
# non-linear study


def _sample_nonlinear(cfg, shared, params, rng_for) -> list[dgp.DomainDataset]:
    noise = _noise(cfg)
    data = []
    for m, p in enumerate(params):
        try:
            ds = dgp.sample_nonlinear_domain(shared, p, cfg.n_per_domain, rng_for("data", m), noise=noise)
        except LabelingError:
            log.warning("degenerate labeling in domain %d; resampling once", m)
            ds = dgp.sample_nonlinear_domain(shared, p, cfg.n_per_domain, rng_for("data", m, "retry"), noise=noise)
        data.append(ds)
    return data


def _scaled(train: Sequence[dgp.DomainDataset], test: dgp.DomainDataset, enabled: bool):
    if not enabled:
        return list(train), test
    scale = float(np.vstack([ds.x for ds in train]).std())
    scale = scale if scale > 0 else 1.0
    return [replace(ds, x=ds.x / scale) for ds in train], replace(test, x=test.x / scale)


def nonlinear_trial(cfg: ExperimentConfig, root_seed: int, seed: int, r_div: float) -> list[Record]:
    """One seed at one ``r_div``: IV-DG on the first two sources, pooled training on all of them.

    Inputs are divided by the standard deviation of each method's own
    training sources when ``trainer.standardize_inputs`` is set.
    """
    d_f, d_x = cfg.dims
    settings = cfg.trainer
    rkey = f"r_div={r_div!r}"

    def rng_for(*keys):
        return stream(root_seed, "nonlinear", seed, rkey, *keys)

    shared = dgp.sample_shared(d_f, d_x, dgp.FIvtKind.ABSOLUTE_VALUE, rng_for("shared"), r_div=r_div)
    params = _domain_params(cfg, shared, r_div, rng_for)
    data = _sample_nonlinear(cfg, shared, params, rng_for)
    sources, target = data[:-1], data[-1]
    records = []
    for name in cfg.estimators:
        rng = rng_for("train", name)
        if name == "IVDG":
            train, test = _scaled(sources[:2], target, settings.standardize_inputs)
            model = train_ivdg(train, settings.ivdg_config(d_x), rng)
            acc = evaluate(model.extractor_g, model.classifier_c, test)
        else:
            train, test = _scaled(sources, target, settings.standardize_inputs)
            g, c, _ = train_pooled(train, settings.pooled_config(d_x), rng)
            acc = evaluate(g, c, test)
        records.append(Record(name, r_div, seed, ACCURACY, acc))
    return records


# ---------------------------------------------------------------------------
# drivers


def _run_units(fn: Callable, cfg: ExperimentConfig, root_seed: int, units: list[tuple[int, float]]) -> list[Record]:
    args = [(cfg, root_seed, s, v) for s, v in units]
    if cfg.workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(fn, *zip(*args)))
    else:
        chunks = [fn(*a) for a in args]
    rows = [r for chunk in chunks for r in chunk]
    order = {name: i for i, name in enumerate(cfg.estimators)}
    return sorted(rows, key=lambda r: (order[r.estimator], r.setting, r.seed, r.metric))


def _provenance(cfg: ExperimentConfig, root_seed: int, started: float) -> dict:
    return {
        "kind": cfg.kind.value,
        "root_seed": root_seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "noise": _noise(cfg).describe(),
        "runtime_seconds": round(time.perf_counter() - started, 3),
    }


def run_linear_study(cfg: ExperimentConfig, root_seed: int | None = None) -> ExperimentReport:
    """Sweep ``cfg.sample_sizes`` x ``cfg.n_seeds``; parameters per seed are shared across sizes."""
    if cfg.kind is not StudyKind.LINEAR:
        raise ConfigError("run_linear_study needs a LinearStudy config", field="kind")
    root = cfg.seed if root_seed is None else int(root_seed)
    started = time.perf_counter()
    units = [(s, n) for n in cfg.sample_sizes for s in range(cfg.n_seeds)]
    rows = _run_units(linear_trial, cfg, root, units)
    return ExperimentReport(rows=rows, provenance=_provenance(cfg, root, started))


def run_nonlinear_study(cfg: ExperimentConfig, root_seed: int | None = None) -> ExperimentReport:
    """Sweep ``cfg.r_div`` x ``cfg.n_seeds`` target accuracies for IV-DG and the pooled baseline."""
    if cfg.kind is not StudyKind.NONLINEAR:
        raise ConfigError("run_nonlinear_study needs a NonlinearStudy config", field="kind")
    if cfg.trainer is None:
        raise ConfigError("a trainer section is required", field="trainer")
    root = cfg.seed if root_seed is None else int(root_seed)
    started = time.perf_counter()
    units = [(s, r) for r in cfg.r_div for s in range(cfg.n_seeds)]
    rows = _run_units(nonlinear_trial, cfg, root, units)
    return ExperimentReport(rows=rows, provenance=_provenance(cfg, root, started))


def run_study(cfg: ExperimentConfig, root_seed: int | None = None) -> ExperimentReport:
    if cfg.kind is StudyKind.LINEAR:
        return run_linear_study(cfg, root_seed)
    return run_nonlinear_study(cfg, root_seed)
