"""Experiment configuration: dataclasses, defaults, and YAML/JSON loading."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .nn import SgdConfig
from .trainer import IvdgConfig

SEED_ENV_VAR = "IVDG_SEED"
DEFAULT_ROOT_SEED = 20230101

LINEAR_ESTIMATORS = ("OLS", "TwoStageIV", *(f"DgAverage{k}" for k in range(2, 9)))
NONLINEAR_ESTIMATORS = ("IVDG", "PooledBaseline")


class StudyKind(enum.Enum):
    LINEAR = "LinearStudy"
    NONLINEAR = "NonlinearStudy"

    @classmethod
    def parse(cls, value: Any) -> StudyKind:
        aliases = {"linear": cls.LINEAR, "nonlinear": cls.NONLINEAR, "non-linear": cls.NONLINEAR}
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            if value.lower() in aliases:
                return aliases[value.lower()]
            for kind in cls:
                if kind.value == value:
                    return kind
        raise ConfigError(f"unknown study kind {value!r}", field="kind")


@dataclass(frozen=True)
class TrainerSettings:
    """Trainer section of a non-linear study.

    Budgets are counted in SGD iterations (``steps_per_epoch`` steps form
    one epoch). The pooled baseline spends ``pooled_iterations``; IV-DG
    spends ``pretrain_iterations`` pretraining plus ``iv_iterations`` IV
    steps.
    """

    extractor_hidden: tuple[int, ...] = (16, 8)
    learning_rate: float = 0.01
    iv_learning_rate: float | None = None
    momentum: float = 0.0
    batch_size: int = 64
    steps_per_epoch: int = 100
    pretrain_iterations: int = 2000
    iv_iterations: int = 2000
    pooled_iterations: int = 4000
    iv_weights: tuple[float, ...] | None = None
    anchor_domain: int = 0
    mmd_multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    standardize_inputs: bool = True
    debug: bool = False

    def ivdg_config(self, d_x: int, *, pretrain_iterations: int | None = None, iv_iterations: int | None = None) -> IvdgConfig:
        pre = self.pretrain_iterations if pretrain_iterations is None else pretrain_iterations
        iv = self.iv_iterations if iv_iterations is None else iv_iterations
        spe = self.steps_per_epoch
        sgd = SgdConfig(self.learning_rate, self.batch_size, self.momentum)
        iv_sgd = None
        if self.iv_learning_rate is not None:
            iv_sgd = SgdConfig(self.iv_learning_rate, self.batch_size, self.momentum)
        return IvdgConfig(
            epochs_pre=-(-pre // spe),
            epochs_iv=-(-iv // spe),
            batch_size=self.batch_size,
            iv_weights=self.iv_weights,
            anchor_domain=self.anchor_domain,
            sgd=sgd,
            iv_sgd=iv_sgd,
            mmd_multipliers=self.mmd_multipliers,
            extractor_dims=(d_x, *self.extractor_hidden),
            steps_per_epoch=spe,
            debug=self.debug,
        )

    def pooled_config(self, d_x: int) -> IvdgConfig:
        return self.ivdg_config(d_x, pretrain_iterations=self.pooled_iterations, iv_iterations=0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one study.

    ``r_div`` is a sweep for the non-linear study and a single value for the
    linear one. ``phi_min > 0`` keeps ``|phi|`` away from zero, i.e. keeps
    the instruments relevant. ``confounded=False`` zeroes ``alpha`` and
    ``beta`` (no-confounding control).
    """

    kind: StudyKind = StudyKind.LINEAR
    n_sources: int = 8
    n_per_domain: int = 20000
    sample_sizes: tuple[int, ...] = (20000,)
    r_div: tuple[float, ...] = (1.0,)
    dims: tuple[int, int] = (1, 1)
    n_seeds: int = 50
    estimators: tuple[str, ...] = LINEAR_ESTIMATORS
    trainer: TrainerSettings | None = None
    output_dir: str = "results"
    seed: int = DEFAULT_ROOT_SEED
    phi_min: float = 0.0
    confounded: bool = True
    noise_is_variance: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        validate(self)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["kind"] = self.kind.value
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_seed(self, seed: int) -> ExperimentConfig:
        return dataclasses.replace(self, seed=int(seed))


def validate(cfg: ExperimentConfig) -> None:
    if cfg.n_seeds < 1:
        raise ConfigError("must be >= 1", field="n_seeds")
    if cfg.n_sources < 1:
        raise ConfigError("must be >= 1", field="n_sources")
    if cfg.n_per_domain < 2:
        raise ConfigError("must be >= 2", field="n_per_domain")
    if len(cfg.dims) != 2 or min(cfg.dims) < 1:
        raise ConfigError("must be two positive ints (d_f, d_x)", field="dims")
    if not cfg.r_div or any(r < 0 for r in cfg.r_div):
        raise ConfigError("must be a non-empty list of non-negative reals", field="r_div")
    if not 0.0 <= cfg.phi_min < 1.0:
        raise ConfigError("must lie in [0, 1)", field="phi_min")
    if cfg.workers < 1:
        raise ConfigError("must be >= 1", field="workers")
    allowed = LINEAR_ESTIMATORS if cfg.kind is StudyKind.LINEAR else NONLINEAR_ESTIMATORS
    unknown = [e for e in cfg.estimators if e not in allowed]
    if unknown or not cfg.estimators:
        raise ConfigError(f"unknown or empty estimator list {unknown or []}; allowed: {list(allowed)}", field="estimators")
    if cfg.kind is StudyKind.LINEAR:
        if not cfg.sample_sizes or any(n < 2 for n in cfg.sample_sizes):
            raise ConfigError("must be a non-empty list of ints >= 2", field="sample_sizes")
        if len(cfg.r_div) != 1:
            raise ConfigError("the linear study takes a single r_div", field="r_div")
        if "TwoStageIV" in cfg.estimators and cfg.n_sources < 2:
            raise ConfigError("TwoStageIV needs at least 2 sources", field="n_sources")
        for e in cfg.estimators:
            if e.startswith("DgAverage") and int(e[len("DgAverage"):]) > cfg.n_sources:
                raise ConfigError(f"{e} needs {e[len('DgAverage'):]} sources", field="estimators")
    else:
        if cfg.n_sources < 2:
            raise ConfigError("the non-linear study needs at least 2 sources", field="n_sources")
        if "IVDG" in cfg.estimators and cfg.trainer is None:
            raise ConfigError("IVDG needs a trainer section", field="trainer")


# ---------------------------------------------------------------------------
# presets


def linear_defaults(**overrides: Any) -> ExperimentConfig:
    base = dict(kind=StudyKind.LINEAR, n_per_domain=20000, sample_sizes=(20000,), dims=(1, 1), n_seeds=50)
    base.update(overrides)
    return ExperimentConfig(**base)


def nonlinear_defaults(**overrides: Any) -> ExperimentConfig:
    """Desk-scale non-linear preset (d_f=30, d_x=20, 2000 rows per domain)."""
    base = dict(
        kind=StudyKind.NONLINEAR,
        n_per_domain=2000,
        sample_sizes=(2000,),
        r_div=(1.0,),
        dims=(30, 20),
        n_seeds=10,
        estimators=NONLINEAR_ESTIMATORS,
        trainer=TrainerSettings(),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def nonlinear_paper_scale(**overrides: Any) -> ExperimentConfig:
    """Paper-scale preset: d_f=1500, d_x=600, 10000 rows, layers 600-256-128-64."""
    base = dict(
        n_per_domain=10000,
        sample_sizes=(10000,),
        dims=(1500, 600),
        trainer=TrainerSettings(extractor_hidden=(256, 128, 64)),
    )
    base.update(overrides)
    return nonlinear_defaults(**base)


# ---------------------------------------------------------------------------
# loading

def _coerce(name: str, value: Any, expected: Any) -> Any:
    if value is None:
        return None
    try:
        if expected is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if expected is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if expected is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if expected is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {expected.__name__}, got {value!r}", field=name) from None
    return value


def _tuple_of(name: str, value: Any, item_type: type) -> tuple:
    if isinstance(value, (int, float, str)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"expected a list, got {value!r}", field=name)
    return tuple(_coerce(name, v, item_type) for v in value)


_TOP_TYPES = {
    "n_sources": int, "n_per_domain": int, "n_seeds": int, "output_dir": str, "seed": int,
    "phi_min": float, "confounded": bool, "noise_is_variance": bool, "workers": int,
}
_TOP_TUPLE_TYPES = {"sample_sizes": int, "r_div": float, "dims": int, "estimators": str}
_TRAINER_TYPES = {
    "learning_rate": float, "iv_learning_rate": float, "momentum": float, "batch_size": int,
    "steps_per_epoch": int, "pretrain_iterations": int, "iv_iterations": int, "pooled_iterations": int,
    "anchor_domain": int, "standardize_inputs": bool, "debug": bool,
}
_TRAINER_TUPLE_TYPES = {"extractor_hidden": int, "iv_weights": float, "mmd_multipliers": float}


def _parse_trainer(raw: Any) -> TrainerSettings:
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", field="trainer")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        name = f"trainer.{key}"
        if key in _TRAINER_TYPES:
            kwargs[key] = _coerce(name, value, _TRAINER_TYPES[key])
        elif key in _TRAINER_TUPLE_TYPES:
            kwargs[key] = None if value is None else _tuple_of(name, value, _TRAINER_TUPLE_TYPES[key])
        else:
            raise ConfigError("unknown field", field=name)
    for key in ("batch_size", "steps_per_epoch"):
        if key in kwargs and kwargs[key] < 1:
            raise ConfigError("must be >= 1", field=f"trainer.{key}")
    for key in ("pretrain_iterations", "iv_iterations", "pooled_iterations"):
        if key in kwargs and kwargs[key] < 0:
            raise ConfigError("must be >= 0", field=f"trainer.{key}")
    if kwargs.get("learning_rate", 1.0) <= 0:
        raise ConfigError("must be > 0", field="trainer.learning_rate")
    return TrainerSettings(**kwargs)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build a config from a mapping; absent fields take the preset defaults of ``kind``."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    raw = dict(raw)
    kind = StudyKind.parse(raw.pop("kind", StudyKind.LINEAR.value))
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _TOP_TYPES:
            kwargs[key] = _coerce(key, value, _TOP_TYPES[key])
        elif key in _TOP_TUPLE_TYPES:
            kwargs[key] = _tuple_of(key, value, _TOP_TUPLE_TYPES[key])
        elif key == "trainer":
            kwargs[key] = None if value is None else _parse_trainer(value)
        else:
            raise ConfigError("unknown field", field=key)
    if "n_per_domain" in kwargs and "sample_sizes" not in kwargs:
        kwargs["sample_sizes"] = (kwargs["n_per_domain"],)
    preset = linear_defaults if kind is StudyKind.LINEAR else nonlinear_defaults
    try:
        return preset(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None, kind: StudyKind | None = None) -> ExperimentConfig:
    """Read a YAML (or JSON) config file; ``path=None`` yields the preset of ``kind``."""
    if path is None:
        raw: dict[str, Any] = {}
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a mapping")
    if kind is not None:
        if "kind" in raw and StudyKind.parse(raw["kind"]) is not kind:
            raise ConfigError(f"config declares {raw['kind']!r} but {kind.value} was requested", field="kind")
        raw = {**raw, "kind": kind.value}
    return config_from_dict(raw)


def resolve_seed(cli_seed: int | None, cfg: ExperimentConfig) -> int:
    """Root seed precedence: command line, then ``IVDG_SEED``, then the config."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={env!r} is not an integer", field=SEED_ENV_VAR) from None
    return cfg.seed
