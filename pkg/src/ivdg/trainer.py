"""Two-stage instrumental-variable training of a feature extractor and classifier.

The loop is::

    pretrain g, c on the pooled sources (cross-entropy)
    g_q <- g for every non-anchor source q
    repeat epochs_iv times:
        for q in non-anchor sources:   # stage 1
            move g_q(x^q) towards g(x^anchor), class by class, with MMD
        fit c on g_q(x^q) against the anchor labels  # stage 2

Batches in both IV stages come from :class:`PairedSampler`, which only
ever pairs rows of the same class, so the same-class indicator of the
losses is enforced by construction.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .dgp import DomainDataset
from .errors import ContractViolation, InvalidArgumentError, IvdgError
from .mmd import DEFAULT_MULTIPLIERS, MmdConfig, median_heuristic, mmd2_and_grad
from .nn import (
    LinearClassifier,
    MlpModel,
    SgdConfig,
    SgdOptimizer,
    backward,
    classifier_backward,
    classifier_forward,
    cross_entropy_loss,
    forward,
    init_classifier,
    init_mlp,
)

log = logging.getLogger(__name__)

#: Rows used to freeze the MMD bandwidth at the start of an epoch.
BANDWIDTH_ROWS = 512


@dataclass(frozen=True)
class IvdgConfig:
    """Hyperparameters of the two-stage training run.

    ``extractor_dims`` are the layer widths of ``g`` and every ``g_q``; the
    first entry must equal the feature dimension. ``steps_per_epoch=None``
    makes one epoch a pass over the data (``ceil(n / batch_size)`` steps).
    ``iv_weights=None`` gives every instrument domain weight 1.
    """

    epochs_pre: int = 20
    epochs_iv: int = 20
    batch_size: int = 64
    iv_weights: tuple[float, ...] | None = None
    anchor_domain: Hashable | None = None
    sgd: SgdConfig = field(default_factory=SgdConfig)
    iv_sgd: SgdConfig | None = None
    mmd_multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    extractor_dims: tuple[int, ...] = (20, 16, 8)
    n_classes: int = 2
    steps_per_epoch: int | None = None
    debug: bool = False

    def __post_init__(self) -> None:
        if self.epochs_pre < 0 or self.epochs_iv < 0:
            raise InvalidArgumentError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise InvalidArgumentError("steps_per_epoch must be >= 1")
        if self.iv_weights is not None:
            if any(w < 0 for w in self.iv_weights):
                raise InvalidArgumentError(f"iv_weights must be non-negative, got {self.iv_weights}")
            object.__setattr__(self, "iv_weights", tuple(float(w) for w in self.iv_weights))
        object.__setattr__(self, "extractor_dims", tuple(int(d) for d in self.extractor_dims))
        object.__setattr__(self, "mmd_multipliers", tuple(float(m) for m in self.mmd_multipliers))

    @property
    def stage_sgd(self) -> SgdConfig:
        return self.iv_sgd or self.sgd

    def steps(self, n_rows: int) -> int:
        if self.steps_per_epoch is not None:
            return self.steps_per_epoch
        return max(1, math.ceil(n_rows / self.batch_size))

    def weights_for(self, n_instruments: int) -> tuple[float, ...]:
        if self.iv_weights is None:
            return (1.0,) * n_instruments
        if len(self.iv_weights) != n_instruments:
            raise InvalidArgumentError(
                f"iv_weights has {len(self.iv_weights)} entries for {n_instruments} instrument domains"
            )
        return self.iv_weights


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    stage: str
    domain: Hashable
    loss: float


@dataclass
class TrainedIvdg:
    extractor_g: MlpModel
    stage1_extractors: dict[Hashable, MlpModel]
    classifier_c: LinearClassifier
    history: list[LossRecord] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict_labels(self.extractor_g, self.classifier_c, x)


class StageError(IvdgError):
    """A component failed; ``stage`` names the phase of the algorithm."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# sampling


def _require_labels(ds: DomainDataset, role: str) -> np.ndarray:
    if ds.labels is None:
        raise InvalidArgumentError(f"{role} {ds.domain_id!r} has no labels")
    return ds.labels


class PairedSampler:
    """Draws same-class minibatches from two labeled domains.

    Each batch picks one class uniformly among the classes both domains
    contain, then draws ``batch_size`` rows of that class with replacement
    from each side. When ``source`` is ``anchor`` both sides get the same
    rows.
    """

    def __init__(self, source: DomainDataset, anchor: DomainDataset, rng: np.random.Generator) -> None:
        y_s = _require_labels(source, "source")
        y_a = _require_labels(anchor, "anchor")
        present_s, present_a = set(np.unique(y_s).tolist()), set(np.unique(y_a).tolist())
        missing = sorted(present_a - present_s)
        if missing:
            warnings.warn(
                f"classes {missing} of anchor {anchor.domain_id!r} are absent from {source.domain_id!r}; skipped",
                stacklevel=2,
            )
        self.classes = sorted(present_s & present_a)
        if not self.classes:
            raise InvalidArgumentError(f"{source.domain_id!r} and anchor share no class")
        self._rows_s = {k: np.flatnonzero(y_s == k) for k in self.classes}
        self._rows_a = {k: np.flatnonzero(y_a == k) for k in self.classes}
        self.source, self.anchor, self.rng = source, anchor, rng

    def sample(self, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(x_source, y_source, x_anchor, y_anchor)``."""
        k = self.classes[int(self.rng.integers(len(self.classes)))]
        i_s = self.rng.choice(self._rows_s[k], size=batch_size, replace=True)
        if self.source is self.anchor:
            i_a = i_s
        else:
            i_a = self.rng.choice(self._rows_a[k], size=batch_size, replace=True)
        return self.source.x[i_s], self.source.labels[i_s], self.anchor.x[i_a], self.anchor.labels[i_a]


def _check_pairs(y_q: np.ndarray, y_1: np.ndarray) -> None:
    if not np.array_equal(y_q, y_1):
        raise ContractViolation("paired batch contains rows of different classes")


# ---------------------------------------------------------------------------
# helpers


def predict_labels(g: MlpModel, c: LinearClassifier, x: np.ndarray) -> np.ndarray:
    """``argmax`` of ``c(g(x))``; ties go to the lowest class index."""
    return np.argmax(classifier_forward(c, g(x)), axis=1)


def evaluate(g: MlpModel, c: LinearClassifier, dataset: DomainDataset) -> float:
    """Fraction of rows of ``dataset`` classified correctly by ``c o g``."""
    labels = _require_labels(dataset, "dataset")
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot evaluate on an empty dataset")
    return float(np.mean(predict_labels(g, c, dataset.x) == labels))


def _snapshot(*models) -> list[np.ndarray]:
    return [p.copy() for m in models for p in m.params()]


def _assert_unchanged(before: list[np.ndarray], models, what: str) -> None:
    after = [p for m in models for p in m.params()]
    if len(before) != len(after) or any(not np.array_equal(a, b) for a, b in zip(before, after)):
        raise ContractViolation(f"{what} changed during a stage that must not touch it")


def _validate_sources(sources: Sequence[DomainDataset]) -> None:
    if len(sources) < 2:
        raise InvalidArgumentError(f"need at least 2 sources, got {len(sources)}")
    label_sets = []
    for ds in sources:
        label_sets.append(tuple(np.unique(_require_labels(ds, "source")).tolist()))
    if len(set(label_sets)) != 1:
        raise InvalidArgumentError(f"sources disagree on their label sets: {label_sets}")
    if len({ds.n_features for ds in sources}) != 1:
        raise InvalidArgumentError("sources disagree on feature dimension")


def init_models(cfg: IvdgConfig, d_x: int, rng: np.random.Generator) -> tuple[MlpModel, LinearClassifier]:
    dims = cfg.extractor_dims
    if dims[0] != d_x:
        raise InvalidArgumentError(f"extractor_dims[0]={dims[0]} but the data have {d_x} features")
    g = init_mlp(dims, rng)
    c = init_classifier(dims[-1], cfg.n_classes, rng)
    return g, c


def _mixed_loss_step(g, c, x, y, opt_g, opt_c):
    feats, cache = forward(g, x)
    logits = classifier_forward(c, feats)
    loss, d_logits = cross_entropy_loss(logits, y)
    grads_c, d_feats = classifier_backward(c, feats, d_logits)
    grads_g, _ = backward(g, cache, d_feats)
    return opt_g.step(g, grads_g), opt_c.step(c, grads_c), loss


# ---------------------------------------------------------------------------
# pretraining


def _epoch_batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    # Walks shuffled passes over the rows; a fresh permutation starts when one is used up.
    order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos >= n:
            order, pos = rng.permutation(n), 0
        yield order[pos : pos + batch_size]
        pos += batch_size


def pretrain(
    sources: Sequence[DomainDataset],
    cfg: IvdgConfig,
    rng: np.random.Generator,
    init: tuple[MlpModel, LinearClassifier] | None = None,
    history: list[LossRecord] | None = None,
) -> tuple[MlpModel, LinearClassifier]:
    """Fit ``g`` and ``c`` by minibatch SGD on the shuffled union of ``sources``.

    One epoch is ``cfg.steps(total rows)`` steps through a fresh permutation.
    The mean cross-entropy of every epoch is appended to ``history``.
    """
    _validate_sources(sources)
    x = np.vstack([ds.x for ds in sources])
    y = np.concatenate([ds.labels for ds in sources])
    g, c = init if init is not None else init_models(cfg, x.shape[1], rng)
    if y.max() >= c.n_classes:
        raise InvalidArgumentError(f"label {y.max()} out of range for {c.n_classes} classes")
    opt_g, opt_c = SgdOptimizer(cfg.sgd), SgdOptimizer(cfg.sgd)
    n = x.shape[0]
    steps = cfg.steps(n)
    for epoch in range(cfg.epochs_pre):
        losses = []
        for idx in _epoch_batches(n, cfg.batch_size, steps, rng):
            g, c, loss = _mixed_loss_step(g, c, x[idx], y[idx], opt_g, opt_c)
            losses.append(loss)
        if history is not None:
            history.append(LossRecord(epoch, "pretrain", "mix", float(np.mean(losses))))
    return g, c


# ---------------------------------------------------------------------------
# stage 1


def _frozen_bandwidth_cfg(g_q: MlpModel, g: MlpModel, sampler: PairedSampler, cfg: IvdgConfig) -> MmdConfig:
    rng = sampler.rng
    src, anc = sampler.source.x, sampler.anchor.x
    i_s = rng.choice(len(src), size=min(BANDWIDTH_ROWS, len(src)), replace=False)
    i_a = rng.choice(len(anc), size=min(BANDWIDTH_ROWS, len(anc)), replace=False)
    scale = median_heuristic(g_q(src[i_s]), g(anc[i_a]))
    return MmdConfig.from_scale(scale, cfg.mmd_multipliers)


def stage1_loss_and_grad(
    g_q: MlpModel, g: MlpModel, x_q: np.ndarray, x_1: np.ndarray, mmd_cfg: MmdConfig
) -> tuple[float, list[np.ndarray]]:
    """Biased MMD between ``g_q(x_q)`` and ``g(x_1)``; gradients only for ``g_q``."""
    target = g(x_1)
    feats, cache = forward(g_q, x_q)
    loss, d_feats, _ = mmd2_and_grad(feats, target, mmd_cfg)
    grads, _ = backward(g_q, cache, d_feats)
    return loss, grads


def _stage1_epoch(g_q, g, sampler, cfg, steps, opt):
    mmd_cfg = _frozen_bandwidth_cfg(g_q, g, sampler, cfg)
    losses = []
    for _ in range(steps):
        x_q, y_q, x_1, y_1 = sampler.sample(cfg.batch_size)
        if cfg.debug:
            _check_pairs(y_q, y_1)
        loss, grads = stage1_loss_and_grad(g_q, g, x_q, x_1, mmd_cfg)
        g_q = opt.step(g_q, grads)
        losses.append(loss)
    return g_q, float(np.mean(losses)) if losses else 0.0


def stage1_fit(
    g: MlpModel,
    source_q: DomainDataset,
    anchor: DomainDataset,
    cfg: IvdgConfig,
    rng: np.random.Generator,
    history: list[LossRecord] | None = None,
) -> MlpModel:
    """Train ``g_q`` (initialized as a copy of the frozen ``g``) for ``cfg.epochs_iv`` epochs."""
    sampler = PairedSampler(source_q, anchor, rng)
    g_q = g.copy()
    opt = SgdOptimizer(cfg.stage_sgd)
    steps = cfg.steps(len(anchor))
    frozen = _snapshot(g) if cfg.debug else None
    for epoch in range(cfg.epochs_iv):
        g_q, loss = _stage1_epoch(g_q, g, sampler, cfg, steps, opt)
        if history is not None:
            history.append(LossRecord(epoch, "stage1", source_q.domain_id, loss))
    if frozen is not None:
        _assert_unchanged(frozen, [g], "g")
    return g_q


# ---------------------------------------------------------------------------
# stage 2


def stage2_loss_and_grad(
    c: LinearClassifier,
    batches: Sequence[tuple[np.ndarray, np.ndarray]],
    weights: Sequence[float],
) -> tuple[float, list[np.ndarray], list[list[np.ndarray]]]:
    """Weighted cross-entropy of ``c`` over per-domain ``(features, anchor_labels)``.

    The loss is ``sum_q (alpha_q / (Q - 1)) * CE_q`` with ``Q - 1 = len(batches)``.

    Returns:
        ``(loss, grads, per_domain_grads)``; ``per_domain_grads[q]`` is the
        already weighted contribution of domain ``q``.
    """
    if len(batches) != len(weights):
        raise InvalidArgumentError("one weight per instrument batch")
    k = len(batches)
    total = 0.0
    grads = [np.zeros_like(p) for p in c.params()]
    per_domain = []
    for (feats, labels), alpha in zip(batches, weights):
        scale = alpha / k
        logits = classifier_forward(c, feats)
        loss, d_logits = cross_entropy_loss(logits, labels)
        g_c, _ = classifier_backward(c, feats, scale * d_logits)
        total += scale * loss
        per_domain.append(g_c)
        for acc, gi in zip(grads, g_c):
            acc += gi
    return total, grads, per_domain


def _stage2_epoch(c, extractors, samplers, weights, cfg, steps, opt):
    losses = []
    for _ in range(steps):
        batches = []
        for q, sampler in samplers.items():
            x_q, y_q, _, y_1 = sampler.sample(cfg.batch_size)
            if cfg.debug:
                _check_pairs(y_q, y_1)
            batches.append((extractors[q](x_q), y_1))
        loss, grads, _ = stage2_loss_and_grad(c, batches, weights)
        c = opt.step(c, grads)
        losses.append(loss)
    return c, float(np.mean(losses)) if losses else 0.0


def stage2_fit(
    c: LinearClassifier,
    stage1_extractors: dict[Hashable, MlpModel],
    sources: Sequence[DomainDataset],
    anchor: DomainDataset,
    cfg: IvdgConfig,
    rng: np.random.Generator,
    history: list[LossRecord] | None = None,
) -> LinearClassifier:
    """Fit ``c`` on the frozen ``g_q`` features of the instrument sources for ``cfg.epochs_iv`` epochs.

    ``sources`` are the non-anchor domains, in the order matching ``cfg.iv_weights``.
    """
    weights = cfg.weights_for(len(sources))
    if not any(w > 0 for w in weights):
        raise InvalidArgumentError("all iv_weights are zero: stage 2 has no training signal")
    samplers = {ds.domain_id: PairedSampler(ds, anchor, rng) for ds in sources}
    opt = SgdOptimizer(cfg.stage_sgd)
    steps = cfg.steps(len(anchor))
    frozen = _snapshot(*stage1_extractors.values()) if cfg.debug else None
    for epoch in range(cfg.epochs_iv):
        c, loss = _stage2_epoch(c, stage1_extractors, samplers, weights, cfg, steps, opt)
        if history is not None:
            history.append(LossRecord(epoch, "stage2", anchor.domain_id, loss))
    if frozen is not None:
        _assert_unchanged(frozen, stage1_extractors.values(), "g_q")
    return c


# ---------------------------------------------------------------------------
# full algorithm


def _split_anchor(sources: Sequence[DomainDataset], anchor_domain) -> tuple[DomainDataset, list[DomainDataset]]:
    if anchor_domain is None:
        return sources[0], list(sources[1:])
    for i, ds in enumerate(sources):
        if ds.domain_id == anchor_domain:
            return ds, [s for j, s in enumerate(sources) if j != i]
    if isinstance(anchor_domain, int) and 0 <= anchor_domain < len(sources):
        i = anchor_domain
        return sources[i], [s for j, s in enumerate(sources) if j != i]
    raise InvalidArgumentError(f"anchor_domain {anchor_domain!r} is not among the sources")


def train_ivdg(sources: Sequence[DomainDataset], cfg: IvdgConfig, rng: np.random.Generator) -> TrainedIvdg:
    """Pretrain, copy ``g`` into every ``g_q``, then alternate stage 1 and stage 2 per epoch.

    Deterministic given ``rng``'s state. With ``cfg.debug`` every batch is
    checked for class pairing and every stage for parameter isolation.

    Raises:
        StageError: Wrapping any component failure with the stage name.
    """
    try:
        _validate_sources(sources)
        anchor, instruments = _split_anchor(sources, cfg.anchor_domain)
        ids = [ds.domain_id for ds in instruments]
        if len(set(ids)) != len(ids) or anchor.domain_id in ids:
            raise InvalidArgumentError("source domain_ids must be unique")
        weights = cfg.weights_for(len(instruments))
        if not any(w > 0 for w in weights):
            raise InvalidArgumentError("all iv_weights are zero: stage 2 has no training signal")
    except IvdgError as exc:
        raise StageError("setup", exc) from exc

    history: list[LossRecord] = []
    try:
        g, c = init_models(cfg, anchor.n_features, rng)
        g, c = pretrain(sources, cfg, rng, init=(g, c), history=history)
    except IvdgError as exc:
        raise StageError("pretrain", exc) from exc

    extractors = {ds.domain_id: g.copy() for ds in instruments}
    if cfg.debug:
        for g_q in extractors.values():
            _assert_unchanged(_snapshot(g), [g_q], "g_q initialization")

    try:
        samplers = {ds.domain_id: PairedSampler(ds, anchor, rng) for ds in instruments}
    except IvdgError as exc:
        raise StageError("stage1", exc) from exc
    opts = {q: SgdOptimizer(cfg.stage_sgd) for q in extractors}
    opt_c = SgdOptimizer(cfg.stage_sgd)
    steps = cfg.steps(len(anchor))

    for epoch in range(cfg.epochs_iv):
        frozen = _snapshot(g, c) if cfg.debug else None
        for q, sampler in samplers.items():
            try:
                extractors[q], loss = _stage1_epoch(extractors[q], g, sampler, cfg, steps, opts[q])
            except IvdgError as exc:
                raise StageError(f"stage1[{q!r}]", exc) from exc
            history.append(LossRecord(epoch, "stage1", q, loss))
        if frozen is not None:
            _assert_unchanged(frozen, [g, c], "g or c")

        frozen = _snapshot(g, *extractors.values()) if cfg.debug else None
        try:
            c, loss = _stage2_epoch(c, extractors, samplers, weights, cfg, steps, opt_c)
        except IvdgError as exc:
            raise StageError("stage2", exc) from exc
        history.append(LossRecord(epoch, "stage2", anchor.domain_id, loss))
        if frozen is not None:
            _assert_unchanged(frozen, [g, *extractors.values()], "g or g_q")
        log.debug("iv epoch %d done", epoch)

    return TrainedIvdg(extractor_g=g, stage1_extractors=extractors, classifier_c=c, history=history)


def train_pooled(
    sources: Sequence[DomainDataset], cfg: IvdgConfig, rng: np.random.Generator
) -> tuple[MlpModel, LinearClassifier, list[LossRecord]]:
    """Pooled cross-entropy baseline: :func:`pretrain` on every source, no IV stages."""
    history: list[LossRecord] = []
    g, c = pretrain(sources, cfg, rng, history=history)
    return g, c, history
