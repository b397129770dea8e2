"""The joint training loop.

One classifier is optimized over any combination of loss terms:

  ss  supervised cross-entropy on the labeled source batch
  tu  prior-enforcing objective on the unlabeled target batch
  su  the same objective re-applied to the source batch treated as unlabeled
      (always with the empirical source prior)
  ta  adversarial push-to-uniform on fake target rows
  sa  adversarial push-to-uniform on fake source rows
  ts  supervised cross-entropy on oracle-labeled target rows; evaluation
      baseline only, exclusive of everything else

Reductions are sums over the batch; enabled terms add with per-term weights
(default 1). A term with weight 0 is treated as disabled: its code never runs,
so "weight 0" and "flag off" produce bit-identical trajectories.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Batch, Batcher, Dataset, DomainPair, empirical_prior
from .errors import ConfigError, NonFiniteLossError
from .evaluation import evaluate
from .fake import FakeSourceConfig, FeatureStats, gaussian_fakes, generator_fakes, generator_step
from .losses import contradist_loss, make_prior, pseudo_label_select, source_ce, adv_bce
from .model import Architecture, ParamSet, backward, forward, init_params, theta_names, phi_names
from .numerics import (
    STREAM_FAKE_SOURCE,
    STREAM_FAKE_TARGET,
    STREAM_SOURCE_SHUFFLE,
    STREAM_TARGET_SHUFFLE,
    STREAM_WEIGHT_INIT,
    Rng,
)
from .optim import OptimizerState, adam_update

TERMS = ("ss", "tu", "su", "ta", "sa", "ts")


@dataclass(frozen=True)
class LossCombo:
    ss: bool = False
    tu: bool = False
    su: bool = False
    ta: bool = False
    sa: bool = False
    ts: bool = False

    def __post_init__(self):
        names = self.names()
        if not names:
            raise ConfigError("loss combo must enable at least one term")
        if self.ts and len(names) > 1:
            raise ConfigError("ts is an exclusive baseline; combine it with nothing")

    @classmethod
    def parse(cls, text: str) -> "LossCombo":
        toks = [t.strip() for t in text.replace("+", ",").split(",") if t.strip()]
        for t in toks:
            if t not in TERMS:
                raise ConfigError(f"unknown loss term {t!r}; valid: {', '.join(TERMS)}")
        return cls(**{t: True for t in toks})

    def names(self) -> tuple[str, ...]:
        return tuple(t for t in TERMS if getattr(self, t))

    def __str__(self) -> str:
        return "+".join(self.names())


@dataclass(frozen=True)
class TrainConfig:
    combo: LossCombo
    epochs: int
    batch_size: int = 128
    lr: float = 0.001
    lr_decay: float = 0.6
    lr_decay_every: int = 30
    seed: int = 0
    prior: tuple | None = None  # None = assume the source prior for the target
    hidden: tuple = (128, 128)
    weights: dict = field(default_factory=dict)  # term -> weight, default 1.0
    fake: FakeSourceConfig = field(default_factory=FakeSourceConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    timing: bool = True
    oracle: bool = False  # unlock target-train labels (needed by ts)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr > 0.0):
            raise ConfigError("lr must be > 0")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        for term, w in self.weights.items():
            if term not in TERMS:
                raise ConfigError(f"weight for unknown term {term!r}")
            if w < 0:
                raise ConfigError(f"weight for {term} must be >= 0, got {w}")

    def weight(self, term: str) -> float:
        return float(self.weights.get(term, 1.0))

    def enabled(self) -> tuple[str, ...]:
        """Terms whose flag is on and whose weight is nonzero."""
        return tuple(t for t in self.combo.names() if self.weight(t) != 0.0)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


def resolve_prior(config: TrainConfig, source: Dataset) -> np.ndarray:
    """Target class prior: the configured vector, else the source's empirical one."""
    if config.prior is not None:
        return make_prior(config.prior, source.num_classes)
    return empirical_prior(source)


def build_architecture(config: TrainConfig, feature_dim: int, num_classes: int) -> Architecture:
    arch = Architecture.mlp(feature_dim, config.hidden, num_classes)
    needs_gen = config.fake.mode == "generator" and any(t in config.enabled() for t in ("ta", "sa"))
    if needs_gen:
        arch = arch.with_generator(config.fake.noise_dim, config.fake.gen_hidden)
    return arch


@dataclass
class StreamBundle:
    """Long-lived fake-sample streams; one per purpose."""

    fake_target: Rng
    fake_source: Rng

    @classmethod
    def for_seed(cls, seed: int) -> "StreamBundle":
        return cls(Rng(seed, STREAM_FAKE_TARGET), Rng(seed, STREAM_FAKE_SOURCE))


@dataclass
class Priors:
    target: np.ndarray | None = None
    source: np.ndarray | None = None


@dataclass
class FakeContext:
    """Per-run inputs for fake-row production in gaussian mode."""

    target_stats: FeatureStats | None = None
    source_stats: FeatureStats | None = None


def _check_finite(term: str, value: float, epoch=None, step=None):
    if not np.isfinite(value):
        raise NonFiniteLossError(term, value, epoch, step)


def train_step(
    params: ParamSet,
    opt_theta: OptimizerState,
    opt_phi: OptimizerState | None,
    sup_batch,
    target_batch,
    config: TrainConfig,
    streams: StreamBundle,
    priors: Priors,
    fake_ctx: FakeContext,
    lr: float,
    epoch=None,
    step=None,
):
    """One optimization step over the enabled terms.

    sup_batch is the labeled batch (source, or oracle-labeled target under
    ts); target_batch is the unlabeled target batch (None when no enabled
    term consumes it). Returns (params, opt_theta, opt_phi, reports).
    """
    enabled = config.enabled()
    reports: dict = {}
    total: dict[str, np.ndarray] = {}

    def add(grads: dict, w: float):
        for name, g in grads.items():
            total[name] = total[name] + w * g if name in total else w * g

    cache_sup = None
    if any(t in enabled for t in ("ss", "ts", "su", "sa")):
        cache_sup = forward(params, sup_batch.features)

    for term in ("ss", "ts"):
        if term in enabled:
            rep = source_ce(cache_sup.probs, sup_batch.labels)
            rep.name = term
            _check_finite(term, rep.value, epoch, step)
            g, _ = backward(params, cache_sup, grad_logits=rep.grad_logits)
            add(g, config.weight(term))
            reports[term] = rep

    cache_target = None
    if "tu" in enabled:
        cache_target = forward(params, target_batch.features)
        pl = pseudo_label_select(cache_target.probs, priors.target)
        rep = contradist_loss(cache_target.probs, pl, priors.target)
        rep.name = "tu"
        _check_finite("tu", rep.value, epoch, step)
        g, _ = backward(params, cache_target, grad_logits=rep.grad_logits)
        add(g, config.weight("tu"))
        reports["tu"] = rep

    if "su" in enabled:
        pl = pseudo_label_select(cache_sup.probs, priors.source)
        rep = contradist_loss(cache_sup.probs, pl, priors.source)
        rep.name = "su"
        _check_finite("su", rep.value, epoch, step)
        g, _ = backward(params, cache_sup, grad_logits=rep.grad_logits)
        add(g, config.weight("su"))
        reports["su"] = rep

    adv_on = [t for t in ("ta", "sa") if t in enabled]
    n_f = config.fake.n_f or config.batch_size
    gen_fakes_target = None
    if adv_on and config.fake.mode == "generator":
        # one generator MMD step per classifier step; its fake rows feed ta
        params, opt_phi, gen_rep, gen_fakes_target = generator_step(
            params, target_batch.features, n_f, config.fake.gamma, opt_phi, lr, streams.fake_target
        )
        _check_finite("gen", gen_rep.value, epoch, step)
        reports["gen"] = gen_rep

    for term in adv_on:
        if config.fake.mode == "gaussian":
            stats = fake_ctx.target_stats if term == "ta" else fake_ctx.source_stats
            stream = streams.fake_target if term == "ta" else streams.fake_source
            fakes = gaussian_fakes(stats, n_f, stream)
        elif term == "ta":
            fakes = gen_fakes_target
        else:
            fakes = generator_fakes(params, n_f, streams.fake_source)
        cache_fake = forward(params, fakes)
        rep = adv_bce(cache_fake.probs)
        rep.name = term
        _check_finite(term, rep.value, epoch, step)
        g, _ = backward(params, cache_fake, grad_logits=rep.grad_logits)
        add(g, config.weight(term))
        reports[term] = rep

    params, opt_theta = adam_update(params, total, opt_theta, lr)
    return params, opt_theta, opt_phi, reports


def fit(config: TrainConfig, pair: DomainPair, on_epoch=None):
    """Run the full loop; returns (params, list of per-epoch metric records).

    Metric records carry epoch, lr, per-term mean batch losses (null when a
    term is disabled), source-train and target-test accuracy, and seconds
    (0.0 when config.timing is off). on_epoch, when given, receives each
    record as it is produced.
    """
    enabled = config.enabled()
    if not enabled:
        raise ConfigError("no enabled loss terms (all weights zero?)")

    if "ts" in enabled:
        sup_data = pair.target_train_labeled(oracle=config.oracle)
    else:
        sup_data = pair.source

    arch = build_architecture(config, pair.dim, pair.num_classes)
    params = init_params(arch, Rng(config.seed, STREAM_WEIGHT_INIT))
    opt_theta = OptimizerState.for_params(params, theta_names(arch), config.beta1, config.beta2, config.adam_eps)
    opt_phi = (
        OptimizerState.for_params(params, phi_names(arch), config.beta1, config.beta2, config.adam_eps)
        if arch.generator
        else None
    )
    streams = StreamBundle.for_seed(config.seed)

    priors = Priors()
    if "tu" in enabled:
        priors.target = resolve_prior(config, pair.source)
    if "su" in enabled:
        priors.source = empirical_prior(sup_data)

    fake_ctx = FakeContext()
    if config.fake.mode == "gaussian":
        if "ta" in enabled:
            fake_ctx.target_stats = FeatureStats.from_features(pair.target_train.features)
        if "sa" in enabled:
            fake_ctx.source_stats = FeatureStats.from_features(sup_data.features)

    needs_target_batches = "tu" in enabled or (config.fake.mode == "generator" and any(t in enabled for t in ("ta", "sa")))
    sup_batcher = Batcher(sup_data.n, config.batch_size, config.seed, STREAM_SOURCE_SHUFFLE)
    target_batcher = (
        Batcher(pair.target_train.n, config.batch_size, config.seed, STREAM_TARGET_SHUFFLE)
        if needs_target_batches
        else None
    )
    steps_per_epoch = max(sup_batcher.batches_per_epoch, target_batcher.batches_per_epoch if target_batcher else 0)

    term_order = list(enabled) + (["gen"] if arch.generator else [])
    metrics = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        sums = {t: 0.0 for t in term_order}
        for step in range(steps_per_epoch):
            idx = sup_batcher.take()
            sup_batch = _slice(sup_data, idx)
            target_batch = _slice(pair.target_train, target_batcher.take()) if target_batcher else None
            params, opt_theta, opt_phi, reports = train_step(
                params, opt_theta, opt_phi, sup_batch, target_batch, config, streams, priors, fake_ctx, lr, epoch, step
            )
            for t, rep in reports.items():
                sums[t] += rep.value
        loss_rec = {t: (sums[t] / steps_per_epoch if t in term_order else None) for t in ("ss", "tu", "su", "ta", "sa")}
        loss_rec["gen"] = sums["gen"] / steps_per_epoch if "gen" in term_order else None
        if "ts" in term_order:
            loss_rec["ts"] = sums["ts"] / steps_per_epoch
        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": loss_rec,
            "acc": {
                "source_train": evaluate(params, pair.source).accuracy,
                "target_test": evaluate(params, pair.target_test).accuracy,
            },
            "seconds": time.perf_counter() - t0 if config.timing else 0.0,
        }
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return params, metrics


def _slice(dataset: Dataset, idx: np.ndarray) -> Batch:
    labels = dataset.labels[idx] if dataset.labels is not None else None
    return Batch(dataset.features[idx], labels)
