"""Adversarial losses, Adam, learning-rate schedule, update loop and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from . import layers as L
from .archive import FORMAT_VERSION, read_archive, write_archive
from .autograd import Tensor, no_grad
from .data import BatchIterator
from .errors import CheckpointError, ConfigurationError, NonFiniteGradientError, TrainingDiverged
from .networks import DiscriminatorParams, GeneratorParams, discriminator_forward, generator_forward

log = logging.getLogger(__name__)

LOSSES = ("hinge", "standard")
METRICS_HEADER = ("iter", "lr_g", "lr_d", "loss_d", "loss_g", "wallclock_s")


# -- losses ------------------------------------------------------------------------------------
def loss_standard(real_logits, fake_logits) -> tuple[Tensor, Tensor]:
    """Cross-entropy GAN losses; the generator term is the non-saturating one.

    ``-log sigmoid(x) = softplus(-x)`` and ``-log(1 - sigmoid(x)) = softplus(x)``
    keep both terms finite for any finite logit.
    """
    real, fake = ag.as_tensor(real_logits), ag.as_tensor(fake_logits)
    loss_d = ag.softplus(-real).mean() + ag.softplus(fake).mean()
    loss_g = ag.softplus(-fake).mean()
    return loss_d, loss_g


def loss_hinge(real_logits, fake_logits) -> tuple[Tensor, Tensor]:
    real, fake = ag.as_tensor(real_logits), ag.as_tensor(fake_logits)
    loss_d = ag.relu(1.0 - real).mean() + ag.relu(1.0 + fake).mean()
    loss_g = -fake.mean()
    return loss_d, loss_g


def _loss_fn(kind: str):
    if kind == "hinge":
        return loss_hinge
    if kind == "standard":
        return loss_standard
    raise ConfigurationError(f"loss must be one of {LOSSES}, got {kind!r}")


def generator_loss(kind: str, fake_logits) -> Tensor:
    fake = ag.as_tensor(fake_logits)
    if kind == "hinge":
        return -fake.mean()
    _loss_fn(kind)
    return ag.softplus(-fake).mean()


# -- optimiser ---------------------------------------------------------------------------------
@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls({p.name: np.zeros_like(p.data) for p in params}, {p.name: np.zeros_like(p.data) for p in params})


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ConfigurationError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient for {p.name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {p.name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g in zip(params, grads):
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- configuration -------------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    preset: str = "custom"
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_d: int = 64
    batch_g: int = 128
    d_steps_per_g: int = 5
    total_g_iters: int = 50_000
    decay_window: int = 50_000
    loss: str = "hinge"
    seed: int = 0
    eval_interval: int = 5_000
    checkpoint_interval: int = 5_000
    sample_interval: int = 5_000
    g_accum: int = 1
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr_g", "lr_d", "batch_d", "batch_g", "d_steps_per_g", "total_g_iters", "decay_window", "g_accum"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"train.{name} must be positive, got {getattr(self, name)}")
        for name in ("eval_interval", "checkpoint_interval", "sample_interval", "seed"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"train.{name} must be >= 0, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigurationError("train.adam_eps must be positive")
        if self.decay_window > self.total_g_iters:
            raise ConfigurationError(
                f"decay_window {self.decay_window} exceeds total_g_iters {self.total_g_iters}"
            )
        if self.loss not in LOSSES:
            raise ConfigurationError(f"train.loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_g % self.g_accum:
            raise ConfigurationError(f"batch_g {self.batch_g} is not divisible by g_accum {self.g_accum}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train fields {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


_CIFAR = dict(lr_g=2e-4, lr_d=2e-4, batch_d=64, batch_g=128, d_steps_per_g=5, total_g_iters=50_000, decay_window=50_000)
_TTUR = dict(lr_g=1e-4, lr_d=4e-4, d_steps_per_g=1, decay_window=50_000)

TRAIN_PRESETS: dict[str, TrainConfig] = {
    "cifar-gan": TrainConfig("cifar-gan", **_CIFAR),
    "cifar-cgan": TrainConfig("cifar-cgan", **_CIFAR),
    "lsun-ttur": TrainConfig("lsun-ttur", batch_d=32, batch_g=32, total_g_iters=300_000, **_TTUR),
    "tinyimagenet-ttur": TrainConfig(
        "tinyimagenet-ttur", batch_d=32, batch_g=32, total_g_iters=1_000_000, eval_interval=50_000,
        checkpoint_interval=50_000, sample_interval=50_000, **_TTUR
    ),
    "hq-256": TrainConfig("hq-256", batch_d=16, batch_g=16, total_g_iters=100_000, **_TTUR),
    "hq-512": TrainConfig("hq-512", batch_d=16, batch_g=16, total_g_iters=100_000, **_TTUR),
    # desk scale: too short for a 50k-iteration decay, so the last half decays
    "desk-smoke": TrainConfig(
        "desk-smoke",
        lr_g=2e-4,
        lr_d=2e-4,
        batch_d=16,
        batch_g=16,
        d_steps_per_g=1,
        total_g_iters=500,
        decay_window=250,
        eval_interval=500,
        checkpoint_interval=250,
        sample_interval=250,
    ),
}


def lr_at(iteration: int, cfg: TrainConfig) -> tuple[float, float]:
    """Constant rates, then a linear ramp to zero over the final ``decay_window`` iterations."""
    if not 0 <= iteration <= cfg.total_g_iters:
        raise ConfigurationError(f"iteration {iteration} outside [0, {cfg.total_g_iters}]")
    start = cfg.total_g_iters - cfg.decay_window
    factor = 1.0 if iteration <= start else (cfg.total_g_iters - iteration) / cfg.decay_window
    return cfg.lr_g * factor, cfg.lr_d * factor


# -- state ----------------------------------------------------------------------------------------
@dataclass(eq=False)
class TrainState:
    cfg: TrainConfig
    gen: GeneratorParams
    disc: DiscriminatorParams
    opt_g: AdamState
    opt_d: AdamState
    data: BatchIterator
    rng: np.random.Generator
    iteration: int = 0

    @classmethod
    def create(cls, cfg: TrainConfig, gen: GeneratorParams, disc: DiscriminatorParams, dataset) -> "TrainState":
        if gen.cfg.num_classes != disc.cfg.num_classes:
            raise ConfigurationError("generator and discriminator disagree on num_classes")
        if gen.cfg.num_classes and getattr(dataset, "labels", None) is None:
            raise ConfigurationError("conditional networks need a labelled dataset")
        return cls(
            cfg,
            gen,
            disc,
            AdamState.for_params(L.named_parameters(gen)),
            AdamState.for_params(L.named_parameters(disc)),
            BatchIterator(dataset, cfg.batch_d, cfg.seed),
            np.random.default_rng(cfg.seed),
        )

    @property
    def dtype(self):
        return self.gen.stem.weight.dtype


def _latents(state: TrainState, n: int):
    cfg = state.gen.cfg
    z = state.rng.standard_normal((n, cfg.latent_dim)).astype(state.dtype)
    y = state.rng.integers(0, cfg.num_classes, n) if cfg.conditional else None
    return z, y


def _zero(params) -> None:
    for p in params:
        p.zero_grad()


def train_step(state: TrainState) -> dict:
    """One generator iteration: ``d_steps_per_g`` D updates, then one G update."""
    cfg = state.cfg
    lr_g, lr_d = lr_at(state.iteration, cfg)
    loss_fn = _loss_fn(cfg.loss)
    d_params = L.named_parameters(state.disc)
    g_params = L.named_parameters(state.gen)
    cond = state.gen.cfg.conditional

    loss_d_value = float("nan")
    for _ in range(cfg.d_steps_per_g):
        batch = next(state.data)
        z, y_fake = _latents(state, cfg.batch_d)
        with no_grad():
            fake = generator_forward(state.gen, z, y_fake, training=True).data
        _zero(d_params)
        real_logits = discriminator_forward(state.disc, batch.pixels, batch.labels if cond else None)
        fake_logits = discriminator_forward(state.disc, fake, y_fake)
        loss_d, _ = loss_fn(real_logits, fake_logits)
        loss_d_value = float(loss_d.data)
        if not math.isfinite(loss_d_value):
            raise TrainingDiverged(f"discriminator loss became {loss_d_value} at iteration {state.iteration}")
        loss_d.backward()
        adam_step(d_params, [p.grad for p in d_params], state.opt_d, lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps)

    _zero(g_params)
    loss_g_value = 0.0
    micro = cfg.batch_g // cfg.g_accum
    for _ in range(cfg.g_accum):
        z, y_fake = _latents(state, micro)
        fake = generator_forward(state.gen, z, y_fake, training=True)
        loss_g = generator_loss(cfg.loss, discriminator_forward(state.disc, fake, y_fake)) * (1.0 / cfg.g_accum)
        loss_g_value += float(loss_g.data)
        if not math.isfinite(loss_g_value):
            raise TrainingDiverged(f"generator loss became {loss_g_value} at iteration {state.iteration}")
        loss_g.backward()
    adam_step(g_params, [p.grad for p in g_params], state.opt_g, lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps)
    # the G phase also filled D's gradient slots; clear them so D stays untouched
    _zero(d_params)

    state.iteration += 1
    return {"iter": state.iteration, "lr_g": lr_g, "lr_d": lr_d, "loss_d": loss_d_value, "loss_g": loss_g_value}


# -- checkpoints ---------------------------------------------------------------------------------
@dataclass
class Checkpoint:
    version: int
    iteration: int
    tensors: dict[str, np.ndarray]
    meta: dict

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.meta["train"])


def _net_tensors(prefix: str, net) -> dict[str, np.ndarray]:
    out = {}
    for p in L.named_parameters(net):
        out[f"{prefix}.param.{p.name}"] = p.data
        if p.sn_state is not None:
            out[f"{prefix}.sn.{p.name}"] = p.sn_state
    for bn in L.batch_norm_states(net):
        key = f"{prefix}.bn.{bn.name}"
        if f"{key}.running_mean" in out:
            raise CheckpointError(f"duplicate BN name {bn.name!r}")
        out[f"{key}.running_mean"] = bn.running_mean
        out[f"{key}.running_var"] = bn.running_var
    return out


def checkpoint_from_state(state: TrainState, extra_meta: dict | None = None) -> Checkpoint:
    tensors = {**_net_tensors("G", state.gen), **_net_tensors("D", state.disc)}
    for tag, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for name, m in opt.m.items():
            tensors[f"{tag}.m.{name}"] = m
            tensors[f"{tag}.v.{name}"] = opt.v[name]
    meta = {
        "kind": "checkpoint",
        "iteration": state.iteration,
        "opt_g_step": state.opt_g.step,
        "opt_d_step": state.opt_d.step,
        "rng": state.rng.bit_generator.state,
        "data": state.data.state_dict(),
        "train": asdict(state.cfg),
        **(extra_meta or {}),
    }
    return Checkpoint(FORMAT_VERSION, state.iteration, {k: np.array(v, copy=True) for k, v in tensors.items()}, meta)


def save_checkpoint(path, state_or_ckpt, extra_meta: dict | None = None) -> Path:
    ckpt = state_or_ckpt if isinstance(state_or_ckpt, Checkpoint) else checkpoint_from_state(state_or_ckpt, extra_meta)
    return write_archive(path, ckpt.tensors, ckpt.meta)


def load_checkpoint(path) -> Checkpoint:
    tensors, meta = read_archive(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is a tensor archive but not a training checkpoint")
    return Checkpoint(FORMAT_VERSION, int(meta["iteration"]), tensors, meta)


def _assign(dst: np.ndarray, src: np.ndarray, key: str) -> None:
    if dst.shape != src.shape:
        raise CheckpointError(f"{key}: checkpoint shape {src.shape} does not match model {dst.shape}")
    dst[...] = src


def _restore_net(prefix: str, net, tensors: dict) -> None:
    try:
        for p in L.named_parameters(net):
            _assign(p.data, tensors[f"{prefix}.param.{p.name}"], p.name)
            if p.sn_state is not None:
                _assign(p.sn_state, tensors[f"{prefix}.sn.{p.name}"], p.name)
        for bn in L.batch_norm_states(net):
            _assign(bn.running_mean, tensors[f"{prefix}.bn.{bn.name}.running_mean"], bn.name)
            _assign(bn.running_var, tensors[f"{prefix}.bn.{bn.name}.running_var"], bn.name)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]}") from exc


def restore_generator(gen: GeneratorParams, ckpt: Checkpoint) -> None:
    _restore_net("G", gen, ckpt.tensors)


def restore_state(state: TrainState, ckpt: Checkpoint) -> None:
    """Overwrite every piece of mutable training state with the checkpoint's."""
    _restore_net("G", state.gen, ckpt.tensors)
    _restore_net("D", state.disc, ckpt.tensors)
    for tag, opt, step in (("opt_g", state.opt_g, "opt_g_step"), ("opt_d", state.opt_d, "opt_d_step")):
        for name in opt.m:
            try:
                _assign(opt.m[name], ckpt.tensors[f"{tag}.m.{name}"], name)
                _assign(opt.v[name], ckpt.tensors[f"{tag}.v.{name}"], name)
            except KeyError as exc:
                raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]}") from exc
        opt.step = int(ckpt.meta[step])
    state.rng.bit_generator.state = ckpt.meta["rng"]
    state.data.load_state_dict(ckpt.meta["data"])
    state.iteration = ckpt.iteration


# -- loop ------------------------------------------------------------------------------------------
@dataclass
class RunArtifacts:
    out_dir: Path
    metrics_csv: Path
    checkpoints: list[Path] = field(default_factory=list)
    samples: list[Path] = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    final_state: TrainState | None = None


def _format(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def train_loop(
    cfg: TrainConfig,
    gen: GeneratorParams,
    disc: DiscriminatorParams,
    dataset,
    out_dir,
    *,
    eval_fn: Callable[[TrainState], object] | None = None,
    sample_fn: Callable[[TrainState, Path], Path] | None = None,
    resume: Checkpoint | None = None,
    max_iters: int | None = None,
    extra_meta: dict | None = None,
) -> RunArtifacts:
    """Train until ``total_g_iters`` (or ``max_iters`` more iterations).

    Metrics go to ``metrics.csv`` (flushed every iteration); checkpoints,
    evaluations and sample grids follow the configured intervals.  A
    non-finite loss dumps ``diverged.ckpt`` and raises
    :class:`~gffmgan.errors.TrainingDiverged`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState.create(cfg, gen, disc, dataset)
    if resume is not None:
        restore_state(state, resume)
    art = RunArtifacts(out, out / "metrics.csv", final_state=state)
    fresh = resume is None or not art.metrics_csv.exists()
    stop = cfg.total_g_iters if max_iters is None else min(cfg.total_g_iters, state.iteration + max_iters)

    def checkpoint(name: str) -> Path:
        path = save_checkpoint(out / name, state, extra_meta)
        art.checkpoints.append(path)
        return path

    if eval_fn is not None and cfg.eval_interval and state.iteration == 0:
        art.evaluations.append(eval_fn(state))

    start = time.perf_counter()
    with open(art.metrics_csv, "w" if fresh else "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_HEADER)
            fh.flush()
        while state.iteration < stop:
            try:
                rec = train_step(state)
            except (TrainingDiverged, NonFiniteGradientError):
                checkpoint("diverged.ckpt")
                raise
            rec["wallclock_s"] = round(time.perf_counter() - start, 3)
            art.history.append(rec)
            writer.writerow([_format(rec[k]) for k in METRICS_HEADER])
            fh.flush()
            it = state.iteration
            done = it == cfg.total_g_iters
            if cfg.checkpoint_interval and (it % cfg.checkpoint_interval == 0 or done):
                checkpoint(f"ckpt_{it:07d}.ckpt")
            if eval_fn is not None and cfg.eval_interval and (it % cfg.eval_interval == 0 or done):
                art.evaluations.append(eval_fn(state))
            if sample_fn is not None and cfg.sample_interval and (it % cfg.sample_interval == 0 or done):
                art.samples.append(sample_fn(state, out / f"samples_{it:07d}.png"))
    if cfg.checkpoint_interval:
        checkpoint("last.ckpt")
    return art
