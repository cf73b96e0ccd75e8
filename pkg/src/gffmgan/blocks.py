"""Residual and dense building blocks for generators and discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .autograd import Tensor, as_tensor
from .errors import ConfigurationError

RESAMPLE = ("up", "down", "none")


@dataclass(eq=False)
class ResBlockParams:
    conv1: L.Conv
    conv2: L.Conv
    skip_conv: L.Conv | None = None
    bn1: L.Norm | None = None
    bn2: L.Norm | None = None
    resample: str = "none"
    name: str = "block"

    def __post_init__(self):
        if self.resample not in RESAMPLE:
            raise ConfigurationError(f"{self.name}: resample must be one of {RESAMPLE}, got {self.resample!r}")

    @property
    def in_channels(self) -> int:
        return self.conv1.in_channels

    @property
    def out_channels(self) -> int:
        return self.conv2.out_channels

    @classmethod
    def create_gen(
        cls,
        in_ch: int,
        out_ch: int,
        name: str,
        rng: np.random.Generator,
        up: bool = True,
        cond_dim: int = 0,
        spectral: bool = False,
        dtype=np.float32,
    ) -> "ResBlockParams":
        """Generator block; ``cond_dim > 0`` makes both BNs conditional.

        The shortcut is a learnable 1x1 conv only when the channel count
        changes; an up-sampling block with equal channels keeps an identity
        (nearest up-sampled) shortcut.
        """
        skip = None
        if in_ch != out_ch:
            skip = L.Conv.create(in_ch, out_ch, 1, f"{name}.skip", rng, spectral, dtype=dtype)
        return cls(
            L.Conv.create(in_ch, out_ch, 3, f"{name}.conv1", rng, spectral, dtype=dtype),
            L.Conv.create(out_ch, out_ch, 3, f"{name}.conv2", rng, spectral, dtype=dtype),
            skip,
            L.Norm.create(in_ch, f"{name}.bn1", cond_dim, spectral, rng, dtype),
            L.Norm.create(out_ch, f"{name}.bn2", cond_dim, spectral, rng, dtype),
            "up" if up else "none",
            name,
        )

    @classmethod
    def create_disc(
        cls,
        in_ch: int,
        out_ch: int,
        name: str,
        rng: np.random.Generator,
        down: bool = True,
        spectral: bool = True,
        dtype=np.float32,
    ) -> "ResBlockParams":
        skip = None
        if in_ch != out_ch or down:
            skip = L.Conv.create(in_ch, out_ch, 1, f"{name}.skip", rng, spectral, dtype=dtype)
        return cls(
            L.Conv.create(in_ch, out_ch, 3, f"{name}.conv1", rng, spectral, dtype=dtype),
            L.Conv.create(out_ch, out_ch, 3, f"{name}.conv2", rng, spectral, dtype=dtype),
            skip,
            resample="down" if down else "none",
            name=name,
        )


def gen_res_block(x, cond, p: ResBlockParams, training: bool = True) -> Tensor:
    """BN -> ReLU -> [up] -> conv1 -> BN -> ReLU -> conv2, plus the shortcut."""
    x = as_tensor(x)
    if p.bn1 is None or p.bn2 is None:
        raise ConfigurationError(f"{p.name}: generator block needs two BN layers")
    if (cond is not None) != p.bn1.conditional:
        mode = "conditional" if p.bn1.conditional else "unconditional"
        raise ConfigurationError(f"{p.name}: {mode} BN {'needs' if p.bn1.conditional else 'rejects'} cond")
    h = L.relu(L.apply_norm(x, p.bn1, cond, training))
    skip = x
    if p.resample == "up":
        h = L.upsample_nearest(h, 2)
        skip = L.upsample_nearest(skip, 2)
    h = L.apply_conv(h, p.conv1, training)
    h = L.relu(L.apply_norm(h, p.bn2, cond, training))
    h = L.apply_conv(h, p.conv2, training)
    if p.skip_conv is not None:
        skip = L.apply_conv(skip, p.skip_conv, training)
    return h + skip


def disc_res_block(x, p: ResBlockParams, first: bool = False, training: bool = True) -> Tensor:
    """[ReLU] -> conv1 -> ReLU -> conv2 -> [avg pool], plus the shortcut.

    The first block of a discriminator sees raw pixels, so it skips the
    leading ReLU and pools before its 1x1 shortcut conv.
    """
    x = as_tensor(x)
    down = p.resample == "down"
    if down and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ConfigurationError(f"{p.name}: cannot down-sample odd spatial size {x.shape[2:]}")
    h = x if first else L.relu(x)
    h = L.apply_conv(h, p.conv1, training)
    h = L.apply_conv(L.relu(h), p.conv2, training)
    if down:
        h = L.avg_pool_down(h)
    skip = x
    if first:
        if down:
            skip = L.avg_pool_down(skip)
        if p.skip_conv is not None:
            skip = L.apply_conv(skip, p.skip_conv, training)
    else:
        if p.skip_conv is not None:
            skip = L.apply_conv(skip, p.skip_conv, training)
        if down:
            skip = L.avg_pool_down(skip)
    return h + skip


@dataclass(eq=False)
class DenseBlockParams:
    """Stages ``(norm, 3x3 conv)`` on the running concatenation, then a 1x1 transition."""

    stages: list[tuple[L.Norm, L.Conv]]
    transition: L.Conv
    in_channels: int
    growth: int
    up: bool = True
    name: str = "dense"

    @property
    def out_channels(self) -> int:
        return self.transition.out_channels

    @classmethod
    def create(
        cls,
        in_ch: int,
        out_ch: int,
        name: str,
        rng: np.random.Generator,
        n_stages: int = 4,
        growth: int = 32,
        up: bool = True,
        cond_dim: int = 0,
        spectral: bool = False,
        dtype=np.float32,
    ) -> "DenseBlockParams":
        if n_stages < 1:
            raise ConfigurationError(f"{name}: dense block needs at least one stage")
        stages = []
        for k in range(n_stages):
            c = in_ch + k * growth
            stages.append(
                (
                    L.Norm.create(c, f"{name}.stage{k}.bn", cond_dim, spectral, rng, dtype),
                    L.Conv.create(c, growth, 3, f"{name}.stage{k}.conv", rng, spectral, dtype=dtype),
                )
            )
        transition = L.Conv.create(in_ch + n_stages * growth, out_ch, 1, f"{name}.transition", rng, spectral, dtype=dtype)
        return cls(stages, transition, in_ch, growth, up, name)


def dense_block(x, p: DenseBlockParams, cond=None, training: bool = True) -> Tensor:
    x = as_tensor(x)
    if not p.stages:
        raise ConfigurationError(f"{p.name}: dense block has no stages")
    if x.shape[1] != p.in_channels:
        raise ConfigurationError(f"{p.name}: expected {p.in_channels} input channels, got {x.shape[1]}")
    if p.up:
        x = L.upsample_nearest(x, 2)
    feats = [x]
    for k, (norm, conv) in enumerate(p.stages):
        expected = p.in_channels + k * p.growth
        if conv.in_channels != expected or norm.state.num_channels != expected:
            raise ConfigurationError(
                f"{p.name}: stage {k} consumes {conv.in_channels} channels, bookkeeping says {expected}"
            )
        inp = feats[0] if len(feats) == 1 else L.concat_channels(feats)
        h = L.apply_conv(L.relu(L.apply_norm(inp, norm, cond, training)), conv, training)
        feats.append(h)
    final = p.in_channels + len(p.stages) * p.growth
    if p.transition.in_channels != final:
        raise ConfigurationError(f"{p.name}: transition expects {p.transition.in_channels} channels, got {final}")
    return L.apply_conv(L.concat_channels(feats), p.transition, training)
