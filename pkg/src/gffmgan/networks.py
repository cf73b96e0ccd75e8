"""Generator/discriminator configurations, builders and forward passes.

Three generator modes are supported:

``sngan``
    full latent into the FC stem, plain BN (one-hot class-conditional BN in
    cGAN mode).
``biggan``
    latent split into ``n_blocks + 1`` chunks; the first feeds the stem, the
    others (concatenated with a shared class embedding in cGAN mode) drive
    conditional BN in each block.
``proposed``
    the ``biggan`` generator plus an auxiliary branch: GFFMs after the
    flagged blocks fuse the main feature with an auxiliary feature that
    starts as the stem output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import layers as L
from .autograd import Tensor, as_tensor
from .blocks import DenseBlockParams, ResBlockParams, dense_block, disc_res_block, gen_res_block
from .errors import ConfigurationError
from .gffm import DEFAULT_GATE_KERNEL, GffmParams, gffm_forward

MODES = ("sngan", "biggan", "proposed")
BLOCK_TYPES = ("residual", "dense")
RESOLUTIONS = (32, 128, 256, 512)
LATENT_DIM = 128
EMBED_DIM = 128

# dense-block width chosen so the 32x32 BigGAN-style dense generator lands on
# the 4.74M parameter budget (4 stages; see tests/test_networks.py)
DENSE_STAGES = 4
DENSE_GROWTH = 90

# (stem channels, [(block channels, has GFFM)]); every generator block up-samples
_GEN_TABLE: dict[int, tuple[int, list[tuple[int, bool]]]] = {
    32: (256, [(256, True), (256, True), (256, True)]),
    128: (512, [(512, True), (512, True), (256, True), (128, False), (64, True)]),
    256: (512, [(512, True), (512, True), (256, True), (128, True), (64, True), (32, True)]),
    512: (512, [(512, True), (512, True), (256, True), (128, True), (64, True), (32, True), (16, True)]),
}

# [(block channels, down-samples)]
_DISC_TABLE: dict[int, list[tuple[int, bool]]] = {
    32: [(128, True), (128, True), (128, False), (128, False)],
    128: [(64, True), (128, True), (256, True), (512, True), (512, True), (512, False)],
    256: [(32, True), (64, True), (128, True), (256, True), (512, True), (512, True), (512, False)],
    512: [(16, True), (32, True), (64, True), (128, True), (256, True), (512, True), (512, True), (512, False)],
}

# published parameter counts of the 32x32 generators
PARAM_TARGETS = {
    "residual": 3.78e6,
    "dense": 4.74e6,
    "proposed": 5.68e6,
}


@dataclass(frozen=True)
class GenBlockSpec:
    channels: int
    up: bool = True
    gffm: bool = False


@dataclass(frozen=True)
class GenArchConfig:
    resolution: int
    mode: str
    stem_channels: int
    blocks: tuple[GenBlockSpec, ...]
    latent_dim: int = LATENT_DIM
    num_classes: int = 0
    embed_dim: int = EMBED_DIM
    spectral: bool = False
    block_type: str = "residual"
    gate_kernel: int = DEFAULT_GATE_KERNEL
    swap_gffm_args: bool = False
    dense_stages: int = DENSE_STAGES
    dense_growth: int = DENSE_GROWTH

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"generator mode must be one of {MODES}, got {self.mode!r}")
        if self.block_type not in BLOCK_TYPES:
            raise ConfigurationError(f"block_type must be one of {BLOCK_TYPES}, got {self.block_type!r}")
        if not self.blocks:
            raise ConfigurationError("generator needs at least one block")
        if self.mode != "proposed" and any(b.gffm for b in self.blocks):
            raise ConfigurationError(f"GFFM flags are only valid in proposed mode (mode={self.mode!r})")
        if self.swap_gffm_args and self.mode != "proposed":
            raise ConfigurationError("swap_gffm_args only applies to proposed mode")
        if self.num_classes < 0 or self.latent_dim < 1:
            raise ConfigurationError("num_classes must be >= 0 and latent_dim >= 1")
        if self.hierarchical and self.latent_dim < len(self.blocks) + 1:
            raise ConfigurationError(
                f"latent_dim {self.latent_dim} cannot be split into {len(self.blocks) + 1} chunks"
            )
        expected = 4 * 2 ** sum(b.up for b in self.blocks)
        if expected != self.resolution:
            raise ConfigurationError(f"blocks produce {expected}x{expected} images, config says {self.resolution}")

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    @property
    def hierarchical(self) -> bool:
        return self.mode in ("biggan", "proposed")

    def latent_chunks(self) -> list[int]:
        """Sizes of the latent pieces: stem first, then one per block."""
        if not self.hierarchical:
            return [self.latent_dim]
        return [len(c) for c in np.array_split(np.arange(self.latent_dim), len(self.blocks) + 1)]

    def block_cond_dim(self, i: int) -> int:
        if self.hierarchical:
            return self.latent_chunks()[i + 1] + (self.embed_dim if self.conditional else 0)
        return self.num_classes


@dataclass(frozen=True)
class DiscArchConfig:
    resolution: int
    blocks: tuple[tuple[int, bool], ...]
    num_classes: int = 0
    spectral: bool = True

    def __post_init__(self):
        if not self.blocks:
            raise ConfigurationError("discriminator needs at least one block")
        size = self.resolution
        for ch, down in self.blocks:
            if down:
                if size % 2:
                    raise ConfigurationError(f"discriminator cannot down-sample odd size {size}")
                size //= 2

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0


def _scale(ch: int, scale: float) -> int:
    return max(1, int(round(ch * scale)))


def arch_from_table(
    resolution: int,
    mode: str = "proposed",
    num_classes: int = 0,
    *,
    channel_scale: float = 1.0,
    block_type: str = "residual",
    gen_spectral: bool | None = None,
    gffm_after_all_blocks: bool = False,
    **gen_overrides,
) -> tuple[GenArchConfig, DiscArchConfig]:
    """Architecture presets for 32/128/256/512 px images.

    The 128 px generator has no GFFM after its fourth block, as in the
    published table; ``gffm_after_all_blocks=True`` adds one there.
    Spectral norm is applied to the generator for >=128 px presets only,
    unless ``gen_spectral`` overrides it.  ``channel_scale`` shrinks every
    width (desk-scale runs).
    """
    if resolution not in RESOLUTIONS:
        raise ConfigurationError(f"unsupported resolution {resolution}; expected one of {RESOLUTIONS}")
    if mode not in MODES:
        raise ConfigurationError(f"generator mode must be one of {MODES}, got {mode!r}")
    stem, rows = _GEN_TABLE[resolution]
    proposed = mode == "proposed"
    blocks = tuple(
        GenBlockSpec(_scale(ch, channel_scale), True, proposed and (has_gffm or gffm_after_all_blocks))
        for ch, has_gffm in rows
    )
    gen = GenArchConfig(
        resolution,
        mode,
        _scale(stem, channel_scale),
        blocks,
        num_classes=num_classes,
        spectral=resolution >= 128 if gen_spectral is None else gen_spectral,
        block_type=block_type,
        **gen_overrides,
    )
    disc = DiscArchConfig(
        resolution,
        tuple((_scale(ch, channel_scale), down) for ch, down in _DISC_TABLE[resolution]),
        num_classes,
    )
    return gen, disc


# -- parameters ---------------------------------------------------------------------------
@dataclass(eq=False)
class GeneratorParams:
    cfg: GenArchConfig
    stem: L.Dense
    blocks: list
    gffms: list
    out_bn: L.Norm
    out_conv: L.Conv
    class_embed: L.Parameter | None = None


@dataclass(eq=False)
class DiscriminatorParams:
    cfg: DiscArchConfig
    blocks: list[ResBlockParams]
    fc: L.Dense
    embed: L.Parameter | None = None


def _check_unique(params: Sequence[L.Parameter]) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ConfigurationError(f"duplicate parameter names: {dup}")


def build_generator(cfg: GenArchConfig, seed: int = 0, dtype=np.float32) -> GeneratorParams:
    rng = np.random.default_rng(seed)
    sn = cfg.spectral
    c0 = cfg.stem_channels
    stem = L.Dense.create(cfg.latent_chunks()[0], 4 * 4 * c0, "stem", rng, sn, dtype)
    class_embed = None
    if cfg.conditional and cfg.hierarchical:
        class_embed = L.Parameter(
            L.orthogonal((cfg.num_classes, cfg.embed_dim), rng, dtype=dtype), "class_embed"
        )
    last_gffm = max((i for i, b in enumerate(cfg.blocks) if b.gffm), default=-1)
    blocks, gffms = [], []
    in_ch, aux_ch = c0, c0
    for i, spec in enumerate(cfg.blocks):
        name = f"blocks.{i}"
        cond_dim = cfg.block_cond_dim(i)
        if cfg.block_type == "dense":
            blocks.append(
                DenseBlockParams.create(
                    in_ch, spec.channels, name, rng, cfg.dense_stages, cfg.dense_growth, spec.up, cond_dim, sn, dtype
                )
            )
        else:
            blocks.append(ResBlockParams.create_gen(in_ch, spec.channels, name, rng, spec.up, cond_dim, sn, dtype))
        if spec.gffm:
            g = GffmParams.create(
                spec.channels, aux_ch, f"gffms.{i}", rng, i != last_gffm, cfg.gate_kernel, sn, dtype
            )
            gffms.append(g)
            aux_ch = spec.channels
        else:
            gffms.append(None)
        in_ch = spec.channels
    out_bn = L.Norm.create(in_ch, "out_bn", dtype=dtype)
    out_conv = L.Conv.create(in_ch, 3, 3, "out_conv", rng, sn, dtype=dtype)
    p = GeneratorParams(cfg, stem, blocks, gffms, out_bn, out_conv, class_embed)
    _check_unique(L.named_parameters(p))
    return p


def build_discriminator(cfg: DiscArchConfig, seed: int = 0, dtype=np.float32) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    blocks = []
    in_ch = 3
    for i, (ch, down) in enumerate(cfg.blocks):
        blocks.append(ResBlockParams.create_disc(in_ch, ch, f"blocks.{i}", rng, down, cfg.spectral, dtype))
        in_ch = ch
    fc = L.Dense.create(in_ch, 1, "fc", rng, cfg.spectral, dtype)
    embed = None
    if cfg.conditional:
        embed = L.Parameter(
            L.orthogonal((cfg.num_classes, in_ch), rng, dtype=dtype), "embed", cfg.spectral, rng
        )
    p = DiscriminatorParams(cfg, blocks, fc, embed)
    _check_unique(L.named_parameters(p))
    return p


def param_count(p) -> int:
    """Number of scalar trainable parameters reachable from ``p``."""
    return int(sum(q.size for q in L.named_parameters(p)))


# -- forward passes -------------------------------------------------------------------------
def _labels(y, num_classes: int, n: int) -> np.ndarray:
    if num_classes == 0:
        if y is not None:
            raise ConfigurationError("labels given to an unconditional network")
        return None
    if y is None:
        raise ConfigurationError("conditional network needs labels")
    y = np.asarray(y)
    if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
        raise ConfigurationError(f"labels must be an integer vector of length {n}, got shape {y.shape}")
    if y.min() < 0 or y.max() >= num_classes:
        raise ConfigurationError(f"labels must lie in [0, {num_classes})")
    return y


def _conditioning(p: GeneratorParams, z: Tensor, y) -> tuple[Tensor, list]:
    """Split the latent into the stem input and per-block conditioning vectors."""
    cfg = p.cfg
    n = z.shape[0]
    y = _labels(y, cfg.num_classes, n)
    if not cfg.hierarchical:
        cond = None
        if cfg.conditional:
            cond = Tensor(np.eye(cfg.num_classes, dtype=z.dtype)[y])
        return z, [cond] * len(cfg.blocks)
    bounds = np.cumsum(cfg.latent_chunks())
    pieces = [z[:, lo:hi] for lo, hi in zip(np.r_[0, bounds[:-1]], bounds)]
    conds = pieces[1:]
    if cfg.conditional:
        emb = ag.take_rows(p.class_embed, y)
        conds = [L.concat_channels([c, emb]) for c in conds]
    return pieces[0], conds


def generator_forward(
    p: GeneratorParams,
    z,
    y=None,
    training: bool = True,
    frozen_block_outputs: dict[int, np.ndarray] | None = None,
    trace: list | None = None,
) -> Tensor:
    """Map latents ``z`` (and labels ``y`` in cGAN mode) to images in [-1, 1].

    ``frozen_block_outputs`` replaces the output of main-branch block ``i``
    with a constant array, which cuts that path while leaving the auxiliary
    branch live; it exists for information-flow experiments.  When ``trace``
    is a list, ``(layer label, output shape)`` pairs are appended to it.
    """
    cfg = p.cfg
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
        raise ConfigurationError(f"latent batch must have shape (n, {cfg.latent_dim}), got {z.shape}")
    n = z.shape[0]
    stem_in, conds = _conditioning(p, z, y)
    h = ag.reshape(L.apply_dense(stem_in, p.stem, training), (n, cfg.stem_channels, 4, 4))
    f_a = h
    if trace is not None:
        trace.append(("stem", h.shape))
    last_gffm = max((i for i, g in enumerate(p.gffms) if g is not None), default=-1)
    for i, (block, gffm) in enumerate(zip(p.blocks, p.gffms)):
        if isinstance(block, DenseBlockParams):
            h = dense_block(h, block, conds[i], training)
        else:
            h = gen_res_block(h, conds[i], block, training)
        if frozen_block_outputs and i in frozen_block_outputs:
            h = Tensor(np.asarray(frozen_block_outputs[i], dtype=h.dtype))
        if trace is not None:
            trace.append((f"block{i}", h.shape))
        if gffm is not None:
            h, new_a = gffm_forward(h, f_a, gffm, i == last_gffm, training, cfg.swap_gffm_args)
            if new_a is not None:
                f_a = new_a
            if trace is not None:
                trace.append((f"gffm{i}", h.shape))
    h = L.relu(L.apply_norm(h, p.out_bn, None, training))
    out = L.tanh(L.apply_conv(h, p.out_conv, training))
    if trace is not None:
        trace.append(("output", out.shape))
    return out


def discriminator_forward(p: DiscriminatorParams, x, y=None, training: bool = True) -> Tensor:
    """Logits of shape ``(n,)``; cGAN adds ``<embed[y], pooled>`` (projection)."""
    cfg = p.cfg
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (cfg.resolution, cfg.resolution):
        raise ConfigurationError(
            f"discriminator expects (n, 3, {cfg.resolution}, {cfg.resolution}) images, got {x.shape}"
        )
    n = x.shape[0]
    y = _labels(y, cfg.num_classes, n)
    h = x
    for i, block in enumerate(p.blocks):
        h = disc_res_block(h, block, first=i == 0, training=training)
    pooled = L.global_sum_pool(L.relu(h))
    out = ag.reshape(L.apply_dense(pooled, p.fc, training), (n,))
    if cfg.conditional:
        emb = ag.take_rows(L.sn_weight(p.embed, training), y)
        out = out + ag.tsum(emb * pooled, axis=1)
    return out


# -- summaries --------------------------------------------------------------------------------
def _block_params(block) -> int:
    return param_count(block)


def summarize(gen_cfg: GenArchConfig, disc_cfg: DiscArchConfig | None = None, seed: int = 0) -> str:
    """Per-block output shapes and parameter counts as plain text."""
    g = build_generator(gen_cfg, seed)
    lines = [
        f"generator  mode={gen_cfg.mode} block_type={gen_cfg.block_type} resolution={gen_cfg.resolution} "
        f"classes={gen_cfg.num_classes} spectral_norm={gen_cfg.spectral}",
        f"  {'layer':<28}{'output shape':<22}{'params':>12}",
    ]
    c, s = gen_cfg.stem_channels, 4
    lines.append(f"  {'FC stem':<28}{str((c, s, s)):<22}{param_count(g.stem):>12,}")
    if g.class_embed is not None:
        lines.append(f"  {'class embedding':<28}{str(g.class_embed.shape):<22}{g.class_embed.size:>12,}")
    for i, (spec, block, gffm) in enumerate(zip(gen_cfg.blocks, g.blocks, g.gffms)):
        s = s * 2 if spec.up else s
        label = f"{'DB' if gen_cfg.block_type == 'dense' else 'RB'}{', up' if spec.up else ''}, {spec.channels}"
        lines.append(f"  {label:<28}{str((spec.channels, s, s)):<22}{_block_params(block):>12,}")
        if gffm is not None:
            lines.append(f"  {'GFFM, ' + str(spec.channels):<28}{str((spec.channels, s, s)):<22}{param_count(gffm):>12,}")
    tail = param_count(g.out_bn) + param_count(g.out_conv)
    lines.append(f"  {'BN, ReLU, 3x3 conv, Tanh':<28}{str((3, s, s)):<22}{tail:>12,}")
    total = param_count(g)
    lines.append(f"  {'total':<50}{total:>12,}")
    if gen_cfg.resolution == 32:
        key = "proposed" if gen_cfg.mode == "proposed" else gen_cfg.block_type
        target = PARAM_TARGETS.get(key)
        if target is not None and gen_cfg.stem_channels == 256:
            lines.append(f"  reference {target / 1e6:.2f}M  actual {total / 1e6:.2f}M  ratio {total / target:.3f}")
    if disc_cfg is not None:
        d = build_discriminator(disc_cfg, seed)
        lines.append(f"discriminator resolution={disc_cfg.resolution} classes={disc_cfg.num_classes}")
        s = disc_cfg.resolution
        for (ch, down), block in zip(disc_cfg.blocks, d.blocks):
            s = s // 2 if down else s
            label = f"RB{', down' if down else ''}, {ch}"
            lines.append(f"  {label:<28}{str((ch, s, s)):<22}{param_count(block):>12,}")
        head = param_count(d.fc) + (d.embed.size if d.embed is not None else 0)
        lines.append(f"  {'ReLU, sum pool, dense':<28}{'(1,)':<22}{head:>12,}")
        lines.append(f"  {'total':<50}{param_count(d):>12,}")
    return "\n".join(lines)
