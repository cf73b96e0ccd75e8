"""Run configuration: named presets, YAML files and cross-field validation.

A config file has the sections ``train``, ``arch``, ``data`` and ``metrics``
plus a top-level ``out`` directory.  An optional top-level ``preset`` names
the built-in starting point that the file's values override::

    preset: desk-smoke
    train:
      seed: 3
    arch:
      channel_scale: 0.125
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import DatasetSpec
from .errors import ConfigurationError
from .metrics import BACKENDS
from .networks import MODES, arch_from_table
from .training import TRAIN_PRESETS, TrainConfig


@dataclass(frozen=True)
class ArchSelection:
    resolution: int = 32
    mode: str = "proposed"
    num_classes: int = 0
    channel_scale: float = 1.0
    block_type: str = "residual"
    gen_spectral: bool | None = None
    gffm_after_all_blocks: bool = False
    swap_gffm_args: bool = False
    gate_kernel: int = 1
    latent_dim: int = 128

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"arch.mode must be one of {MODES}, got {self.mode!r}")
        if self.channel_scale <= 0:
            raise ConfigurationError("arch.channel_scale must be positive")
        if self.gate_kernel < 1 or self.gate_kernel % 2 == 0:
            raise ConfigurationError(f"arch.gate_kernel must be a positive odd integer, got {self.gate_kernel}")

    def build_configs(self):
        return arch_from_table(
            self.resolution,
            self.mode,
            self.num_classes,
            channel_scale=self.channel_scale,
            block_type=self.block_type,
            gen_spectral=self.gen_spectral,
            gffm_after_all_blocks=self.gffm_after_all_blocks,
            swap_gffm_args=self.swap_gffm_args,
            gate_kernel=self.gate_kernel,
            latent_dim=self.latent_dim,
        )


@dataclass(frozen=True)
class MetricsSelection:
    backend: str = "pixel"
    weights: str | None = None
    n_samples: int = 512
    splits: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"metrics.backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "external" and not self.weights:
            raise ConfigurationError("metrics.weights is required for the external backend")
        if self.n_samples < 2 or self.splits < 1:
            raise ConfigurationError("metrics.n_samples must be >= 2 and metrics.splits >= 1")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchSelection = field(default_factory=ArchSelection)
    data: DatasetSpec = field(default_factory=lambda: DatasetSpec("synthetic://shapes"))
    metrics: MetricsSelection = field(default_factory=MetricsSelection)
    out: str = "runs/default"

    def __post_init__(self):
        if self.arch.num_classes != self.data.num_classes:
            raise ConfigurationError(
                f"arch.num_classes={self.arch.num_classes} but data.num_classes={self.data.num_classes}"
            )
        if self.arch.resolution != self.data.resolution:
            raise ConfigurationError(
                f"arch.resolution={self.arch.resolution} but data.resolution={self.data.resolution}"
            )
        if self.arch.swap_gffm_args and self.arch.mode != "proposed":
            raise ConfigurationError("arch.swap_gffm_args is only valid in proposed mode")
        # building the arch configs runs their own validation (channel/latent bookkeeping)
        self.arch.build_configs()

    def to_dict(self) -> dict:
        return {
            "train": asdict(self.train),
            "arch": asdict(self.arch),
            "data": asdict(self.data),
            "metrics": asdict(self.metrics),
            "out": self.out,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_overrides(self, seed: int | None = None, out: str | None = None, swap: bool | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, train=cfg.train.replace(seed=seed))
        if out is not None:
            cfg = replace(cfg, out=out)
        if swap:
            cfg = replace(cfg, arch=replace(cfg.arch, swap_gffm_args=True))
        return cfg


SECTIONS = {"train": TrainConfig, "arch": ArchSelection, "data": DatasetSpec, "metrics": MetricsSelection}


def _run(train: TrainConfig, arch: ArchSelection, data: DatasetSpec, out: str, **metrics) -> RunConfig:
    return RunConfig(train, arch, data, MetricsSelection(**metrics), out)


def _preset(name, res, mode, classes, source, gen_spectral, **metrics):
    return _run(
        TRAIN_PRESETS[name],
        ArchSelection(res, mode, classes, gen_spectral=gen_spectral),
        DatasetSpec(source, res, classes),
        f"runs/{name}",
        **metrics,
    )


RUN_PRESETS: dict[str, RunConfig] = {
    "cifar-gan": _preset("cifar-gan", 32, "proposed", 0, "data/cifar10", False, n_samples=10_000),
    "cifar-cgan": _preset("cifar-cgan", 32, "proposed", 10, "data/cifar10", False, n_samples=10_000),
    "lsun-ttur": _preset("lsun-ttur", 128, "proposed", 0, "data/lsun-church", True, n_samples=10_000),
    "tinyimagenet-ttur": _preset("tinyimagenet-ttur", 128, "proposed", 200, "data/tiny-imagenet", True, n_samples=10_000),
    "hq-256": _preset("hq-256", 256, "proposed", 0, "data/celeba-hq", True, n_samples=5_000),
    "hq-512": _preset("hq-512", 512, "proposed", 0, "data/afhq", True, n_samples=5_000),
    "desk-smoke": _run(
        TRAIN_PRESETS["desk-smoke"],
        ArchSelection(32, "proposed", 4, channel_scale=0.125),
        DatasetSpec("synthetic://shapes?n=2048&classes=4&resolution=32&seed=0", 32, 4),
        "runs/desk-smoke",
        n_samples=512,
    ),
}


def preset(name: str) -> RunConfig:
    try:
        return RUN_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(RUN_PRESETS)}") from None


# -- YAML ---------------------------------------------------------------------------------------
def _key_lines(text: str) -> dict[str, int]:
    """Map ``"section"`` and ``"section.key"`` to 1-based line numbers."""
    root = yaml.compose(text)
    lines: dict[str, int] = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        lines[key_node.value] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for k2, _ in value_node.value:
                lines[f"{key_node.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _fail(source: str, lines: dict[str, int], key: str, message: str):
    line = lines.get(key) or lines.get(key.split(".")[0])
    where = f"{source}:{line}" if line else source
    raise ConfigurationError(f"{where}: {key}: {message}")


def _check_type(value, annotation: str) -> bool:
    if value is None:
        return "None" in annotation
    if isinstance(value, bool):
        return "bool" in annotation
    if isinstance(value, int):
        return "int" in annotation or "float" in annotation
    if isinstance(value, float):
        return "float" in annotation
    if isinstance(value, str):
        return "str" in annotation
    return False


def _section(cls, base, values, section: str, source: str, lines: dict[str, int]):
    if not isinstance(values, dict):
        _fail(source, lines, section, "must be a mapping")
    known = {f.name: f for f in fields(cls)}
    for key, value in values.items():
        if key not in known:
            _fail(source, lines, f"{section}.{key}", f"unknown field (expected one of {', '.join(known)})")
        f = known[key]
        annotation = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        if not _check_type(value, annotation):
            _fail(source, lines, f"{section}.{key}", f"expected {annotation}, got {type(value).__name__} {value!r}")
        if "float" in annotation and isinstance(value, int) and not isinstance(value, bool):
            values[key] = float(value)
    try:
        return replace(base, **values)
    except (ConfigurationError, TypeError, ValueError) as exc:
        msg = str(exc)
        for key in values:
            if re.search(rf"\b{re.escape(key)}\b", msg):
                _fail(source, lines, f"{section}.{key}", msg)
        _fail(source, lines, section, msg)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigurationError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    unknown = set(raw) - set(SECTIONS) - {"preset", "out"}
    for key in sorted(unknown):
        _fail(source, lines, key, f"unknown section (expected preset, out, {', '.join(SECTIONS)})")
    base = preset(raw["preset"]) if "preset" in raw else RunConfig()
    parts = {}
    for name, cls in SECTIONS.items():
        parts[name] = _section(cls, getattr(base, name), dict(raw.get(name) or {}), name, source, lines)
    out = raw.get("out", base.out)
    if not isinstance(out, str):
        _fail(source, lines, "out", "must be a string path")
    try:
        return RunConfig(parts["train"], parts["arch"], parts["data"], parts["metrics"], out)
    except ConfigurationError as exc:
        msg = str(exc)
        m = re.search(r"\b(train|arch|data|metrics)\.(\w+)", msg)
        _fail(source, lines, m.group(0) if m else "config", msg)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def from_dict(d: dict) -> RunConfig:
    """Inverse of :meth:`RunConfig.to_dict` (used when reading checkpoints)."""
    return parse_config(yaml.safe_dump(d), "<embedded config>")
