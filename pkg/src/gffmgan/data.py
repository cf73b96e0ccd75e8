"""Image corpora, preprocessing and seeded mini-batch iteration.

Directory corpora follow the usual layout: for class-conditional data every
first-level subdirectory is one class (labels assigned by sorted name); for
unconditional data every decodable image below the root is used.

Synthetic corpora are addressed as
``synthetic://shapes?n=2048&classes=4&resolution=32&seed=0``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .errors import ConfigurationError

log = logging.getLogger(__name__)

RESOLUTIONS = (32, 128, 256, 512)
IMAGE_EXTENSIONS = {".png", ".bmp", ".gif", ".tif", ".tiff", ".ppm", ".pgm", ".jpg", ".jpeg", ".webp"}
RESIZE_POLICY = "center-crop+bilinear"
SHAPE_NAMES = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")


@dataclass(frozen=True)
class DatasetSpec:
    source: str
    resolution: int = 32
    num_classes: int = 0
    resize: str = RESIZE_POLICY
    seed: int = 0

    def __post_init__(self):
        if self.resolution not in RESOLUTIONS:
            raise ConfigurationError(f"dataset resolution must be one of {RESOLUTIONS}, got {self.resolution}")
        if self.num_classes < 0:
            raise ConfigurationError("num_classes must be >= 0")
        if self.resize != RESIZE_POLICY:
            raise ConfigurationError(f"only the {RESIZE_POLICY!r} resize policy is implemented")


@dataclass
class ImageBatch:
    pixels: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.ndim != 4 or self.pixels.shape[1] != 3:
            raise ValueError(f"pixels must be (n, 3, h, w), got {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < -1.0 or self.pixels.max() > 1.0):
            raise ValueError("pixels must lie in [-1, 1]")
        if self.labels is not None and len(self.labels) != len(self.pixels):
            raise ValueError("labels and pixels disagree in length")

    def __len__(self) -> int:
        return len(self.pixels)


# -- resizing ------------------------------------------------------------------------------
def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0)


def resize_bilinear(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize over the last two axes (half-pixel centres, edge clamp, no antialias)."""
    th, tw = size
    h, w = arr.shape[-2:]
    if (th, tw) == (h, w):
        return arr.copy()
    arr = np.asarray(arr, dtype=np.float64)
    r0, r1, fr = _axis_weights(h, th)
    c0, c1, fc = _axis_weights(w, tw)
    rows = arr[..., r0, :] * (1 - fr)[:, None] + arr[..., r1, :] * fr[:, None]
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def center_crop_square(img: np.ndarray) -> np.ndarray:
    """Crop an ``(h, w, ...)`` array to its central ``min(h, w)`` square."""
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top : top + s, left : left + s]


def preprocess(image, spec: DatasetSpec) -> np.ndarray:
    """Decoded image (PIL or HxW[xC] uint8 array) to a float32 CHW array in [-1, 1]."""
    if isinstance(image, Image.Image):
        if image.mode != "RGB":
            image = image.convert("RGB")
        arr = np.asarray(image)
    else:
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        elif arr.ndim == 3 and arr.shape[2] == 4:
            arr = arr[..., :3]
        elif arr.ndim != 3 or arr.shape[2] != 3:
            raise ConfigurationError(f"cannot interpret image array of shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ConfigurationError("zero-area image")
    arr = center_crop_square(arr).astype(np.float64).transpose(2, 0, 1)
    arr = resize_bilinear(arr, (spec.resolution, spec.resolution))
    return np.clip(arr / 127.5 - 1.0, -1.0, 1.0).astype(np.float32)


# -- datasets --------------------------------------------------------------------------------
class ArrayDataset:
    """In-memory images (already in [-1, 1])."""

    def __init__(self, pixels: np.ndarray, labels: np.ndarray | None = None, num_classes: int = 0, description: str = ""):
        self.pixels = np.ascontiguousarray(pixels, dtype=np.float32)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.description = description
        self.skipped = 0

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def resolution(self) -> int:
        return self.pixels.shape[-1]

    def batch(self, indices) -> ImageBatch:
        indices = np.asarray(indices)
        labels = None if self.labels is None else self.labels[indices]
        return ImageBatch(self.pixels[indices], labels)


class ImageFolderDataset:
    """Lazily decoded directory corpus with a stable, sorted file index."""

    def __init__(self, spec: DatasetSpec, files: list[Path], labels: np.ndarray | None, class_names: list[str], skipped: int):
        self.spec = spec
        self.files = files
        self.labels = labels
        self.class_names = class_names
        self.num_classes = spec.num_classes
        self.skipped = skipped
        self.description = f"folder:{spec.source}"
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.files)

    @property
    def resolution(self) -> int:
        return self.spec.resolution

    def load(self, i: int) -> np.ndarray:
        if i not in self._cache:
            with Image.open(self.files[i]) as im:
                self._cache[i] = preprocess(im, self.spec)
        return self._cache[i]

    def batch(self, indices) -> ImageBatch:
        indices = np.asarray(indices)
        pixels = np.stack([self.load(int(i)) for i in indices])
        labels = None if self.labels is None else self.labels[indices]
        return ImageBatch(pixels, labels)


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.load()
        return True
    except Exception:  # noqa: BLE001 - any decoder failure means "skip"
        return False


def _list_images(root: Path) -> list[Path]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            if Path(name).suffix.lower() in IMAGE_EXTENSIONS:
                out.append(Path(dirpath) / name)
    return out


def scan_and_decode(spec: DatasetSpec):
    """Return a dataset handle for a directory tree or a ``synthetic://`` recipe."""
    if spec.source.startswith("synthetic://"):
        return synthetic_from_uri(spec.source, spec)
    root = Path(spec.source)
    if not root.is_dir():
        raise ConfigurationError(f"dataset directory {root} does not exist")
    files: list[Path] = []
    labels: list[int] = []
    class_names: list[str] = []
    skipped = 0
    if spec.num_classes > 0:
        class_names = sorted(d.name for d in root.iterdir() if d.is_dir())
        if len(class_names) != spec.num_classes:
            raise ConfigurationError(
                f"{root} has {len(class_names)} class directories but num_classes={spec.num_classes}"
            )
        groups = [(k, root / name) for k, name in enumerate(class_names)]
    else:
        groups = [(None, root)]
    for label, directory in groups:
        for path in _list_images(directory):
            if _decodable(path):
                files.append(path)
                if label is not None:
                    labels.append(label)
            else:
                skipped += 1
    if skipped:
        log.warning("skipped %d undecodable file(s) under %s", skipped, root)
    if not files:
        raise ConfigurationError(f"no decodable images found under {root}")
    return ImageFolderDataset(spec, files, np.asarray(labels, dtype=np.int64) if class_names else None, class_names, skipped)


# -- synthetic shapes -------------------------------------------------------------------------
SUPERSAMPLE = 4


def shape_mask(kind: int, xx: np.ndarray, yy: np.ndarray, size: float, angle: float) -> np.ndarray:
    """Boolean coverage of shape ``kind`` centred at the origin of ``(xx, yy)``."""
    c, s = np.cos(angle), np.sin(angle)
    u = c * xx + s * yy
    v = -s * xx + c * yy
    name = SHAPE_NAMES[kind % len(SHAPE_NAMES)]
    if name == "circle":
        return u * u + v * v <= size * size
    if name == "square":
        return (np.abs(u) <= size * 0.8) & (np.abs(v) <= size * 0.8)
    if name == "triangle":
        return (v >= -size * 0.5) & (v <= size - 1.5 * np.abs(u) * 1.15)
    if name == "cross":
        t = size * 0.3
        return ((np.abs(u) <= t) & (np.abs(v) <= size)) | ((np.abs(v) <= t) & (np.abs(u) <= size))
    if name == "ring":
        r2 = u * u + v * v
        return (r2 <= size * size) & (r2 >= (0.55 * size) ** 2)
    if name == "diamond":
        return np.abs(u) + np.abs(v) <= size
    if name == "hbar":
        return (np.abs(u) <= size) & (np.abs(v) <= size * 0.35)
    return (np.abs(v) <= size) & (np.abs(u) <= size * 0.35)


def render_shape(
    kind: int,
    resolution: int,
    center=(0.5, 0.5),
    size: float = 0.3,
    angle: float = 0.0,
    fg=(1.0, 1.0, 1.0),
    bg=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Anti-aliased (supersampled) rendering as float CHW in [0, 1]."""
    n = resolution * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(coords - center[0], coords - center[1])
    cover = shape_mask(kind, xx, yy, size, angle).astype(np.float64)
    cover = cover.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))
    fg = np.asarray(fg, dtype=np.float64)[:, None, None]
    bg = np.asarray(bg, dtype=np.float64)[:, None, None]
    return bg + cover[None] * (fg - bg)


def synthetic_shapes(n: int, num_classes: int, resolution: int = 32, seed: int = 0) -> ArrayDataset:
    """Procedural coloured shapes; the class is the shape type, classes are balanced."""
    if not n >= num_classes >= 1:
        raise ConfigurationError(f"synthetic shapes need n >= num_classes >= 1, got n={n}, classes={num_classes}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    pixels = np.empty((n, 3, resolution, resolution), dtype=np.float32)
    for i, kind in enumerate(labels):
        center = rng.uniform(0.35, 0.65, size=2)
        size = rng.uniform(0.18, 0.3)
        angle = rng.uniform(0, np.pi / 2) + (kind // len(SHAPE_NAMES)) * np.pi / 7
        fg = rng.uniform(0.45, 1.0, size=3)
        bg = rng.uniform(0.0, 0.3, size=3)
        img = render_shape(int(kind), resolution, center, size, angle, fg, bg)
        pixels[i] = (img * 2.0 - 1.0).astype(np.float32)
    return ArrayDataset(pixels, labels, num_classes, f"synthetic-shapes(n={n},classes={num_classes},seed={seed})")


def parse_synthetic_uri(uri: str) -> dict:
    parsed = urlparse(uri)
    if parsed.scheme != "synthetic" or parsed.netloc != "shapes":
        raise ConfigurationError(f"unknown synthetic recipe {uri!r}; expected synthetic://shapes?...")
    query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
    unknown = set(query) - {"n", "classes", "resolution", "seed"}
    if unknown:
        raise ConfigurationError(f"unknown synthetic parameters {sorted(unknown)}")
    try:
        return {k: int(v) for k, v in query.items()}
    except ValueError as exc:
        raise ConfigurationError(f"synthetic parameters must be integers: {uri}") from exc


def synthetic_from_uri(uri: str, spec: DatasetSpec | None = None) -> ArrayDataset:
    q = parse_synthetic_uri(uri)
    res = q.get("resolution", spec.resolution if spec else 32)
    classes = q.get("classes", spec.num_classes if spec and spec.num_classes else 1)
    seed = q.get("seed", spec.seed if spec else 0)
    ds = synthetic_shapes(q.get("n", 1024), classes, res, seed)
    if spec is not None and spec.num_classes == 0:
        ds.labels = None
        ds.num_classes = 0
    return ds


# -- iteration ------------------------------------------------------------------------------------
class BatchIterator:
    """Endless epoch-wise shuffled batches; partial trailing batches are dropped.

    Epoch ``e`` uses the permutation drawn from ``default_rng([seed, e])``, so
    the stream is reproducible and can be resumed from ``state_dict()``.
    """

    def __init__(self, dataset, batch_size: int, seed: int = 0):
        if not 1 <= batch_size <= len(dataset):
            raise ConfigurationError(f"batch size {batch_size} must lie in [1, {len(dataset)}]")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.position = 0
        self._perm = None

    @property
    def batches_per_epoch(self) -> int:
        return len(self.dataset) // self.batch_size

    def permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def __iter__(self):
        return self

    def __next__(self) -> ImageBatch:
        if self.position >= self.batches_per_epoch:
            self.epoch += 1
            self.position = 0
            self._perm = None
        if self._perm is None:
            self._perm = self.permutation(self.epoch)
        lo = self.position * self.batch_size
        self.position += 1
        return self.dataset.batch(self._perm[lo : lo + self.batch_size])

    def state_dict(self) -> dict:
        return {"epoch": self.epoch, "position": self.position, "seed": self.seed, "batch_size": self.batch_size}

    def load_state_dict(self, state: dict) -> None:
        self.epoch = int(state["epoch"])
        self.position = int(state["position"])
        self.seed = int(state["seed"])
        self.batch_size = int(state["batch_size"])
        self._perm = None


def batch_iterator(dataset, batch_size: int, seed: int = 0) -> BatchIterator:
    return BatchIterator(dataset, batch_size, seed)
