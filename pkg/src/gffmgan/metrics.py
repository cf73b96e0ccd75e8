"""Frechet distance and Inception-style score over pluggable embeddings.

Three embedding backends are provided.  None of them is an ImageNet
classifier, so absolute numbers are not comparable with published FID/IS;
the metric algebra is the same for all of them.

* :class:`PixelStatBackend` - bilinear downsample to 16x16, flatten, whiten
  with per-feature statistics fitted on real images.
* :class:`RandomConvBackend` - three frozen random conv layers (fixed seed)
  giving 256-d features and a softmax head over 10 pseudo-classes.
* :class:`ExternalWeightsBackend` - a conv stack read from a tensor archive
  (same format as checkpoints), for users who own suitable weights.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Callable, Protocol

import numpy as np

from . import layers as L
from .archive import read_archive, write_archive
from .autograd import no_grad
from .data import RESIZE_POLICY, resize_bilinear
from .errors import ConfigurationError, EmbeddingError
from .networks import generator_forward


# -- Gaussian statistics and Frechet distance ---------------------------------------------
@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and (n-1)-normalised covariance, symmetrised."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError(f"features must be (n, d), got shape {x.shape}")
    if x.shape[0] < 2:
        raise ConfigurationError(f"need at least 2 samples for a covariance, got {x.shape[0]}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T))


def matrix_sqrt_psd(s, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues down to ``-tol * max(1, |lambda|_max)`` are treated as round-off
    and clamped to zero; anything more negative is rejected.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s), initial=0.0)))
    if np.max(np.abs(s - s.T), initial=0.0) > 1e-8 * scale:
        raise ConfigurationError("matrix_sqrt_psd needs a symmetric matrix")
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    limit = tol * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    if w.size and w.min() < -limit:
        raise ConfigurationError(f"matrix is not PSD: eigenvalue {w.min():.3e}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def fid(p: GaussianStats, q: GaussianStats) -> float:
    """``|mu_p - mu_q|^2 + tr(C_p + C_q - 2 (C_p C_q)^(1/2))``, clamped at zero."""
    if p.dim != q.dim or p.cov.shape != q.cov.shape:
        raise ConfigurationError(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = p.mean - q.mean
    root_p = matrix_sqrt_psd(p.cov)
    # tr sqrt(C_p C_q) == tr sqrt(C_p^1/2 C_q C_p^1/2), and the latter is symmetric
    inner = root_p @ q.cov @ root_p
    cross = np.trace(matrix_sqrt_psd(0.5 * (inner + inner.T)))
    value = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * cross)
    return max(value, 0.0)


def inception_score(class_probs, splits: int = 1) -> tuple[float, float]:
    """Mean and std over ``splits`` of ``exp(E_x KL(p(l|x) || p(l)))``."""
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2:
        raise ConfigurationError(f"class_probs must be (n, K), got shape {p.shape}")
    if splits < 1 or p.shape[0] < splits:
        raise ConfigurationError(f"need 1 <= splits <= n, got splits={splits}, n={p.shape[0]}")
    if np.any(p < 0):
        raise ConfigurationError("class probabilities must be non-negative")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ConfigurationError("class probability rows must sum to 1")
    scores = []
    for part in np.array_split(p, splits):
        # correctly rounded column sums keep exact cases exact (one-hot classes, identical rows)
        marginal = np.array([math.fsum(col) for col in part.T]) / part.shape[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            # per-sample exp(KL) as a product of (p/m)^p, which avoids an exp(log(.)) round trip
            per_sample = np.where(part > 0, (part / marginal) ** part, 1.0).prod(axis=1)
        # geometric mean taken relative to the first sample, so equal values come back unchanged
        ref = per_sample[0]
        scores.append(float(ref * np.exp(np.mean(np.log(per_sample / ref)))))
    return float(np.mean(scores)), float(np.std(scores))


# -- embedding backends ------------------------------------------------------------------------
class EmbeddingBackend(Protocol):
    descriptor: str
    dim: int

    def __call__(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]: ...


class PixelStatBackend:
    """Raw pixels at 16x16, whitened per feature once :meth:`fit` has seen reals."""

    size = 16

    def __init__(self):
        self.dim = 3 * self.size * self.size
        self.mean = np.zeros(self.dim)
        self.std = np.ones(self.dim)
        self.fitted = False

    @property
    def descriptor(self) -> str:
        return f"pixel-stat-{self.size}x{self.size}{'-whitened' if self.fitted else ''}"

    def _flat(self, images) -> np.ndarray:
        x = resize_bilinear(np.asarray(images, dtype=np.float64), (self.size, self.size))
        return x.reshape(len(x), -1)

    def fit(self, real_images) -> "PixelStatBackend":
        flat = self._flat(real_images)
        self.mean = flat.mean(axis=0)
        self.std = np.maximum(flat.std(axis=0), 1e-6)
        self.fitted = True
        return self

    def __call__(self, images):
        return (self._flat(images) - self.mean) / self.std, None


@dataclass
class ConvLayerSpec:
    name: str
    stride: int = 1
    pad: int = 1


class ConvEmbeddingBackend:
    """Sequential ReLU conv stack, global average pool, optional softmax head."""

    def __init__(
        self,
        layers: list[tuple[ConvLayerSpec, np.ndarray, np.ndarray]],
        head: tuple[np.ndarray, np.ndarray] | None,
        input_size: int,
        descriptor: str,
        temperature: float = 1.0,
    ):
        if not layers:
            raise ConfigurationError("embedding network needs at least one conv layer")
        self.layers = layers
        self.head = head
        self.input_size = input_size
        self.descriptor = descriptor
        self.temperature = temperature
        self.dim = layers[-1][1].shape[0]
        if head is not None and head[0].shape[1] != self.dim:
            raise ConfigurationError(f"head expects {head[0].shape[1]} features, stack produces {self.dim}")

    def __call__(self, images, batch_size: int = 256):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise EmbeddingError(f"{self.descriptor}: expected (n, 3, h, w) images, got {images.shape}")
        feats = []
        for lo in range(0, len(images), batch_size):
            x = resize_bilinear(images[lo : lo + batch_size], (self.input_size, self.input_size))
            with no_grad():
                h = x
                for spec, w, b in self.layers:
                    h = L.relu(L.conv2d(h, w, b, spec.stride, spec.pad))
            feats.append(h.data.mean(axis=(2, 3)))
        f = np.concatenate(feats) if feats else np.zeros((0, self.dim))
        probs = None
        if self.head is not None:
            logits = (f @ self.head[0].T + self.head[1]) / self.temperature
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            probs = e / e.sum(axis=1, keepdims=True)
        return f, probs

    # archive interchange
    def tensors_and_meta(self) -> tuple[dict, dict]:
        tensors, layer_meta = {}, []
        for spec, w, b in self.layers:
            tensors[f"{spec.name}.weight"] = w
            tensors[f"{spec.name}.bias"] = b
            layer_meta.append(asdict(spec))
        if self.head is not None:
            tensors["head.weight"], tensors["head.bias"] = self.head
        meta = {
            "kind": "embedding",
            "descriptor": self.descriptor,
            "input_size": self.input_size,
            "layers": layer_meta,
            "head": self.head is not None,
            "temperature": self.temperature,
        }
        return tensors, meta

    def save(self, path):
        tensors, meta = self.tensors_and_meta()
        return write_archive(path, tensors, meta)


def random_conv_backend(seed: int = 0, num_classes: int = 10, temperature: float = 0.05) -> ConvEmbeddingBackend:
    """Frozen random projection: 3 stride-2 convs (32 -> 4 px), 256-d output."""
    rng = np.random.default_rng(seed)
    widths = [(3, 64), (64, 128), (128, 256)]
    layers = []
    for i, (cin, cout) in enumerate(widths):
        w = rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
        layers.append((ConvLayerSpec(f"conv{i}", 2, 1), w, np.zeros(cout)))
    head_w = rng.standard_normal((num_classes, 256)) / np.sqrt(256)
    return ConvEmbeddingBackend(
        layers, (head_w, np.zeros(num_classes)), 32, f"random-conv-256d-seed{seed}", temperature
    )


RandomConvBackend = random_conv_backend


def external_weights_backend(path) -> ConvEmbeddingBackend:
    tensors, meta = read_archive(path)
    if meta.get("kind") != "embedding":
        raise ConfigurationError(f"{path} is not an embedding archive (kind={meta.get('kind')!r})")
    layers = []
    for entry in meta["layers"]:
        spec = ConvLayerSpec(**entry)
        try:
            layers.append((spec, tensors[f"{spec.name}.weight"], tensors[f"{spec.name}.bias"]))
        except KeyError as exc:
            raise ConfigurationError(f"{path}: missing tensor {exc.args[0]}") from exc
    head = (tensors["head.weight"], tensors["head.bias"]) if meta.get("head") else None
    return ConvEmbeddingBackend(
        layers, head, int(meta["input_size"]), f"external:{meta.get('descriptor', path)}", float(meta.get("temperature", 1.0))
    )


ExternalWeightsBackend = external_weights_backend
BACKENDS = ("pixel", "randconv", "external")


def make_backend(name: str, weights: str | None = None, seed: int = 0):
    if name == "pixel":
        return PixelStatBackend()
    if name == "randconv":
        return random_conv_backend(seed)
    if name == "external":
        if not weights:
            raise ConfigurationError("the external backend needs a weights archive path")
        return external_weights_backend(weights)
    raise ConfigurationError(f"unknown metrics backend {name!r}; expected one of {BACKENDS}")


# -- evaluation ------------------------------------------------------------------------------------
REPORT_FIELDS = ("iteration", "fid", "is_mean", "is_std", "n_samples", "seed", "backend", "resize")


@dataclass(frozen=True)
class MetricReport:
    fid: float
    is_mean: float | None
    is_std: float | None
    backend: str
    n_samples: int
    seed: int
    resize: str = RESIZE_POLICY
    iteration: int | None = None

    def row(self) -> dict:
        return {k: ("" if getattr(self, k) is None else getattr(self, k)) for k in REPORT_FIELDS}

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.DictWriter(buf, REPORT_FIELDS, lineterminator="\n").writerow(self.row())
        return buf.getvalue()

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_FIELDS) + "\n"

    def text(self) -> str:
        lines = [
            f"FID        {self.fid:.6f}",
            f"IS         {'n/a' if self.is_mean is None else f'{self.is_mean:.4f} +/- {self.is_std:.4f}'}",
            f"backend    {self.backend}",
            f"samples    {self.n_samples}",
            f"seed       {self.seed}",
            f"resize     {self.resize}",
        ]
        if self.iteration is not None:
            lines.insert(0, f"iteration  {self.iteration}")
        return "\n".join(lines)


def sample_images(gen, n: int, seed: int, batch_size: int = 64) -> np.ndarray:
    """Draw ``n`` images from a generator without touching its persistent state.

    Labels cycle through the classes so every class is equally represented.
    """
    cfg = gen.cfg
    rng = np.random.default_rng(seed)
    dtype = gen.stem.weight.dtype
    z = rng.standard_normal((n, cfg.latent_dim)).astype(dtype)
    y = None
    if cfg.conditional:
        y = rng.permutation(np.arange(n) % cfg.num_classes)
    out = []
    with no_grad(), L.frozen_state():
        for lo in range(0, n, batch_size):
            yb = None if y is None else y[lo : lo + batch_size]
            if len(z[lo : lo + batch_size]) < 2:
                raise ConfigurationError("sampling batches need at least 2 images for batch statistics")
            out.append(generator_forward(gen, z[lo : lo + batch_size], yb, training=True).data)
    return np.concatenate(out)


def _embed(backend, images, what: str):
    try:
        return backend(images)
    except EmbeddingError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise EmbeddingError(f"backend {getattr(backend, 'descriptor', backend)!r} failed on {what}: {exc}") from exc


def evaluate(
    generator,
    real_dataset,
    backend,
    n_samples: int,
    seed: int = 0,
    splits: int = 1,
    batch_size: int = 64,
    iteration: int | None = None,
) -> MetricReport:
    """FID (and IS when the backend has a class head) of generated vs real images.

    ``generator`` is a :class:`~gffmgan.networks.GeneratorParams`, a callable
    ``(n, seed) -> images`` or an image array used as-is.  ``n_samples`` real
    images are drawn from ``real_dataset`` by a permutation seeded with ``seed``.
    """
    if n_samples < 2:
        raise ConfigurationError("n_samples must be >= 2")
    if n_samples > len(real_dataset):
        raise ConfigurationError(f"n_samples={n_samples} exceeds the {len(real_dataset)} available real images")
    idx = np.sort(np.random.default_rng([seed, 1]).permutation(len(real_dataset))[:n_samples])
    reals = real_dataset.batch(idx).pixels
    if isinstance(generator, np.ndarray):
        fakes = generator[:n_samples]
    elif callable(generator) and not hasattr(generator, "cfg"):
        fakes = np.asarray(generator(n_samples, seed))
    else:
        fakes = sample_images(generator, n_samples, seed, batch_size)
    if len(fakes) != n_samples:
        raise ConfigurationError(f"generator produced {len(fakes)} images, expected {n_samples}")
    if hasattr(backend, "fit"):
        backend.fit(reals)
    f_real, _ = _embed(backend, reals, "real images")
    f_fake, probs = _embed(backend, fakes, "generated images")
    score = fid(gaussian_stats(f_real), gaussian_stats(f_fake))
    is_mean = is_std = None
    if probs is not None:
        is_mean, is_std = inception_score(probs, splits)
    return MetricReport(score, is_mean, is_std, backend.descriptor, n_samples, seed, RESIZE_POLICY, iteration)


EvalFn = Callable[..., MetricReport]
