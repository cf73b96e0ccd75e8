"""Differentiable tensor primitives used by every network in the package.

All feature maps are NCHW.  Functions accept :class:`~gffmgan.autograd.Tensor`
inputs (plain arrays are wrapped) and return Tensors that carry the backward
closure, so a loss built from them can be differentiated with
``loss.backward()``.
"""

from __future__ import annotations

import contextlib
import warnings
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import ConfigurationError, DegenerateVarianceError, GradCheckError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_STATE_FROZEN: ContextVar[bool] = ContextVar("state_frozen", default=False)


@contextlib.contextmanager
def frozen_state():
    """Suspend BN running-stat and spectral-norm ``u`` updates.

    Forward passes still use batch statistics in training mode; only the
    persistent state is left untouched, which makes repeated calls
    bit-identical (needed by finite differences and by sampling).
    """
    token = _STATE_FROZEN.set(True)
    try:
        yield
    finally:
        _STATE_FROZEN.reset(token)


def state_frozen() -> bool:
    return _STATE_FROZEN.get()


class SpectralNormWarning(RuntimeWarning):
    pass


class Parameter(Tensor):
    """A named trainable array with a gradient slot.

    ``sn_state`` holds the persistent left-singular-vector estimate used by
    spectral normalization; it is ``None`` for parameters that are not
    spectrally normalized.
    """

    __slots__ = ("name", "sn_state")

    def __init__(self, data, name: str = "", spectral: bool = False, rng: np.random.Generator | None = None):
        super().__init__(np.array(data, copy=True, order="C"), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.sn_state: np.ndarray | None = None
        if spectral:
            rng = rng if rng is not None else np.random.default_rng(0)
            u = rng.standard_normal(self.data.shape[0]).astype(self.data.dtype)
            self.sn_state = u / np.linalg.norm(u)

    @property
    def spectral(self) -> bool:
        return self.sn_state is not None

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, spectral={self.spectral})"


@dataclass(eq=False)
class BatchNormState:
    num_channels: int
    gain: Parameter | None = None
    bias: Parameter | None = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    name: str = "bn"

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_channels)
        if self.running_var is None:
            self.running_var = np.ones(self.num_channels)
        if not 0 < self.momentum < 1:
            raise ConfigurationError(f"BN momentum must lie in (0, 1), got {self.momentum}")
        if self.eps <= 0:
            raise ConfigurationError(f"BN eps must be positive, got {self.eps}")

    @classmethod
    def create(cls, num_channels: int, name: str = "bn", affine: bool = True, dtype=np.float32) -> "BatchNormState":
        gain = bias = None
        if affine:
            gain = Parameter(np.ones(num_channels, dtype=dtype), f"{name}.gain")
            bias = Parameter(np.zeros(num_channels, dtype=dtype), f"{name}.bias")
        return cls(
            num_channels,
            gain,
            bias,
            np.zeros(num_channels, dtype=dtype),
            np.ones(num_channels, dtype=dtype),
            name=name,
        )


# -- initialisation -------------------------------------------------------------
def orthogonal(shape: Sequence[int], rng: np.random.Generator, gain: float = 1.0, dtype=np.float32) -> np.ndarray:
    """Orthogonal init of a weight flattened to (shape[0], prod(rest))."""
    rows = shape[0]
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).reshape(shape).astype(dtype)


# -- convolution ------------------------------------------------------------------
def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Rows are output pixels (n, oh, ow), columns are (kh, kw, c) taps."""
    n, c = xp.shape[:2]
    if kh == 1 and kw == 1 and stride == 1:
        return xp.transpose(0, 2, 3, 1).reshape(-1, c)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 4, 5, 1)).reshape(n * oh * ow, kh * kw * c)


def _wmat(w: np.ndarray) -> np.ndarray:
    """(o, c, kh, kw) -> (o, kh*kw*c), matching the im2col column order."""
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def conv2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation ``(n, c, h, w) * (o, c, k, k) -> (n, o, h', w')``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ConfigurationError(f"conv2d: input has {c} channels but weight expects {ci} (weight shape {w.shape})")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ConfigurationError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    wmat = _wmat(w.data)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = None
        if w.requires_grad:
            gw = np.ascontiguousarray((gmat.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2))
        gx = None
        if x.requires_grad:
            if stride == 1 and kh == kw and pad <= kh - 1:
                # input gradient of a stride-1 conv is a "full" conv of g with the flipped kernel
                wf = _wmat(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                q = kh - 1 - pad
                gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
                gcols = _im2col(gp, kh, kw, 1, h, wd)
                gx = np.ascontiguousarray((gcols @ wf.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2))
            else:
                dcols = (gmat @ wmat).reshape(n, oh, ow, kh, kw, c)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                            :, :, :, i, j, :
                        ].transpose(0, 3, 1, 2)
                gx = np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wd])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor.make(out, parents, backward)


# -- normalization -----------------------------------------------------------------
def standardize(x, state: BatchNormState, training: bool = True) -> Tensor:
    """Per-channel ``(x - mean) / sqrt(var + eps)`` with batch or running stats."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != state.num_channels:
        raise ConfigurationError(f"batch norm over {state.num_channels} channels got input of shape {x.shape}")
    n, c, h, w = x.shape
    m = n * h * w
    xd = x.data
    if training:
        if m < 2:
            raise DegenerateVarianceError("batch norm in train mode needs more than one value per channel")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if not _STATE_FROZEN.get():
            mom = state.momentum
            state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
            state.running_var[...] = (1 - mom) * state.running_var + mom * var * (m / (m - 1))
    else:
        mean = state.running_mean.astype(xd.dtype, copy=False)
        var = state.running_var.astype(xd.dtype, copy=False)
    inv = (1.0 / np.sqrt(var + state.eps)).astype(xd.dtype)
    xhat = (xd - mean[None, :, None, None]) * inv[None, :, None, None]

    def backward(g):
        if not training:
            return (g * inv[None, :, None, None],)
        gs = g.sum(axis=(0, 2, 3))
        gxs = (g * xhat).sum(axis=(0, 2, 3))
        gx = (inv / m)[None, :, None, None] * (
            m * g - gs[None, :, None, None] - xhat * gxs[None, :, None, None]
        )
        return (gx,)

    return Tensor.make(xhat, (x,), backward)


def batch_norm(x, state: BatchNormState, training: bool = True) -> Tensor:
    xhat = standardize(x, state, training)
    if state.gain is None:
        return xhat
    c = state.num_channels
    return xhat * ag.reshape(state.gain, (1, c, 1, 1)) + ag.reshape(state.bias, (1, c, 1, 1))


def conditional_batch_norm(x, cond, gain_proj, bias_proj, state: BatchNormState, training: bool = True) -> Tensor:
    """Batch norm whose per-sample gain/bias are linear in ``cond``.

    ``gain = 1 + cond @ gain_proj.T`` and ``bias = cond @ bias_proj.T``;
    ``cond`` is ``(n, d)`` or a single ``(d,)`` vector shared by the batch.
    """
    cond, gain_proj, bias_proj = as_tensor(cond), as_tensor(gain_proj), as_tensor(bias_proj)
    if cond.ndim == 1:
        cond = ag.reshape(cond, (1, -1))
    d = gain_proj.shape[1]
    if cond.shape[-1] != d or bias_proj.shape[1] != d:
        raise ConfigurationError(
            f"conditional batch norm: cond has length {cond.shape[-1]}, projections expect {d}"
        )
    c = state.num_channels
    if gain_proj.shape[0] != c or bias_proj.shape[0] != c:
        raise ConfigurationError(f"conditional batch norm: projections must have {c} rows")
    xhat = standardize(x, state, training)
    gain = 1.0 + cond @ gain_proj.T
    bias = cond @ bias_proj.T
    return xhat * ag.reshape(gain, (-1, c, 1, 1)) + ag.reshape(bias, (-1, c, 1, 1))


# -- spectral normalization -----------------------------------------------------------
def power_iteration(mat: np.ndarray, u: np.ndarray, n_iters: int = 1, tiny: float = 1e-12):
    """Run ``n_iters`` rounds of power iteration starting from left vector ``u``.

    Returns ``(sigma, u, v)`` with ``sigma = u^T mat v``.
    """
    for _ in range(n_iters):
        v = mat.T @ u
        v = v / max(np.linalg.norm(v), tiny)
        u = mat @ v
        u = u / max(np.linalg.norm(u), tiny)
    v = mat.T @ u
    v = v / max(np.linalg.norm(v), tiny)
    return float(u @ mat @ v), u, v


def spectral_normalize(w: Parameter, n_iters: int = 1) -> np.ndarray:
    """Return ``w / sigma_max(w)`` using the persistent power-iteration vector.

    The weight is viewed as ``(shape[0], -1)``.  ``w.sn_state`` is advanced in
    place.  An all-zero weight yields zeros and a :class:`SpectralNormWarning`.
    """
    if n_iters < 1:
        raise ConfigurationError("spectral_normalize needs n_iters >= 1")
    if w.sn_state is None:
        raise ConfigurationError(f"parameter {w.name!r} has no spectral-norm state")
    mat = w.data.reshape(w.shape[0], -1).astype(np.float64)
    sigma, u, _ = power_iteration(mat, w.sn_state.astype(np.float64), n_iters)
    w.sn_state[...] = u
    if sigma <= 1e-12:
        warnings.warn(f"spectral norm of {w.name!r} is zero", SpectralNormWarning, stacklevel=2)
        return np.zeros_like(w.data)
    return (w.data / sigma).astype(w.dtype)


def sn_weight(w: Parameter, training: bool = True) -> Tensor:
    """Differentiable spectrally normalized view of ``w``.

    In training mode one power iteration advances ``sn_state`` (unless state is
    frozen).  The singular vectors are treated as constants, so
    ``d(W/s)/dW = G/s - <G, W>/s^2 * u v^T``; with ``v`` recomputed from the
    stored ``u`` this is exact for the frozen case.
    """
    if w.sn_state is None:
        return w
    mat = w.data.reshape(w.shape[0], -1)
    u = w.sn_state
    if training and not _STATE_FROZEN.get():
        _, u, _ = power_iteration(mat, u, 1)
        w.sn_state[...] = u
    v = mat.T @ u
    vn = np.linalg.norm(v)
    if vn <= 1e-12:
        return w
    v = v / vn
    sigma = float(u @ mat @ v)
    out = w.data / sigma
    shape = w.shape
    uv = np.outer(u, v)

    def backward(g):
        gm = g.reshape(shape[0], -1)
        coef = float((gm * mat).sum()) / (sigma * sigma)
        return ((gm / sigma - coef * uv).reshape(shape),)

    return Tensor.make(out, (w,), backward)


# -- resampling ----------------------------------------------------------------------
def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if int(factor) != factor or factor < 1:
        raise ConfigurationError(f"upsample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor.make(out, (x,), backward)


def resize_nearest(x, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize to ``size`` using ``src = floor(dst * in / out)``."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    th, tw = size
    if th < 1 or tw < 1:
        raise ConfigurationError(f"resize target must be positive, got {size}")
    if (th, tw) == (h, w):
        return x
    if th % h == 0 and tw % w == 0 and th // h == tw // w:
        return upsample_nearest(x, th // h)
    ri = (np.arange(th) * h) // th
    ci = (np.arange(tw) * w) // tw
    out = x.data[:, :, ri[:, None], ci[None, :]]

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), ri[:, None], ci[None, :]), g)
        return (gx,)

    return Tensor.make(out, (x,), backward)


def avg_pool_down(x) -> Tensor:
    """2x2 non-overlapping mean pooling."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"avg_pool_down needs even spatial size, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return Tensor.make(out, (x,), backward)


# -- pointwise / dense ------------------------------------------------------------------
_POINTWISE: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ag.relu,
    "sigmoid": ag.sigmoid,
    "tanh": ag.tanh,
}


def pointwise(x, kind: str) -> Tensor:
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}; expected one of {sorted(_POINTWISE)}") from None
    return fn(as_tensor(x))


def relu(x) -> Tensor:
    return ag.relu(as_tensor(x))


def sigmoid(x) -> Tensor:
    return ag.sigmoid(as_tensor(x))


def tanh(x) -> Tensor:
    return ag.tanh(as_tensor(x))


def linear(v, w, b=None) -> Tensor:
    """``v @ w.T + b`` for ``v`` of shape ``(n, in)`` or ``(in,)``."""
    v, w = as_tensor(v), as_tensor(w)
    if v.shape[-1] != w.shape[1]:
        raise ConfigurationError(f"linear: input dim {v.shape[-1]} does not match weight {w.shape}")
    out = v @ w.T
    return out if b is None else out + b


def global_sum_pool(x) -> Tensor:
    return ag.tsum(as_tensor(x), axis=(2, 3))


def softmax(logits, axis: int = -1) -> Tensor:
    z = as_tensor(logits)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.make(s, (z,), backward)


def concat_channels(tensors: Sequence) -> Tensor:
    return ag.concat(tensors, axis=1)


# -- gradient checking ----------------------------------------------------------------------
@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of scalar ``fn()`` with central differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, floor)`` where the
    floor is ``1e-3`` times the largest analytic gradient magnitude over all
    checked parameters (plus a tiny absolute term).  It keeps coordinates
    whose true gradient is ~0 from being judged purely on round-off.  ``max_coords`` caps the number of coordinates sampled per
    parameter.  Persistent BN/SN state is frozen for the duration.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ConfigurationError(f"grad_check eps must lie in [1e-6, 1e-2], got {eps}")
    rng = np.random.default_rng(seed)
    with frozen_state():
        for p in params:
            p.grad = np.zeros_like(p.data)
        out = fn()
        if out.size != 1:
            raise ConfigurationError("grad_check needs a scalar-valued function")
        out.backward()
        analytic = [np.array(p.grad, copy=True) for p in params]

        scale = max((float(np.max(np.abs(a), initial=0.0)) for a in analytic), default=0.0)
        floor = 1e-3 * scale + 1e-10
        worst = 0.0
        per_param: dict[str, float] = {}
        total = 0
        for k, (p, a) in enumerate(zip(params, analytic)):
            name = getattr(p, "name", "") or f"input{k}"
            if not p.data.flags["C_CONTIGUOUS"]:
                raise GradCheckError(f"{name} is not C-contiguous; perturbations would not reach it")
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            a_flat = a.reshape(-1)[idx]
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(fn().data)
                flat[i] = orig - eps
                fm = float(fn().data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise GradCheckError(f"non-finite value probing {name}[{np.unravel_index(i, p.shape)}]")
                numeric[j] = (fp - fm) / (2 * eps)
            denom = np.maximum(np.maximum(np.abs(a_flat), np.abs(numeric)), floor)
            err = float(np.max(np.abs(a_flat - numeric) / denom, initial=0.0))
            per_param[name] = err
            worst = max(worst, err)
            total += len(idx)
    return GradCheckResult(worst, per_param, total)


# -- parameter bundles ---------------------------------------------------------------------
@dataclass(eq=False)
class Conv:
    """Weight/bias pair plus the geometry of one convolution."""

    weight: Parameter
    bias: Parameter | None = None
    stride: int = 1
    pad: int = 0

    @classmethod
    def create(
        cls,
        in_ch: int,
        out_ch: int,
        kernel: int,
        name: str,
        rng: np.random.Generator,
        spectral: bool = False,
        bias: bool = True,
        dtype=np.float32,
    ) -> "Conv":
        w = Parameter(orthogonal((out_ch, in_ch, kernel, kernel), rng, dtype=dtype), f"{name}.weight", spectral, rng)
        b = Parameter(np.zeros(out_ch, dtype=dtype), f"{name}.bias") if bias else None
        return cls(w, b, 1, kernel // 2)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def apply_conv(x, conv: Conv, training: bool = True) -> Tensor:
    return conv2d(x, sn_weight(conv.weight, training), conv.bias, conv.stride, conv.pad)


@dataclass(eq=False)
class Dense:
    weight: Parameter
    bias: Parameter | None = None

    @classmethod
    def create(
        cls, in_dim: int, out_dim: int, name: str, rng: np.random.Generator, spectral: bool = False, dtype=np.float32
    ) -> "Dense":
        w = Parameter(orthogonal((out_dim, in_dim), rng, dtype=dtype), f"{name}.weight", spectral, rng)
        return cls(w, Parameter(np.zeros(out_dim, dtype=dtype), f"{name}.bias"))


def apply_dense(v, dense: Dense, training: bool = True) -> Tensor:
    return linear(v, sn_weight(dense.weight, training), dense.bias)


@dataclass(eq=False)
class Norm:
    """Plain BN (affine state) or conditional BN (zero-initialised projections)."""

    state: BatchNormState
    gain_proj: Parameter | None = None
    bias_proj: Parameter | None = None

    @property
    def conditional(self) -> bool:
        return self.gain_proj is not None

    @classmethod
    def create(
        cls,
        channels: int,
        name: str,
        cond_dim: int = 0,
        spectral: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> "Norm":
        if cond_dim <= 0:
            return cls(BatchNormState.create(channels, name, affine=True, dtype=dtype))
        state = BatchNormState.create(channels, name, affine=False, dtype=dtype)
        gp = Parameter(np.zeros((channels, cond_dim), dtype=dtype), f"{name}.gain_proj", spectral, rng)
        bp = Parameter(np.zeros((channels, cond_dim), dtype=dtype), f"{name}.bias_proj", spectral, rng)
        return cls(state, gp, bp)


def apply_norm(x, norm: Norm, cond=None, training: bool = True) -> Tensor:
    if norm.conditional:
        if cond is None:
            raise ConfigurationError(f"{norm.state.num_channels}-channel conditional BN called without cond")
        return conditional_batch_norm(
            x, cond, sn_weight(norm.gain_proj, training), sn_weight(norm.bias_proj, training), norm.state, training
        )
    if cond is not None:
        raise ConfigurationError("plain BN was given a conditioning vector")
    return batch_norm(x, norm.state, training)


def named_parameters(obj) -> list[Parameter]:
    """All Parameters reachable from ``obj`` in a deterministic order."""
    out: list[Parameter] = []
    seen: set[int] = set()

    def visit(o):
        if isinstance(o, Parameter):
            if id(o) not in seen:
                seen.add(id(o))
                out.append(o)
        elif hasattr(o, "__dataclass_fields__"):
            for name in o.__dataclass_fields__:
                visit(getattr(o, name))
        elif isinstance(o, (list, tuple)):
            for item in o:
                visit(item)
        elif isinstance(o, dict):
            for key in sorted(o):
                visit(o[key])

    visit(obj)
    return out


def batch_norm_states(obj) -> list[BatchNormState]:
    out: list[BatchNormState] = []

    def visit(o):
        if isinstance(o, BatchNormState):
            out.append(o)
        elif hasattr(o, "__dataclass_fields__"):
            for name in o.__dataclass_fields__:
                visit(getattr(o, name))
        elif isinstance(o, (list, tuple)):
            for item in o:
                visit(item)
        elif isinstance(o, dict):
            for key in sorted(o):
                visit(o[key])

    visit(obj)
    return out
