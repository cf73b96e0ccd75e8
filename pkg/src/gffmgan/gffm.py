"""Gating unit and Gated Feature Fusion Module (GFFM).

The gating unit refines an input feature ``f_i`` with a side feature ``f_s``::

    x   = concat(f_i, f_s)                  # along channels
    f_g = sigmoid(W_g * x)                  # gate
    f_r = W_f * x                           # refinement
    f_o = W_o * (f_g . f_i + (1 - f_g) . f_r)

where ``*`` is convolution and ``.`` elementwise product.  A GFFM normalises
the main-branch feature ``f_m`` and the auxiliary feature ``f_a`` with BN,
brings ``f_a`` to the main branch's channels/resolution, and runs two gating
units: one refines the main feature, the other updates the auxiliary memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import layers as L
from .autograd import Tensor, as_tensor
from .errors import AlignmentError, ConfigurationError

# The GFFM convs are 1x1 by default: with 3x3 W_g/W_f the 32x32 proposed
# generator grows to ~16M parameters instead of the 5.68M budget.
DEFAULT_GATE_KERNEL = 1


@dataclass(eq=False)
class GatingUnitParams:
    w_g: L.Conv
    w_f: L.Conv
    w_o: L.Conv
    name: str = "gate"

    @classmethod
    def create(
        cls,
        c_i: int,
        c_s: int,
        c_o: int,
        name: str,
        rng: np.random.Generator,
        kernel: int = DEFAULT_GATE_KERNEL,
        spectral: bool = False,
        dtype=np.float32,
    ) -> "GatingUnitParams":
        # c_g = c_r = c_o, and the blend multiplies f_g with f_i, so c_i = c_o too
        if c_i != c_o:
            raise ConfigurationError(f"{name}: input channels {c_i} must equal c_o={c_o}")
        return cls(
            L.Conv.create(c_i + c_s, c_o, kernel, f"{name}.w_g", rng, spectral, dtype=dtype),
            L.Conv.create(c_i + c_s, c_o, kernel, f"{name}.w_f", rng, spectral, dtype=dtype),
            L.Conv.create(c_o, c_o, 1, f"{name}.w_o", rng, spectral, dtype=dtype),
            name,
        )


class GatingParts(NamedTuple):
    gate: Tensor
    refinement: Tensor
    blend: Tensor
    output: Tensor


def gating_unit_parts(f_i, f_s, p: GatingUnitParams, training: bool = True) -> GatingParts:
    f_i, f_s = as_tensor(f_i), as_tensor(f_s)
    if f_i.shape[0] != f_s.shape[0] or f_i.shape[2:] != f_s.shape[2:]:
        raise AlignmentError(
            f"{p.name}: input feature {f_i.shape} and side feature {f_s.shape} differ in batch or spatial size"
        )
    x = L.concat_channels([f_i, f_s])
    f_g = L.sigmoid(L.apply_conv(x, p.w_g, training))
    if f_g.shape[1] != f_i.shape[1]:
        raise ConfigurationError(f"{p.name}: gate has {f_g.shape[1]} channels, input feature has {f_i.shape[1]}")
    f_r = L.apply_conv(x, p.w_f, training)
    blend = f_g * f_i + (1.0 - f_g) * f_r
    return GatingParts(f_g, f_r, blend, L.apply_conv(blend, p.w_o, training))


def gating_unit(f_i, f_s, p: GatingUnitParams, training: bool = True) -> Tensor:
    return gating_unit_parts(f_i, f_s, p, training).output


@dataclass(eq=False)
class GffmParams:
    unit_main: GatingUnitParams
    unit_aux: GatingUnitParams | None
    bn_main: L.BatchNormState
    bn_aux: L.BatchNormState
    align_conv: L.Conv | None
    c_o: int
    name: str = "gffm"

    @classmethod
    def create(
        cls,
        c_o: int,
        c_a: int,
        name: str,
        rng: np.random.Generator,
        with_aux_unit: bool = True,
        kernel: int = DEFAULT_GATE_KERNEL,
        spectral: bool = False,
        dtype=np.float32,
    ) -> "GffmParams":
        """``c_a`` is the channel count of the incoming auxiliary feature.

        The last GFFM of a generator only needs the main unit, so
        ``with_aux_unit=False`` leaves ``unit_aux`` out entirely.
        """
        align = None
        if c_a != c_o:
            align = L.Conv.create(c_a, c_o, 1, f"{name}.align", rng, spectral, dtype=dtype)
        unit_aux = None
        if with_aux_unit:
            unit_aux = GatingUnitParams.create(c_o, c_o, c_o, f"{name}.unit_aux", rng, kernel, spectral, dtype)
        return cls(
            GatingUnitParams.create(c_o, c_o, c_o, f"{name}.unit_main", rng, kernel, spectral, dtype),
            unit_aux,
            L.BatchNormState.create(c_o, f"{name}.bn_main", dtype=dtype),
            L.BatchNormState.create(c_o, f"{name}.bn_aux", dtype=dtype),
            align,
            c_o,
            name,
        )


def align_aux(f_a, target: tuple[int, int], p: GffmParams, training: bool = True) -> Tensor:
    """1x1 conv (only when channels differ), then BN, then nearest resize to ``target``."""
    h, w = target
    if h < 1 or w < 1:
        raise ConfigurationError(f"{p.name}: target size must be positive, got {target}")
    f_a = as_tensor(f_a)
    if p.align_conv is None and f_a.shape[1] != p.c_o:
        raise ConfigurationError(f"{p.name}: auxiliary feature has {f_a.shape[1]} channels, expected {p.c_o}")
    if p.align_conv is not None:
        f_a = L.apply_conv(f_a, p.align_conv, training)
    f_a = L.batch_norm(f_a, p.bn_aux, training)
    return L.resize_nearest(f_a, (h, w))


def gffm_forward(
    f_m, f_a, p: GffmParams, last: bool = False, training: bool = True, swap_aux_args: bool = False
) -> tuple[Tensor, Tensor | None]:
    """Return ``(refined main, refined aux)``; the second is ``None`` when ``last``.

    By default the auxiliary unit refines the aligned ``f_a`` using the
    normalised ``f_m`` as side information; ``swap_aux_args`` exchanges the two
    roles for that unit.
    """
    f_m = as_tensor(f_m)
    if f_m.shape[1] != p.c_o:
        raise ConfigurationError(f"{p.name}: main feature has {f_m.shape[1]} channels, expected {p.c_o}")
    m_hat = L.batch_norm(f_m, p.bn_main, training)
    a_hat = align_aux(f_a, f_m.shape[2:], p, training)
    out_m = gating_unit(m_hat, a_hat, p.unit_main, training)
    if last:
        return out_m, None
    if p.unit_aux is None:
        raise ConfigurationError(f"{p.name}: built without an auxiliary unit but used as a non-last GFFM")
    if swap_aux_args:
        out_a = gating_unit(m_hat, a_hat, p.unit_aux, training)
    else:
        out_a = gating_unit(a_hat, m_hat, p.unit_aux, training)
    return out_m, out_a
