"""Finite-difference checks of every differentiable building block.

Each case builds a tiny float64 instance from a seed and returns a scalar
function plus the tensors to probe.  The scalar is ``sum(output * R)`` for a
fixed random ``R``, which exercises every output coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from .autograd import Tensor
from .blocks import DenseBlockParams, ResBlockParams, dense_block, disc_res_block, gen_res_block
from .gffm import GatingUnitParams, GffmParams, gating_unit, gffm_forward
from .networks import GenArchConfig, GenBlockSpec, build_generator, generator_forward

F64 = np.float64
SCOPES = ("gffm", "blocks", "all")


@dataclass
class CaseResult:
    name: str
    scope: str
    seed: int
    max_rel_error: float
    n_coords: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def _inputs(rng, *shapes):
    return [Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes]


def _probe(out, rng):
    weights = [rng.standard_normal(o.shape) for o in out]
    return lambda outs: sum(((o * w).sum() for o, w in zip(outs, weights)), Tensor(np.zeros(())))


def _randomize(obj, rng, scale=0.3):
    """Give zero-initialised parameters (biases, CBN projections) generic values."""
    for p in L.named_parameters(obj):
        if not np.any(p.data):
            p.data[...] = scale * rng.standard_normal(p.shape)


def _case(build: Callable[[np.random.Generator], tuple[Callable, list]]):
    return build


def gating_case(kernel: int):
    def build(rng):
        p = GatingUnitParams.create(3, 2, 3, "gate", rng, kernel=kernel, dtype=F64)
        _randomize(p, rng)
        f_i, f_s = _inputs(rng, (2, 3, 4, 4), (2, 2, 4, 4))
        probe = _probe([np.empty((2, 3, 4, 4))], rng)
        return (lambda: probe([gating_unit(f_i, f_s, p)])), L.named_parameters(p) + [f_i, f_s]

    return build


def gffm_case(last: bool, swap: bool = False):
    def build(rng):
        c_a = 3 if last else 5
        p = GffmParams.create(3, c_a, "gffm", rng, with_aux_unit=not last, spectral=False, dtype=F64)
        _randomize(p, rng)
        f_m, f_a = _inputs(rng, (2, 3, 4, 4), (2, c_a, 2, 2))
        shapes = [np.empty((2, 3, 4, 4))] * (1 if last else 2)
        probe = _probe(shapes, rng)

        def fn():
            out_m, out_a = gffm_forward(f_m, f_a, p, last=last, swap_aux_args=swap)
            return probe([out_m] if last else [out_m, out_a])

        return fn, L.named_parameters(p) + [f_m, f_a]

    return build


def cbn_case(rng):
    state = L.BatchNormState.create(3, "cbn", affine=False, dtype=F64)
    gp = L.Parameter(0.3 * rng.standard_normal((3, 4)), "cbn.gain_proj")
    bp = L.Parameter(0.3 * rng.standard_normal((3, 4)), "cbn.bias_proj")
    x, cond = _inputs(rng, (2, 3, 3, 3), (2, 4))
    probe = _probe([np.empty((2, 3, 3, 3))], rng)
    return (lambda: probe([L.conditional_batch_norm(x, cond, gp, bp, state)])), [gp, bp, x, cond]


def gen_block_case(cond_dim: int, in_ch: int, out_ch: int):
    def build(rng):
        p = ResBlockParams.create_gen(in_ch, out_ch, "gblock", rng, True, cond_dim, spectral=False, dtype=F64)
        _randomize(p, rng)
        x = _inputs(rng, (2, in_ch, 3, 3))[0]
        cond = _inputs(rng, (2, cond_dim))[0] if cond_dim else None
        probe = _probe([np.empty((2, out_ch, 6, 6))], rng)
        extra = [cond] if cond is not None else []
        return (lambda: probe([gen_res_block(x, cond, p)])), L.named_parameters(p) + [x] + extra

    return build


def disc_block_case(first: bool, down: bool, in_ch: int, out_ch: int):
    def build(rng):
        p = ResBlockParams.create_disc(in_ch, out_ch, "dblock", rng, down, spectral=True, dtype=F64)
        _randomize(p, rng)
        x = _inputs(rng, (2, in_ch, 4, 4))[0]
        s = 2 if down else 4
        probe = _probe([np.empty((2, out_ch, s, s))], rng)
        return (lambda: probe([disc_res_block(x, p, first=first)])), L.named_parameters(p) + [x]

    return build


def dense_case(rng):
    p = DenseBlockParams.create(3, 4, "dense", rng, n_stages=3, growth=2, up=True, cond_dim=3, dtype=F64)
    _randomize(p, rng)
    x, cond = _inputs(rng, (2, 3, 2, 2), (2, 3))
    probe = _probe([np.empty((2, 4, 4, 4))], rng)
    return (lambda: probe([dense_block(x, p, cond)])), L.named_parameters(p) + [x, cond]


def generator_case(rng):
    cfg = GenArchConfig(
        16,
        "proposed",
        4,
        (GenBlockSpec(4, True, True), GenBlockSpec(3, True, True)),
        latent_dim=6,
        num_classes=3,
        embed_dim=2,
    )
    gen = build_generator(cfg, seed=int(rng.integers(1 << 31)), dtype=F64)
    _randomize(gen, rng, 0.2)
    z = _inputs(rng, (3, 6))[0]
    y = np.array([0, 2, 1])
    probe = _probe([np.empty((3, 3, 16, 16))], rng)
    return (lambda: probe([generator_forward(gen, z, y)])), L.named_parameters(gen) + [z]


CASES: dict[str, tuple[str, Callable]] = {
    "gating_unit[k=1]": ("gffm", gating_case(1)),
    "gating_unit[k=3]": ("gffm", gating_case(3)),
    "gffm[aux]": ("gffm", gffm_case(False)),
    "gffm[aux,swapped]": ("gffm", gffm_case(False, True)),
    "gffm[last]": ("gffm", gffm_case(True)),
    "cbn": ("blocks", cbn_case),
    "gen_block[bn,4->3]": ("blocks", gen_block_case(0, 4, 3)),
    "gen_block[cbn,3->3]": ("blocks", gen_block_case(5, 3, 3)),
    "disc_block[first,down]": ("blocks", disc_block_case(True, True, 3, 4)),
    "disc_block[down]": ("blocks", disc_block_case(False, True, 3, 4)),
    "disc_block[same]": ("blocks", disc_block_case(False, False, 3, 3)),
    "dense_block[cbn]": ("blocks", dense_case),
    "generator[proposed,2 blocks]": ("all", generator_case),
}


def run(scope: str = "all", seeds=range(5), max_coords: int = 12, eps: float = 1e-6) -> list[CaseResult]:
    """Run every case in ``scope`` (``all`` includes the gffm and blocks cases)."""
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    results = []
    for name, (case_scope, build) in CASES.items():
        if scope != "all" and case_scope != scope:
            continue
        for seed in seeds:
            fn, params = build(np.random.default_rng([seed, len(name)]))
            res = L.grad_check(fn, params, eps=eps, max_coords=max_coords, seed=seed)
            results.append(CaseResult(name, case_scope, seed, res.max_rel_error, res.n_coords))
    return results


def format_table(results: list[CaseResult], tol: float = 1e-4) -> str:
    lines = [f"{'case':<30}{'seeds':>6}{'coords':>8}{'max rel err':>14}  status"]
    by_name: dict[str, list[CaseResult]] = {}
    for r in results:
        by_name.setdefault(r.name, []).append(r)
    for name, rs in by_name.items():
        worst = max(r.max_rel_error for r in rs)
        ok = all(r.passed(tol) for r in rs)
        lines.append(
            f"{name:<30}{len(rs):>6}{sum(r.n_coords for r in rs):>8}{worst:>14.3e}  {'PASS' if ok else 'FAIL'}"
        )
    return "\n".join(lines)
