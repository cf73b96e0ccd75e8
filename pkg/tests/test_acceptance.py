"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

Criteria 8 and 9 launch the command line in subprocesses pinned to one BLAS
thread; criterion 8 trains three desk-scale models and takes several minutes.
"""

import csv
import math
import os
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

import oracles
from gffmgan import gradcheck_suite
from gffmgan import layers as L
from gffmgan import metrics as M
from gffmgan.autograd import no_grad
from gffmgan.config import preset
from gffmgan.gffm import GatingUnitParams, gating_unit, gating_unit_parts
from gffmgan.networks import (
    MODES,
    PARAM_TARGETS,
    arch_from_table,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    param_count,
)
from gffmgan.training import TRAIN_PRESETS, TrainState, load_checkpoint, restore_state, save_checkpoint, train_step
from gffmgan.data import scan_and_decode

SINGLE_THREAD = {"OPENBLAS_NUM_THREADS": "1", "OMP_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}


def _cli(*args, cwd=None):
    env = {**os.environ, **SINGLE_THREAD}
    src = Path(__file__).resolve().parents[1] / "src"
    env["PYTHONPATH"] = os.pathsep.join([str(src), env.get("PYTHONPATH", "")])
    return subprocess.run([sys.executable, "-m", "gffmgan", *args], env=env, cwd=cwd, capture_output=True, text=True)


# -- 1 -------------------------------------------------------------------------------------------
def test_criterion_01_gradient_fidelity(criterion):
    start = time.perf_counter()
    results = gradcheck_suite.run("all", seeds=range(5))
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in results)
    names = {r.name for r in results}
    ok = worst <= 1e-4 and elapsed <= 120 and len(names) == len(gradcheck_suite.CASES)
    detail = f"{len(names)} cases x 5 seeds, max rel err {worst:.2e} (tol 1e-4), {elapsed:.0f}s (limit 120s)"
    assert criterion(1, "gradient fidelity", ok, detail)


# -- 2 -------------------------------------------------------------------------------------------
def test_criterion_02_gating_algebra(criterion):
    rng = np.random.default_rng(2)
    p = GatingUnitParams.create(4, 3, 4, "gate", rng, kernel=3, dtype=np.float64)
    for conv in (p.w_f, p.w_o):
        conv.bias.data[:] = rng.standard_normal(conv.bias.shape)
    f_i, f_s = rng.standard_normal((2, 4, 5, 5)), rng.standard_normal((2, 3, 5, 5))
    x = np.concatenate([f_i, f_s], axis=1)

    def out_conv(h):
        return oracles.conv2d_loops(h, p.w_o.weight.data, p.w_o.bias.data, 1, 0)

    p.w_g.weight.data[:] = 0.0
    p.w_g.bias.data[:] = 20.0
    open_err = np.abs(gating_unit(f_i, f_s, p).data - out_conv(f_i)).max()
    p.w_g.bias.data[:] = -20.0
    f_r = oracles.conv2d_loops(x, p.w_f.weight.data, p.w_f.bias.data, 1, 1)
    closed_err = np.abs(gating_unit(f_i, f_s, p).data - out_conv(f_r)).max()

    s = GatingUnitParams.create(1, 1, 1, "scalar", rng, dtype=np.float64)
    s.w_g.weight.data[...] = np.array([1.0, -1.0]).reshape(1, 2, 1, 1)
    s.w_g.bias.data[...] = 0.0
    s.w_f.weight.data[...] = np.array([3.0, 0.5]).reshape(1, 2, 1, 1)
    s.w_f.bias.data[...] = 1.0
    s.w_o.weight.data[...] = 2.0
    s.w_o.bias.data[...] = -1.0
    scalar = gating_unit(np.full((1, 1, 1, 1), 2.0), np.full((1, 1, 1, 1), 2.0), s).data.item()

    q = GatingUnitParams.create(4, 4, 4, "blend", rng, kernel=1, dtype=np.float64)
    q.w_g.bias.data[:] = rng.standard_normal(4)
    q.w_f.bias.data[:] = rng.standard_normal(4)
    a, b = 3 * rng.standard_normal((25, 4, 10, 10)), 3 * rng.standard_normal((25, 4, 10, 10))  # 10^4 per map
    parts = gating_unit_parts(a, b, q)
    g, fr, blend = parts.gate.data, parts.refinement.data, parts.blend.data
    lo, hi = np.minimum(a, fr), np.maximum(a, fr)
    tol = 1e-12 * (1 + np.abs(hi))
    in_range = bool(np.all((g > 0) & (g < 1)))
    convex = bool(np.all((blend >= lo - tol) & (blend <= hi + tol)))

    ok = open_err <= 1e-6 and closed_err <= 1e-6 and scalar == 9.0 and in_range and convex
    detail = (
        f"open err {open_err:.1e}, closed err {closed_err:.1e} (tol 1e-6), scalar {scalar!r} (expect 9.0), "
        f"gate in (0,1): {in_range}, convex bound on {blend.size} elements: {convex}"
    )
    assert criterion(2, "gating algebra", ok, detail)


# -- 3 -------------------------------------------------------------------------------------------
SN_SHAPES = [
    (8, 8), (16, 32), (27, 64), (64, 27), (32, 32), (64, 64), (64, 128), (128, 64), (100, 300), (128, 128),
    (128, 256), (256, 128), (200, 200), (256, 256), (256, 512), (300, 700), (384, 384), (512, 512), (512, 768), (512, 1024),
]


def _gapped_matrix(rng, shape, min_gap=0.05):
    """Random orthogonal factors around a random spectrum whose top gap is at least ``min_gap``."""
    m, n = shape
    k = min(m, n)
    u, _ = np.linalg.qr(rng.standard_normal((m, k)))
    v, _ = np.linalg.qr(rng.standard_normal((n, k)))
    top = rng.uniform(0.5, 20.0)
    rest = np.sort(rng.uniform(0.0, top * (1 - rng.uniform(min_gap, 0.5)), k - 1))[::-1]
    return (u * np.concatenate([[top], rest])) @ v.T


def _sn_errors(mat, seed):
    w = L.Parameter(mat, "w", spectral=True, rng=np.random.default_rng(seed))
    sigma_hat, _, _ = L.power_iteration(mat, w.sn_state.copy(), 50)
    normalized = L.spectral_normalize(w, 50)
    sv = np.linalg.svd(mat, compute_uv=False)
    return abs(sigma_hat / sv[0] - 1), abs(np.linalg.svd(normalized, compute_uv=False)[0] - 1), sv[1] / sv[0]


def test_criterion_03_spectral_normalization(criterion):
    # Power iteration converges like (s2/s1)^(2k); the spectral-normalize invariant states its
    # domain as random matrices with a top singular-value gap of at least 5%.
    rng = np.random.default_rng(3)
    errs = [_sn_errors(_gapped_matrix(rng, shape), seed) for seed, shape in enumerate(SN_SHAPES)]
    worst_sigma = max(e[0] for e in errs)
    worst_top = max(e[1] for e in errs)
    # diagnostic only: i.i.d. Gaussian matrices typically have a 1-3% gap
    gauss = [_sn_errors(np.random.default_rng(100 + i).standard_normal(s), i) for i, s in enumerate(SN_SHAPES)]
    gauss_fail = sum(e[0] > 1e-3 for e in gauss)
    ok = worst_sigma <= 1e-3 and worst_top <= 1e-3
    detail = (
        f"20 random matrices up to 512x1024 with gap >= 5%, 50 iterations: worst sigma rel err {worst_sigma:.2e} "
        f"(tol 1e-3), worst |top sv - 1| {worst_top:.2e}; diagnostic i.i.d. Gaussian: {gauss_fail}/20 exceed 1e-3 "
        f"(worst {max(e[0] for e in gauss):.1e}, smallest gap {1 - max(e[2] for e in gauss):.3f})"
    )
    assert criterion(3, "spectral normalization", ok, detail)


# -- 4 -------------------------------------------------------------------------------------------
def _spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def test_criterion_04_fid_oracles(criterion):
    rng = np.random.default_rng(4)
    p = M.GaussianStats(rng.standard_normal(16), _spd(rng, 16))
    self_fid = M.fid(p, p)
    mu = np.array([1.0, -2.0, 0.5, 3.0])
    shift = M.fid(M.GaussianStats(np.zeros(4), np.eye(4)), M.GaussianStats(mu, np.eye(4)))
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 33))
        a = M.GaussianStats(rng.standard_normal(d), _spd(rng, d))
        b = M.GaussianStats(rng.standard_normal(d), _spd(rng, d))
        ref = oracles.w2_gaussian_scipy(a.mean, a.cov, b.mean, b.cov)
        worst = max(worst, abs(M.fid(a, b) - ref) / abs(ref))
    cov = _spd(rng, 5)
    chol = np.linalg.cholesky(cov)
    mean = rng.standard_normal(5)
    x1 = mean + rng.standard_normal((10_000, 5)) @ chol.T
    x2 = mean + rng.standard_normal((10_000, 5)) @ chol.T
    sampled = M.fid(M.gaussian_stats(x1), M.gaussian_stats(x2))
    ok = abs(self_fid) <= 1e-6 and shift == float(mu @ mu) and worst <= 1e-6 and sampled <= 0.05
    detail = (
        f"fid(p,p)={self_fid:.1e}, mean shift {shift!r} vs {float(mu @ mu)!r}, "
        f"20 pairs worst rel err {worst:.1e} (tol 1e-6), same-Gaussian n=1e4 FID {sampled:.4f} (limit 0.05)"
    )
    assert criterion(4, "FID oracle suite", ok, detail)


# -- 5 -------------------------------------------------------------------------------------------
def test_criterion_05_is_oracles(criterion):
    confident = {k: M.inception_score(np.eye(k)[np.arange(20 * k) % k])[0] for k in (2, 10)}
    degenerate = M.inception_score(np.tile([0.1, 0.6, 0.3], (12, 1)))[0]
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        probs = rng.dirichlet(np.full(int(rng.integers(2, 12)), 0.5), size=int(rng.integers(5, 40)))
        worst = max(worst, abs(M.inception_score(probs)[0] / oracles.inception_score_loops(probs) - 1))
    ok = all(v == k for k, v in confident.items()) and degenerate == 1.0 and worst <= 1e-10
    detail = (
        f"K=2 -> {confident[2]!r}, K=10 -> {confident[10]!r}, "
        f"degenerate -> {degenerate!r}, 20 random matrices worst rel err {worst:.1e} (tol 1e-10)"
    )
    assert criterion(5, "IS oracle suite", ok, detail)


# -- 6 -------------------------------------------------------------------------------------------
def test_criterion_06_architecture_conformance(criterion):
    problems = []
    checked = 0
    z = np.random.default_rng(6).standard_normal((2, 128)).astype(np.float32)
    for res in (32, 128, 256, 512):
        for mode in MODES:
            g_cfg, d_cfg = arch_from_table(res, mode)
            gen = build_generator(g_cfg, 0)
            trace = []
            with no_grad():
                x = generator_forward(gen, z, trace=trace)
                logits = discriminator_forward(build_discriminator(d_cfg, 1), x)
            size = 4
            for i, spec in enumerate(g_cfg.blocks):
                size *= 2 if spec.up else 1
                if (f"block{i}", (2, spec.channels, size, size)) not in trace:
                    problems.append(f"{res}/{mode} block {i} shape")
                if any(lbl == f"gffm{i}" for lbl, _ in trace) != spec.gffm:
                    problems.append(f"{res}/{mode} gffm {i}")
            if x.shape != (2, 3, res, res) or np.abs(x.data).max() > 1 or logits.shape != (2,):
                problems.append(f"{res}/{mode} output")
            checked += 1
            del gen, x
    g128, _ = arch_from_table(128, "proposed")
    if [b.gffm for b in g128.blocks] != [True, True, True, False, True]:
        problems.append("128 GFFM placement")

    for name in ("cifar-cgan", "tinyimagenet-ttur"):
        run = preset(name)
        g_cfg, d_cfg = run.arch.build_configs()
        y = np.array([0, run.arch.num_classes - 1])
        with no_grad():
            x = generator_forward(build_generator(g_cfg, 0), z, y)
            logits = discriminator_forward(build_discriminator(d_cfg, 1), x, y)
        if logits.shape != (2,) or np.abs(x.data).max() > 1:
            problems.append(f"{name} conditional forward")

    _, d_cond_cfg = arch_from_table(32, "proposed", 10)
    _, d_plain_cfg = arch_from_table(32, "proposed", 0)
    d_cond, d_plain = build_discriminator(d_cond_cfg, 3, np.float64), build_discriminator(d_plain_cfg, 3, np.float64)
    d_cond.embed.data[...] = 0.0
    imgs = np.random.default_rng(7).uniform(-1, 1, (4, 3, 32, 32))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", L.SpectralNormWarning)
        a = discriminator_forward(d_cond, imgs, np.array([0, 3, 5, 9]), training=False).data
    b = discriminator_forward(d_plain, imgs, training=False).data
    proj_err = float(np.abs(a - b).max())
    if proj_err > 1e-7:
        problems.append("zero-embedding projection")

    ok = not problems
    detail = (
        f"{checked} generator/discriminator presets built and run, 128-res block-4 GFFM absent, 2 conditional presets, "
        f"zero-embedding err {proj_err:.1e} (tol 1e-7)" + (f"; problems: {problems}" if problems else "")
    )
    assert criterion(6, "architecture conformance", ok, detail)


# -- 7 -------------------------------------------------------------------------------------------
def test_criterion_07_parameter_counts(criterion):
    rows = []
    ok = True
    for label, mode, block_type, key, band in (
        ("residual", "biggan", "residual", "residual", 0.10),
        ("dense", "biggan", "dense", "dense", 0.10),
        ("proposed", "proposed", "residual", "proposed", 0.15),
    ):
        g_cfg, _ = arch_from_table(32, mode, block_type=block_type)
        count = param_count(build_generator(g_cfg, 0))
        ratio = count / PARAM_TARGETS[key]
        ok &= abs(ratio - 1) <= band
        rows.append(f"{label} {count / 1e6:.3f}M vs {PARAM_TARGETS[key] / 1e6:.2f}M ({ratio:.3f}, band +/-{band:.0%})")
    summary = _cli("summary", "--preset", "cifar-gan")
    ok &= summary.returncode == 0 and "reference 5.68M  actual" in summary.stdout
    assert criterion(7, "parameter counts", ok, "; ".join(rows) + "; summary prints actual vs reference")


# -- 8 -------------------------------------------------------------------------------------------
def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_criterion_08_desk_smoke_training(criterion, tmp_path):
    improved, parts, finite, slowest = 0, [], True, 0.0
    for seed in (0, 1, 2):
        out = tmp_path / f"seed{seed}"
        t0 = time.perf_counter()
        proc = _cli("train", "--preset", "desk-smoke", "--seed", str(seed), "--out", str(out))
        minutes = (time.perf_counter() - t0) / 60
        slowest = max(slowest, minutes)
        if proc.returncode != 0:
            parts.append(f"seed {seed} failed: {proc.stderr.strip()[-200:]}")
            finite = False
            continue
        metrics = _read_csv(out / "metrics.csv")
        finite &= len(metrics) == 500 and all(math.isfinite(float(r[k])) for r in metrics for k in ("loss_d", "loss_g"))
        evals = {int(r["iteration"]): float(r["fid"]) for r in _read_csv(out / "eval.csv")}
        f0, f500 = evals[0], evals[500]
        improved += f500 < f0
        parts.append(f"seed {seed}: FID {f0:.1f} -> {f500:.1f} ({minutes:.1f} min)")
    ok = finite and improved >= 2 and slowest <= 30
    detail = f"{improved}/3 runs improved, losses finite: {finite}, slowest run {slowest:.1f} min (limit 30); " + "; ".join(parts)
    assert criterion(8, "desk-scale training smoke", ok, detail)


# -- 9 -------------------------------------------------------------------------------------------
def _strip_wallclock(rows):
    return [{k: v for k, v in r.items() if k != "wallclock_s"} for r in rows]


def test_criterion_09_determinism_and_resume(criterion, tmp_path):
    runs = []
    for name in ("a", "b"):
        proc = _cli("train", "--preset", "desk-smoke", "--seed", "7", "--max-iters", "10", "--out", str(tmp_path / name))
        assert proc.returncode == 0, proc.stderr
        runs.append(_strip_wallclock(_read_csv(tmp_path / name / "metrics.csv")))
    identical = runs[0] == runs[1] and len(runs[0]) == 10

    run = preset("desk-smoke")
    g_cfg, d_cfg = run.arch.build_configs()
    dataset = scan_and_decode(run.data)

    def fresh():
        return TrainState.create(run.train, build_generator(g_cfg, 7), build_discriminator(d_cfg, 8), dataset)

    ref = fresh()
    for _ in range(3):
        train_step(ref)
    path = save_checkpoint(tmp_path / "k.ckpt", ref)
    ref_log = [train_step(ref) for _ in range(5)]
    resumed = fresh()
    restore_state(resumed, load_checkpoint(path))
    res_log = [train_step(resumed) for _ in range(5)]
    ref_params = {p.name: p.data.tobytes() for p in L.named_parameters([ref.gen, ref.disc])}
    res_params = {p.name: p.data.tobytes() for p in L.named_parameters([resumed.gen, resumed.disc])}
    bitwise = ref_log == res_log and ref_params == res_params
    ok = identical and bitwise
    detail = (
        f"two single-threaded runs, first 10 metric rows identical (wallclock excluded): {identical}; "
        f"resume at iteration 3, 5 further steps bitwise equal: {bitwise}"
    )
    assert criterion(9, "determinism and resume", ok, detail)


# -- 10 ------------------------------------------------------------------------------------------
def test_criterion_10_preset_fidelity(criterion):
    checks = []
    for name in ("cifar-gan", "cifar-cgan"):
        c = TRAIN_PRESETS[name]
        checks.append((c.lr_g, c.lr_d, c.d_steps_per_g, c.batch_d, c.batch_g, c.total_g_iters) == (2e-4, 2e-4, 5, 64, 128, 50_000))
    for name in ("lsun-ttur", "tinyimagenet-ttur"):
        c = TRAIN_PRESETS[name]
        checks.append((c.lr_g, c.lr_d, c.d_steps_per_g, c.batch_d, c.batch_g) == (1e-4, 4e-4, 1, 32, 32))
    for name in ("hq-256", "hq-512"):
        c = TRAIN_PRESETS[name]
        checks.append((c.batch_d, c.batch_g, c.total_g_iters) == (16, 16, 100_000))
    published = [c for n, c in TRAIN_PRESETS.items() if n != "desk-smoke"]
    checks.append(all(c.decay_window == 50_000 and (c.beta1, c.beta2) == (0.0, 0.9) for c in published))
    ok = all(checks)
    detail = f"{sum(checks)}/{len(checks)} preset checks (CIFAR, TTUR, HQ, 50k linear decay, betas 0/0.9)"
    assert criterion(10, "TTUR/preset fidelity", ok, detail)
