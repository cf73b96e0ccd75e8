"""Command line: ``gffmgan {train,eval,generate,gradcheck,summary}``.

Exit status is 0 on success, 1 when a check fails (gradcheck) and 2 for
configuration, checkpoint or runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck_suite
from .config import RUN_PRESETS, RunConfig, from_dict, load_config, preset
from .data import scan_and_decode
from .errors import CheckpointError, ConfigurationError, EmbeddingError, TrainingDiverged
from .images import parse_grid, save_grid
from .metrics import MetricReport, evaluate, make_backend, sample_images
from .networks import build_discriminator, build_generator, summarize
from .training import load_checkpoint, restore_generator, train_loop

log = logging.getLogger("gffmgan")


def _resolve(args) -> RunConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigurationError("give either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "desk-smoke")
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "out", None), getattr(args, "swap_gffm_args", False))


def _networks(cfg: RunConfig):
    gen_cfg, disc_cfg = cfg.arch.build_configs()
    seed = cfg.train.seed
    return build_generator(gen_cfg, seed), build_discriminator(disc_cfg, seed + 1)


def _run_from_checkpoint(path) -> tuple:
    ckpt = load_checkpoint(path)
    if "run" not in ckpt.meta:
        raise CheckpointError(f"{path} does not embed a run configuration")
    cfg = from_dict(ckpt.meta["run"])
    gen_cfg, _ = cfg.arch.build_configs()
    gen = build_generator(gen_cfg, cfg.train.seed)
    restore_generator(gen, ckpt)
    return cfg, ckpt, gen


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())


def _append_report(report: MetricReport, path: Path) -> None:
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(MetricReport.csv_header())
        fh.write(report.csv_row())


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.out)
    _write_resolved(cfg, out)
    dataset = scan_and_decode(cfg.data)
    gen, disc = _networks(cfg)
    backend = make_backend(cfg.metrics.backend, cfg.metrics.weights, cfg.metrics.seed)
    n_eval = min(cfg.metrics.n_samples, len(dataset))

    def eval_fn(state):
        report = evaluate(
            state.gen, dataset, backend, n_eval, cfg.metrics.seed, cfg.metrics.splits, iteration=state.iteration
        )
        _append_report(report, out / "eval.csv")
        log.info("iter %d  FID %.4f", state.iteration, report.fid)
        return report

    def sample_fn(state, path):
        return save_grid(sample_images(state.gen, 16, seed=0, batch_size=16), path, 4, 4)

    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    art = train_loop(
        cfg.train,
        gen,
        disc,
        dataset,
        out,
        eval_fn=eval_fn,
        sample_fn=sample_fn,
        resume=resume,
        max_iters=args.max_iters,
        extra_meta={"run": cfg.to_dict()},
    )
    last = art.history[-1] if art.history else None
    if last:
        print(f"finished at iteration {last['iter']}: loss_d={last['loss_d']:.4f} loss_g={last['loss_g']:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    cfg, ckpt, gen = _run_from_checkpoint(args.checkpoint)
    if args.config or args.preset:
        data_spec = _resolve(args).data
    else:
        data_spec = cfg.data
    dataset = scan_and_decode(data_spec)
    backend_name = args.backend or cfg.metrics.backend
    backend = make_backend(backend_name, args.weights or cfg.metrics.weights, cfg.metrics.seed)
    n = args.n or min(cfg.metrics.n_samples, len(dataset))
    seed = cfg.metrics.seed if args.seed is None else args.seed
    report = evaluate(gen, dataset, backend, n, seed, args.splits or cfg.metrics.splits, iteration=ckpt.iteration)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    _append_report(report, out / "eval.csv")
    print(report.text())
    return 0


def cmd_generate(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("generate needs --checkpoint")
    _, _, gen = _run_from_checkpoint(args.checkpoint)
    n = args.n or 16
    if args.grid:
        rows, cols = parse_grid(args.grid)
    else:
        cols = int(np.ceil(np.sqrt(n)))
        rows = int(np.ceil(n / cols))
    if rows * cols != n:
        raise ConfigurationError(f"grid {rows}x{cols} does not hold exactly {n} images")
    images = sample_images(gen, n, seed=args.seed or 0, batch_size=max(2, min(n, 64)))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".png")
    if out.suffix.lower() != ".png":
        out = out / "samples.png"
    save_grid(images, out, rows, cols)
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds)
    results = gradcheck_suite.run(args.scope, seeds)
    print(gradcheck_suite.format_table(results, args.tol))
    ok = all(r.passed(args.tol) for r in results)
    print("all checks passed" if ok else "GRADIENT CHECK FAILED")
    return 0 if ok else 1


def cmd_summary(args) -> int:
    cfg = _resolve(args)
    gen_cfg, disc_cfg = cfg.arch.build_configs()
    print(summarize(gen_cfg, disc_cfg, cfg.train.seed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gffmgan", description="GAN generators with gated feature fusion")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--preset", choices=sorted(RUN_PRESETS), help="built-in run configuration")

    p = sub.add_parser("train", parents=[common], help="train a generator/discriminator pair")
    config_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--max-iters", type=int, help="stop after this many more generator iterations")
    p.add_argument("--swap-gffm-args", action="store_true", help="swap f_i/f_s for the auxiliary gating unit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="FID/IS of a checkpoint's generator")
    config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--backend", choices=("pixel", "randconv", "external"))
    p.add_argument("--weights", help="tensor archive for the external backend")
    p.add_argument("--n", type=int, help="number of generated and real samples")
    p.add_argument("--splits", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory receiving eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", parents=[common], help="write a PNG grid of samples")
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="ROWSxCOLS, e.g. 4x4")
    p.add_argument("--out", help="PNG file or directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--scope", choices=gradcheck_suite.SCOPES, default="all")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summary", parents=[common], help="per-block shapes and parameter counts")
    config_flags(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError, TrainingDiverged, EmbeddingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
