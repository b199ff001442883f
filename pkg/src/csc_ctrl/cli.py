"""Command-line entry point: ``csc-ctrl <command> [flags]``.

Failures print one JSON line ``{"error": <kind>, "message": <text>}`` on stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data as D
from . import eval as E
from . import plotting
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .networks import ARCHITECTURES
from .trainer import TrainState, load_checkpoint, train
from .verify import SUITES, run_suite

log = logging.getLogger("csc_ctrl")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind, self.code = kind, code


def _lambda_grid(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambda grid needs one or more nonnegative values")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("UsageError", message, EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [train] [arch] [fista] [rate] [data] sections")
    common.add_argument("--seed", type=int, help="overrides train.seed; drives init, batches and noise")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--arch", choices=sorted(ARCHITECTURES), help="overrides arch.name")
    common.add_argument("--threads", type=int,
                        help="BLAS thread cap (falls back to $CSC_CTRL_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    ckpt = _Parser(add_help=False)
    ckpt.add_argument("--ckpt", required=True, help="checkpoint written by train")

    p = _Parser(prog="csc-ctrl", description="Sparse-coding autoencoder trained by closed-loop rate reduction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train and write metrics.csv, checkpoint.bin, training.png")
    t.add_argument("--strategy", type=int, choices=(1, 2), help="descent gradient: 1 decoder path, 2 total")
    t.add_argument("--batch-size", type=int, help="overrides train.batch_size")
    t.add_argument("--steps", type=int, help="overrides train.steps")

    r = sub.add_parser("reconstruct", parents=[common, ckpt], help="autoencode the test split")
    r.add_argument("--count", type=int, default=16, help="images shown in the grid (default 16)")

    d = sub.add_parser("denoise", parents=[common, ckpt], help="PSNR/MSE/SSIM of noisy-input reconstructions per lambda")
    d.add_argument("--sigma", type=float, default=0.3, help="Gaussian noise std on [-1, 1] images (default 0.3)")
    d.add_argument("--lambda-grid", type=_lambda_grid, default=[0.01, 0.1, 0.3, 0.5, 0.7],
                   help="comma-separated sparsity levels (default 0.01,0.1,0.3,0.5,0.7)")
    d.add_argument("--no-clip", action="store_true", help="do not clip noisy images to [-1, 1]")

    i = sub.add_parser("interpolate", parents=[common, ckpt], help="decode linear paths between feature pairs")
    i.add_argument("--pairs", type=int, default=4, help="random test-image pairs (default 4)")
    i.add_argument("--frames", type=int, default=8, help="frames per path including endpoints (default 8)")

    c = sub.add_parser("pca", parents=[common, ckpt], help="decode samples closest to per-class principal directions")
    c.add_argument("--class", dest="cls", type=int, default=0, help="class label (default 0)")
    c.add_argument("--top-k", type=int, default=4, help="principal components (default 4)")
    c.add_argument("--per-component", type=int, default=8, help="samples per component (default 8)")

    v = sub.add_parser("verify", help="run built-in oracle and property suites")
    v.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all", help="suite to run (default all)")
    return p


# -- helpers ------------------------------------------------------------------


def _resolve(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
    except ConfigError as exc:
        raise CliError("ConfigError", str(exc), EXIT_USAGE) from None
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.arch is not None:
        changes["arch"] = args.arch
    for flag, key in (("strategy", "strategy"), ("batch_size", "batch_size"), ("steps", "steps")):
        if getattr(args, flag, None) is not None:
            changes[key] = getattr(args, flag)
    try:
        train_cfg = dataclasses.replace(cfg.train, **changes)
    except ValueError as exc:
        raise CliError("ConfigError", str(exc), EXIT_USAGE) from None
    return RunConfig(train_cfg, cfg.data)


def load_split(cfg: RunConfig, split: str) -> D.Dataset:
    """Training or test images described by the [data] section."""
    dc = cfg.data
    if dc.source == "synthetic":
        model = D.SyntheticModel.random(cfg.train.arch, seed=dc.model_seed, density=dc.density,
                                        mag_low=dc.mag_low, mag_high=dc.mag_high, noise_std=dc.noise_std)
        n, seed = (dc.n_train, dc.sample_seed) if split == "train" else (dc.n_test, dc.sample_seed + 1)
        ds, _ = D.sample_synthetic(model, n, seed)
        return ds
    path = Path(dc.path)
    if not path.is_file():
        raise CliError("DataError", f"dataset file not found: {path}")
    try:
        ds = D.load_cifar10(path)
    except D.FormatError as exc:
        raise CliError("DataError", str(exc)) from None
    images = D.downscale2x(ds.images) if dc.downscale else ds.images
    limit = dc.n_train if split == "train" else dc.n_test
    return D.Dataset(images[:limit], ds.labels[:limit])


def _state(args, cfg: RunConfig) -> TrainState:
    if not Path(args.ckpt).is_file():
        raise CliError("CheckpointError", f"checkpoint not found: {args.ckpt}")
    try:
        state = load_checkpoint(args.ckpt, cfg.train)
    except (ValueError, KeyError) as exc:
        raise CliError("CheckpointError", f"{args.ckpt}: {exc}") from None
    if state.network.spec.name != cfg.train.arch:
        # the checkpoint defines the architecture; data must match it
        cfg.train = dataclasses.replace(cfg.train, arch=state.network.spec.name)
    return state


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _threads(args):
    n = args.threads if getattr(args, "threads", None) is not None else os.environ.get("CSC_CTRL_THREADS")
    if n is None:
        return nullcontext()
    try:
        n = int(n)
    except ValueError:
        raise CliError("UsageError", f"thread count must be an integer, got {n!r}", EXIT_USAGE) from None
    if n < 1:
        raise CliError("UsageError", f"thread count must be >= 1, got {n}", EXIT_USAGE)
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# -- commands -----------------------------------------------------------------


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    ds = load_split(cfg, "train")
    in_shape = ds.images.shape[1:]
    spec = ARCHITECTURES[cfg.train.arch]
    if in_shape != (spec.in_channels, spec.input_size, spec.input_size):
        raise CliError("DataError", f"images {in_shape} do not fit architecture {spec.name}")
    for stale in ("metrics.csv", "checkpoint.bin"):
        (out / stale).unlink(missing_ok=True)
    _, rows = train(ds.images, cfg.train, out_dir=out)
    if rows:
        plotting.plot_training(rows, out / "training.png")
        last = rows[-1]
        print(f"step={last['step']} delta_r={last['delta_r']:.6g} recon_mse={last['recon_mse']:.6g} "
              f"sparsity={last['sparsity']:.4f}")


def cmd_reconstruct(args, cfg, out):
    state = _state(args, cfg)
    ds = load_split(cfg, "test")
    recon = state.network.autoencode(ds.images, mode="eval")
    report = E.compare(recon, ds.images)
    _write_csv(out / "reconstruct.csv", [report.as_dict()], ["psnr", "mse", "ssim"])
    k = min(args.count, len(ds))
    D.write_image_grid(np.concatenate([ds.images[:k], recon[:k]]), out / "reconstruct.ppm", rows=2)
    plotting.plot_images(np.concatenate([ds.images[:k], recon[:k]]), out / "reconstruct.png", rows=2)
    print(f"psnr={report.psnr:.4f} mse={report.mse:.6g} ssim={report.ssim:.4f}")


def cmd_denoise(args, cfg, out):
    state = _state(args, cfg)
    ds = load_split(cfg, "test")
    rows = E.denoise_sweep(state.network, ds.images, args.sigma, args.lambda_grid, seed=cfg.train.seed,
                           clip=not args.no_clip)
    _write_csv(out / "denoise.csv", rows, ["lam", "psnr", "mse", "ssim"])
    plotting.plot_denoise(rows, out / "denoise.png", sigma=args.sigma)
    best = max(rows, key=lambda r: r["psnr"])
    print(f"rows={len(rows)} best_lam={best['lam']:g} best_psnr={best['psnr']:.4f}")


def cmd_interpolate(args, cfg, out):
    state = _state(args, cfg)
    ds = load_split(cfg, "test")
    if len(ds) < 2:
        raise CliError("DataError", "interpolation needs at least 2 test images")
    rng = np.random.default_rng(cfg.train.seed)
    frames = []
    for _ in range(args.pairs):
        a, b = rng.choice(len(ds), size=2, replace=False)
        frames.append(E.interpolate(state.network, ds.images[a], ds.images[b], args.frames))
    grid = np.concatenate(frames)
    D.write_image_grid(grid, out / "interpolate.ppm", rows=args.pairs)
    plotting.plot_images(grid, out / "interpolate.png", rows=args.pairs)
    print(f"pairs={args.pairs} frames={args.frames}")


def cmd_pca(args, cfg, out):
    state = _state(args, cfg)
    ds = load_split(cfg, "test")
    if ds.labels is None:
        raise CliError("DataError", "pca needs a labeled dataset (data.source = cifar10)")
    try:
        recons, idx = E.class_pca_reconstruct(state.network, ds.images, ds.labels, args.cls,
                                              args.top_k, args.per_component)
    except ValueError as exc:
        raise CliError("DataError", str(exc)) from None
    flat = recons.reshape((-1,) + recons.shape[2:])
    D.write_image_grid(flat, out / "pca.ppm", rows=args.top_k)
    plotting.plot_images(flat, out / "pca.png", rows=args.top_k)
    rows = [{"component": c, "rank": r, "index": int(idx[c, r])}
            for c in range(idx.shape[0]) for r in range(idx.shape[1])]
    _write_csv(out / "pca.csv", rows, ["component", "rank", "index"])
    print(f"class={args.cls} components={args.top_k}")


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        checks = run_suite(name)
        bad = [c for c in checks if not c.passed]
        failed += len(bad)
        print(f"{name}: {len(checks) - len(bad)}/{len(checks)} passed")
        for c in bad[:5]:
            print(f"  FAIL {c.name} {c.detail}")
    return EXIT_FAILURE if failed else 0


COMMANDS = {"train": cmd_train, "reconstruct": cmd_reconstruct, "denoise": cmd_denoise,
            "interpolate": cmd_interpolate, "pca": cmd_pca}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "verbose", False):
            logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        if args.command == "verify":
            return cmd_verify(args)
        cfg = _resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with _threads(args):
            COMMANDS[args.command](args, cfg, out)
        (out / "resolved.cfg").write_text(dump_config(cfg))
        return 0
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc).replace("\n", " ")}), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
