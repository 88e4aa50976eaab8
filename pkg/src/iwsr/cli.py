"""Command-line interface.

Subcommands: generate, train, superres, eval, baseline, plot, selftest.
Exit codes: 0 on success, 1 on a runtime failure (bad file, failed run),
2 on a usage error.  The ``IWSR_THREADS`` environment variable caps the
BLAS thread pools (best effort: it must be set before numpy loads its
backend, so prefer setting it when launching the process).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    if "IWSR_THREADS" in os.environ:
        os.environ.setdefault(_var, os.environ["IWSR_THREADS"])

import numpy as np

from .autodiff import ContractError
from .container import FormatError, load_grid, save_grid
from .decoder import PcnConfig
from .encoder import EncoderConfig
from .fields import (FieldGrid, GenConfig, GridError, TopographyProfile,
                     baseline_upsample, downsample, generate_synthetic,
                     normalize, terrain_fill)
from .metrics import comparison_table, eval_report, format_report
from .sampling import SamplingConfig
from .train import (TrainConfig, TrainingError, load_checkpoint,
                    save_checkpoint, superresolve, train)

KNOWN_ERRORS = (ContractError, GridError, FormatError, TrainingError,
                OSError, ValueError, KeyError)


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected t,z,x triple, got {text!r}")
    return parts


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iwsr",
        description="Physics-constrained super-resolution of stratified-flow fields.")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, reproducible execution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize an internal-wave dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--nt", type=int, default=64)
    p.add_argument("--nz", type=int, default=64)
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--dt", type=float, default=60.0)
    p.add_argument("--dz", type=float, default=7.8125)
    p.add_argument("--dx", type=float, default=50.0)
    p.add_argument("--amplitude", type=float, default=30.0)
    p.add_argument("--wavelength", type=float, default=1000.0)
    p.add_argument("--phase-speed", type=float, default=0.8)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topography", choices=("flat", "sill", "slope"),
                   default="sill")
    p.add_argument("--sill-width", type=float, default=2000.0)
    p.add_argument("--raw", action="store_true",
                   help="skip terrain fill and normalization")

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--blocks-per-epoch", type=int, default=50)
    p.add_argument("--batch-blocks", type=int, default=6)
    p.add_argument("--lr", type=float, default=8e-4)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--sample-points", type=int, default=1024)
    p.add_argument("--pde-points", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hr-block", type=_int_triple, default=(16, 64, 128))
    p.add_argument("--factors", type=_int_triple, default=(4, 8, 4))
    p.add_argument("--channel-divisor", type=int, default=4,
                   help="shrink the encoder ladder by this factor")
    p.add_argument("--encoder-down", type=_int_list)
    p.add_argument("--encoder-up", type=_int_list)
    p.add_argument("--decoder-depth", type=int, default=6)
    p.add_argument("--decoder-width", type=int, default=128)
    p.add_argument("--no-fft", action="store_true")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-edge-sampling", action="store_true")
    p.add_argument("--no-terrain-fill", action="store_true",
                   help="ablation: normalize without filling terrain cells")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("superres", help="reconstruct a high-resolution grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="low-resolution grid")
    p.add_argument("--out", required=True)
    p.add_argument("--factors", type=_int_triple)

    p = sub.add_parser("eval", help="evaluate a checkpoint against truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="high-resolution truth grid")
    p.add_argument("--factors", type=_int_triple)
    p.add_argument("--report", help="also write the model report to this file")

    p = sub.add_parser("baseline", help="interpolation baseline metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("trilinear", "cubic"),
                   default="trilinear")
    p.add_argument("--factors", type=_int_triple, default=(4, 8, 4))
    p.add_argument("--report")

    p = sub.add_parser("plot", help="render one field slice as a PPM image")
    p.add_argument("--data", required=True)
    p.add_argument("--var", choices=("T", "S", "u", "w"), default="T")
    p.add_argument("--time", type=int, default=0)
    p.add_argument("--out", required=True)

    sub.add_parser("selftest", help="tiny end-to-end smoke test")
    return parser


def _prepared(grid: FieldGrid) -> FieldGrid:
    if not grid.terrain_filled:
        grid = terrain_fill(grid)
    if grid.norm is None:
        grid, _ = normalize(grid)
    return grid


def cmd_generate(args) -> int:
    cfg = GenConfig(nt=args.nt, nz=args.nz, nx=args.nx, dt=args.dt,
                    dz=args.dz, dx=args.dx, amplitude=args.amplitude,
                    wavelength=args.wavelength, phase_speed=args.phase_speed,
                    noise_std=args.noise_std, seed=args.seed)
    topo = TopographyProfile(args.topography, sill_width=args.sill_width)
    grid = generate_synthetic(cfg, topo)
    if not args.raw:
        grid = _prepared(grid)
    save_grid(grid, args.out)
    print(f"wrote {grid.shape} grid to {args.out}")
    return 0


def cmd_train(args) -> int:
    grid = load_grid(args.data)
    if args.no_terrain_fill:
        if grid.norm is None:
            grid, _ = normalize(grid, require_fill=False)
    else:
        grid = _prepared(grid)
    enc = EncoderConfig(attention=not args.no_attention,
                        fft_path=not args.no_fft)
    if args.channel_divisor > 1:
        enc = enc.scaled(args.channel_divisor)
    if args.encoder_down and args.encoder_up:
        enc = EncoderConfig(down_channels=args.encoder_down,
                            up_channels=args.encoder_up,
                            attention=enc.attention, fft_path=enc.fft_path)
    dec = PcnConfig(latent_channels=enc.out_channels,
                    depth=args.decoder_depth, width=args.decoder_width)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs,
                      blocks_per_epoch=args.blocks_per_epoch,
                      batch_blocks=args.batch_blocks,
                      sample_points=args.sample_points,
                      pde_points=args.pde_points, gamma=args.gamma,
                      hr_block=args.hr_block, factors=args.factors,
                      seed=args.seed, encoder=enc, decoder=dec,
                      require_filled=not args.no_terrain_fill)
    if args.no_edge_sampling:
        cfg = replace(cfg, sampling=SamplingConfig(
            edge_fraction=0.0, min_fraction=0.0, max_fraction=0.0))
    state = load_checkpoint(args.resume) if args.resume else None
    if state is not None:
        cfg = state.config
    log = None if args.quiet else print
    state = train(grid, cfg, state=state, checkpoint_path=args.out, log=log)
    save_checkpoint(state, args.out)
    print(f"trained {state.epoch} epochs; checkpoint at {args.out}")
    return 0


def cmd_superres(args) -> int:
    state = load_checkpoint(args.checkpoint)
    lr = load_grid(args.input)
    if lr.norm is None:
        raise ContractError("superres input must carry normalization stats "
                            "(generate without --raw, or downsample a "
                            "normalized grid)")
    factors = args.factors or state.config.factors
    hr = superresolve(state.model, lr, factors,
                      hr_block=state.config.hr_block)
    save_grid(hr, args.out)
    print(f"wrote {hr.shape} reconstruction to {args.out}")
    return 0


def _evaluate(state, truth: FieldGrid, factors):
    normed = _prepared(truth)
    lr = downsample(normed, factors)
    recon = superresolve(state.model, lr, factors,
                         hr_block=state.config.hr_block,
                         hr_terrain=truth.terrain)
    reports = {"model": eval_report(recon, truth)}
    lr_phys = downsample(truth, factors)
    for method in ("trilinear", "cubic"):
        up = baseline_upsample(lr_phys, factors, method=method)
        reports[method] = eval_report(up, truth)
    return reports


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    truth = _prepared(load_grid(args.data))
    factors = args.factors or state.config.factors
    reports = _evaluate(state, truth, factors)
    print(comparison_table(reports), end="")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(format_report(reports["model"]))
    return 0


def cmd_baseline(args) -> int:
    truth = _prepared(load_grid(args.data))
    lr = downsample(truth, args.factors)
    up = baseline_upsample(lr, args.factors, method=args.method)
    report = eval_report(up, truth)
    text = format_report(report)
    print(text, end="")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    return 0


def _diverging_rgb(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to a blue-white-red ramp, (H, W, 3) uint8."""
    v = np.clip(values, -1.0, 1.0)
    r = np.where(v >= 0, 255, 255 * (1 + v))
    b = np.where(v <= 0, 255, 255 * (1 - v))
    g = 255 * (1 - np.abs(v))
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


TERRAIN_RGB = (139, 69, 19)  # brown


def render_slice(grid: FieldGrid, var: str, t: int) -> np.ndarray:
    if not 0 <= t < grid.nt:
        raise ContractError(f"time index {t} outside 0..{grid.nt - 1}")
    data = grid.vars[var][t]
    fluid = grid.fluid
    center = data[fluid].mean() if fluid.any() else 0.0
    span = np.abs(data[fluid] - center).max() if fluid.any() else 1.0
    span = span if span > 0 else 1.0
    rgb = _diverging_rgb((data - center) / span)
    rgb[~fluid] = TERRAIN_RGB
    # Row 0 of the image is the surface: depth increases downward.
    return rgb[::-1]


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def cmd_plot(args) -> int:
    grid = load_grid(args.data)
    rgb = render_slice(grid, args.var, args.time)
    write_ppm(args.out, rgb)
    print(f"wrote {rgb.shape[1]}x{rgb.shape[0]} image to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    cfg = GenConfig(nt=8, nz=16, nx=32, dz=500.0 / 16, dx=250.0, seed=1)
    grid = _prepared(generate_synthetic(
        cfg, TopographyProfile("sill", sill_width=2000.0)))
    tcfg = TrainConfig(
        epochs=1, blocks_per_epoch=2, batch_blocks=2, sample_points=32,
        pde_points=8, hr_block=(4, 8, 16), factors=(2, 2, 2),
        encoder=EncoderConfig(down_channels=(3, 4), up_channels=(3, 4)),
        decoder=PcnConfig(latent_channels=4, depth=2, width=8))
    state = train(grid, tcfg)
    lr = downsample(grid, tcfg.factors)
    hr = superresolve(state.model, lr, tcfg.factors, hr_block=tcfg.hr_block)
    if hr.shape != grid.shape or not all(np.isfinite(v).all()
                                         for v in hr.vars.values()):
        raise TrainingError("selftest reconstruction failed")
    print("selftest ok")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train,
            "superres": cmd_superres, "eval": cmd_eval,
            "baseline": cmd_baseline, "plot": cmd_plot,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        os.environ["IWSR_THREADS"] = "1"
    try:
        return COMMANDS[args.command](args)
    except KNOWN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
