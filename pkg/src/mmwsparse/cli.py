"""``mmw`` command-line interface.

Subcommands: ``simulate``, ``rank``, ``mask``, ``reconstruct``, ``metrics`` and
``sweep``.  All accept ``--config PATH``, ``--seed U64`` and ``--out DIR``.
Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
Set ``MMW_THREADS`` to cap the number of BLAS/FFT worker threads.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, recon, sampling
from .geometry import PhantomSpec, SystemGeometry, default_geometry, desk_geometry, phantom_scene, random_inclusions
from .physics import EchoCube, brute_force_echo, forward_operator, rma_reconstruct, scene_points

logger = logging.getLogger("mmwsparse")

U64_MAX = 2**64 - 1


# --- argument types -----------------------------------------------------------------


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed {value} outside [0, 2^64 - 1]")
    return value


def _ratio(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ratio {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1], got {value}")
    return value


def _unit(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"S must lie in [0, 1], got {value}")
    return value


def _float_list(check):
    def parse(text: str) -> list[float]:
        items = [t for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("list must not be empty")
        return [check(t.strip()) for t in items]

    return parse


# --- config helpers -----------------------------------------------------------------


def _load_config(path: str | None) -> dict[str, str]:
    return io.read_config(path) if path else {}


def _geometry(cfg: dict[str, str]) -> SystemGeometry:
    preset = cfg.get("geometry", "desk")
    if preset not in ("desk", "default"):
        raise io.FormatError(f"geometry preset must be 'desk' or 'default', got {preset!r}")
    base = desk_geometry() if preset == "desk" else default_geometry()
    return io.geometry_from_config(cfg, base)


_RECON_TYPES = {
    "iterations": int, "learning_rate": float, "tv_weight": float, "tv_scale": float, "tv_eps": float,
    "admm_rho": float, "admm_lambda": float, "admm_lambda_scale": float, "admm_iterations": int,
    "cg_iterations": int, "tolerance": float, "hidden": int, "n_blocks": int, "early_stop": int, "seed": int,
}


def _recon_config(cfg: dict[str, str], method: str, seed: int | None) -> recon.ReconConfig:
    kwargs = {k: io.coerce(v, _RECON_TYPES[k], k) for k, v in cfg.items() if k in _RECON_TYPES}
    if seed is not None:
        kwargs["seed"] = seed
    return recon.ReconConfig(method=method, **kwargs)


def _cube_files(directory: str) -> list[Path]:
    path = Path(directory)
    if not path.is_dir():
        raise FileNotFoundError(f"echo directory not found: {path}")
    files = sorted(p for p in path.glob("*.cube") if p.stem.startswith("echo"))
    if not files:
        raise ValueError(f"no echo cubes (echo*.cube) in {path}")
    return files


def _load_ensemble(directory: str) -> list[EchoCube]:
    files = _cube_files(directory)
    echoes = []
    for f in files:
        echo = io.read_echo(f)
        if echoes and echo.shape != echoes[0].shape:
            raise ValueError(f"{f} has dims {echo.shape}, expected {echoes[0].shape}")
        echoes.append(echo)
    return echoes


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands -----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    geom = _geometry(cfg)
    n = io.coerce(cfg.get("ensemble_size", "10"), int, "ensemble_size")
    if n is None or n < 1:
        raise ValueError(f"ensemble_size must be at least 1, got {n}")
    oracle = cfg.get("oracle", "fft")
    if oracle not in ("fft", "brute"):
        raise ValueError(f"oracle must be 'fft' or 'brute', got {oracle!r}")
    n_inc = io.coerce(cfg.get("inclusions", "2"), int, "inclusions")
    seed = args.seed if args.seed is not None else io.coerce(cfg.get("seed", "0"), int, "seed")
    out = _out(args)
    manifest = io.RunManifest(out / "manifest.json", "simulate", {**cfg, "ensemble_size": n, "oracle": oracle}, seed, [args.config] if args.config else [])
    spec = PhantomSpec.for_geometry(geom)
    for i in range(n):
        scene_seed = sampling.derive_seed(seed, i)
        rng = np.random.default_rng(scene_seed)
        spec_i = PhantomSpec.for_geometry(geom, inclusions=random_inclusions(rng, spec, n_inc)) if n_inc else spec
        scene = phantom_scene(spec_i, scene_seed)
        if oracle == "fft":
            echo = forward_operator(scene, geom)
        else:
            echo = brute_force_echo(scene_points(scene, geom), geom)
        manifest.add_output(io.write_echo(out / f"echo_{i:04d}.cube", echo))
        manifest.add_output(io.write_volume(out / "scenes" / f"scene_{i:04d}.cube", scene, geom))
    manifest.finish()
    print(f"wrote {n} echo cube(s) to {out}")
    return 0


def cmd_rank(args) -> int:
    echoes = _load_ensemble(args.echo_dir)
    ranking = sampling.compute_ranking(echoes)
    out = _out(args)
    manifest = io.RunManifest(out / "manifest.json", "rank", {}, args.seed, [args.echo_dir])
    manifest.add_output(io.write_ranking(out / "ranking.rank", ranking))
    for name, values in (("amplitude", ranking.amplitude), ("inverse_gradient", ranking.inverse_gradient), ("ranking", ranking.values)):
        manifest.add_output(io.write_pgm(out / f"{name}.pgm", io.heatmap(values)))
    manifest.finish()
    print(f"ranked {len(echoes)} echo(es) over a {ranking.shape[0]}x{ranking.shape[1]} aperture")
    return 0


def cmd_mask(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else 0
    if args.random:
        if args.ranking:
            shape = io.read_ranking(args.ranking).shape
        else:
            shape = _geometry(cfg).aperture_shape
        mask = sampling.random_mask(shape, args.ratio, seed)
    else:
        if not args.ranking:
            raise ValueError("a ranking file is required unless --random is given")
        if args.s is None:
            raise ValueError("--s is required for statistical masks")
        mask = sampling.design_mask(io.read_ranking(args.ranking), args.s, args.ratio, seed)
    out = _out(args)
    path = io.write_mask(out / (args.name or "mask.mask"), mask)
    print(f"selected {mask.count} of {mask.values.size} elements -> {path}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args.config)
    echo = io.read_echo(args.echo)
    geom = echo.geometry
    if args.mask:
        mask = io.read_mask(args.mask)
        echo = sampling.apply_mask(echo, mask)
    else:
        mask = sampling.SamplingMask.full(geom.aperture_shape)
    config = _recon_config(cfg, args.method, args.seed)
    report = recon.reconstruct(echo, mask, geom, config)
    out = _out(args)
    stem = args.name or f"{Path(args.echo).stem}_{args.method}"
    manifest = io.RunManifest(out / f"{stem}.manifest.json", "reconstruct", config.as_dict(), config.seed, [args.echo] + ([args.mask] if args.mask else []))
    manifest.add_output(io.write_volume(out / f"{stem}.cube", report.volume, geom))
    if args.method != "rma":
        manifest.add_output(io._write(out / f"{stem}.loss.txt", io.report_sidecar(report.losses, config.as_dict())))
    manifest.add_output(io.write_pgm(out / f"{stem}.pgm", metrics.max_projection(report.volume).to_uint8()))
    manifest.finish()
    print(f"{args.method}: {len(report.losses)} iteration(s) in {report.duration:.2f} s -> {out / (stem + '.cube')}")
    return 0


def cmd_metrics(args) -> int:
    ref = io.read_volume(args.reference)
    test = io.read_volume(args.test)
    if ref.shape != test.shape:
        raise ValueError(f"volume dims differ: {ref.shape} vs {test.shape}")
    scores = metrics.evaluate_volumes(ref, test)
    row = io.metric_row(args.scene_id or Path(args.test).stem, args.mask_type, args.ratio, args.s, args.seed, args.method, scores)
    if args.csv:
        io.append_csv(args.csv, row)
    print(",".join(row))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    echoes = _load_ensemble(args.echo_dir)
    geom = echoes[0].geometry
    seed = args.seed if args.seed is not None else 0
    config = _recon_config(cfg, args.method, seed)
    n_rank = io.coerce(cfg.get("ranking_size", str(len(echoes))), int, "ranking_size")
    ranking_set = echoes[:n_rank] if n_rank else echoes
    held_out = echoes[n_rank:] if 0 < n_rank < len(echoes) else echoes
    refs = [rma_reconstruct(e, geom) for e in held_out]
    result = sampling.sweep_sparsity(
        ranking_set, geom, args.ratios, args.s_grid,
        lambda e: recon.reconstruct(e, e.mask, geom, config).volume,
        refs, held_out=held_out, seed=seed,
    )
    out = _out(args)
    manifest = io.RunManifest(out / "manifest.json", "sweep", {**cfg, "method": args.method}, seed, [args.echo_dir])
    rows = [(r, s, rm, ps, ss, int(result.counts[i, j])) for (r, s, rm, ps, ss), (i, j) in
            zip(result.rows(), np.ndindex(result.counts.shape))]
    manifest.add_output(io.write_csv(out / "sweep.csv", ("ratio", "S", "rmse", "psnr", "ssim", "count"), rows))
    for i, ratio in enumerate(result.ratios):
        manifest.add_output(io.write_pgm(out / f"psnr_ratio_{ratio:g}.pgm", io.curve_plot(result.s_values, result.psnr[i])))
    manifest.finish()
    for ratio, best in result.best_s().items():
        print(f"ratio {ratio:g}: best S = {best:g}")
    return 0


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="mmw", description="Statistical sparse sampling and reconstruction for MMW imaging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a phantom echo ensemble")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rank", parents=[common], help="statistical element ranking of an echo directory")
    p.add_argument("echo_dir")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("mask", parents=[common], help="design a sparse sampling mask")
    p.add_argument("ranking", nargs="?", help="ranking file from 'mmw rank'")
    p.add_argument("--ratio", type=_ratio, required=True)
    p.add_argument("--s", type=_unit)
    p.add_argument("--random", action="store_true", help="uniformly random mask instead")
    p.add_argument("--name", help="output file name (default mask.mask)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a volume from a (masked) echo")
    p.add_argument("echo")
    p.add_argument("--mask")
    p.add_argument("--method", choices=recon.METHODS, default="rma")
    p.add_argument("--name", help="output file stem")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", parents=[common], help="RMSE/PSNR/SSIM of two volumes")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--csv", help="append the row to this CSV file")
    p.add_argument("--scene-id")
    p.add_argument("--mask-type", default="full")
    p.add_argument("--ratio", type=_ratio)
    p.add_argument("--s", type=_unit)
    p.add_argument("--method", default="unknown")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", parents=[common], help="sweep S over sampling ratios")
    p.add_argument("echo_dir")
    p.add_argument("--ratios", type=_float_list(_ratio), default=[0.25, 0.1])
    p.add_argument("--s-grid", type=_float_list(_unit), default=[0.0, 0.2, 0.4, 0.5, 0.6, 0.8])
    p.add_argument("--method", choices=recon.METHODS, default="rma")
    p.set_defaults(func=cmd_sweep)
    return parser


def _thread_limit():
    value = os.environ.get("MMW_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"MMW_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ValueError(f"MMW_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"mmw {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
