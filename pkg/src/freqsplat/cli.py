"""Command-line entry point: ``fit``, ``render``, ``spectra`` and ``ablate``.

Every run writes into ``<output_dir>/<config hash>`` (``ablate-<hash>`` for
ablations) and refuses to reuse an existing directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

log = logging.getLogger("freqsplat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqsplat",
        description="Fit images with 2D Gaussian splats under a progressive frequency loss.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (part of the run hash)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for rendering and transforms; never changes results")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    fit = sub.add_parser("fit", help="train on an image or fixture")
    fit.add_argument("--config", required=True, help="key = value config file")

    ren = sub.add_parser("render", help="render a checkpoint to PNG")
    ren.add_argument("--checkpoint", required=True)
    ren.add_argument("--out", required=True)

    spe = sub.add_parser("spectra", help="export a centered log-amplitude heatmap")
    spe.add_argument("--image", required=True)
    spe.add_argument("--out", required=True)
    spe.add_argument("--diff", default=None,
                     help="second image; export the amplitude difference instead")

    abl = sub.add_parser("ablate", help="Base / Base+FR / Base+FR+FA at matched splat counts")
    abl.add_argument("--config", required=True)
    return parser


def _configure_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise SystemExit("freqsplat: error: --threads must be >= 1")
    from .raster import set_threads
    # capped at NUMBA_NUM_THREADS (the core count unless set in the environment)
    set_threads(n)


def _load_run_config(path, seed):
    from . import io
    cfg = io.load_config(path)
    if seed is not None:
        cfg.train.seed = seed
    cfg.validate()
    return cfg


def _target(cfg):
    from . import io
    from .fixtures import make_fixture
    if cfg.input is not None:
        return io.load_image(cfg.input)
    size = cfg.fixture_size
    image, _ = make_fixture(cfg.fixture, (size, size), cfg.train.seed)
    return image


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        raise FileExistsError(f"run directory {path} already exists; refusing to overwrite")
    path.mkdir(parents=True)
    return path


def cmd_fit(args) -> int:
    from . import io
    from .errors import TrainingDiverged
    from .trainer import Trainer

    cfg = _load_run_config(args.config, args.seed)
    target = _target(cfg)
    run_dir = _fresh_dir(Path(cfg.output_dir) / cfg.config_hash())
    (run_dir / "config.txt").write_text(cfg.to_text())
    trainer = Trainer(target, cfg.train, snapshot_every=cfg.snapshot_every)
    try:
        while not trainer.done:
            rec = trainer.step()
            if rec.iteration % 100 == 0:
                log.info("iter %d  loss %.5f  psnr %.2f  splats %d",
                         rec.iteration, rec.loss, rec.psnr, rec.splats)
    except TrainingDiverged as exc:
        snap = exc.snapshot or {}
        if "field" in snap:
            io.save_checkpoint(run_dir / "diverged.freg", snap["field"], cfg.train_text(),
                               snap.get("iteration", 0))
        io.write_records_csv(run_dir / "metrics.csv", trainer.records)
        raise
    field, records, artifacts = trainer.finish()
    io.write_records_csv(run_dir / "metrics.csv", records)
    io.save_checkpoint(run_dir / "checkpoint.freg", field, cfg.train_text(), trainer.iteration)
    for t, image in artifacts.snapshots:
        io.save_image(image, run_dir / f"snapshot_{t:06d}.png")
    if artifacts.final_image is not None:
        io.save_image(artifacts.final_image, run_dir / "final.png")
        io.export_spectrum(artifacts.final_image, run_dir / "final_spectrum.png")
    io.export_spectrum(target, run_dir / "target_spectrum.png")
    print(run_dir)
    return 0


def cmd_render(args) -> int:
    from . import io
    from .raster import render

    field, _, _ = io.load_checkpoint(args.checkpoint)
    io.save_image(render(field).image, args.out)
    return 0


def cmd_spectra(args) -> int:
    from . import io

    image = io.load_image(args.image)
    other = io.load_image(args.diff) if args.diff else None
    if other is not None and other.shape != image.shape:
        from .errors import ShapeError
        raise ShapeError(f"--diff image shape {other.shape} does not match {image.shape}")
    io.export_spectrum(image, args.out, other)
    return 0


def cmd_ablate(args) -> int:
    from .experiments import ABLATION_COLUMNS, median_rows, run_ablation

    cfg = _load_run_config(args.config, args.seed)
    run_dir = _fresh_dir(Path(cfg.output_dir) / f"ablate-{cfg.config_hash()}")
    (run_dir / "config.txt").write_text(cfg.to_text())
    per_seed, calib = [], ["seed,variant,tau_pos,splats"]
    for k in range(cfg.ablation_seeds):
        seed = cfg.train.seed + k
        run_cfg = dataclasses.replace(cfg, train=cfg.train.replace(seed=seed))
        rows, steps = run_ablation(_target(run_cfg), run_cfg.train)
        per_seed.append(rows)
        calib += [f"{seed},{s.variant},{s.tau_pos!r},{s.splats}" for s in steps]
        for r in rows:
            log.info("seed %d  %-11s psnr %.3f  splats %d", seed, r.variant, r.psnr, r.splats)
    rows = median_rows(per_seed)
    lines = [",".join(ABLATION_COLUMNS)]
    lines += [f"{r.variant},{r.psnr!r},{r.ssim!r},{r.l1!r},{r.splats}" for r in rows]
    (run_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    (run_dir / "calibration.csv").write_text("\n".join(calib) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {"fit": cmd_fit, "render": cmd_render, "spectra": cmd_spectra, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_threads(args.threads)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        return exc.code if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import FreqSplatError
    try:
        return COMMANDS[args.command](args)
    except (FreqSplatError, OSError) as exc:
        print(f"freqsplat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
