"""monocanon command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import tracemalloc
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import BaselineConfig, build_baseline_model, run_comparison, train_baseline
from .canon import DecCanonicalizer
from .checks import run_claim_checks, run_group_checks
from .config import RunConfig
from .const import _LOGGER, __version__
from .datagen import DatasetManifest, SegmentGlyphs, compose_sample, generate_dataset, read_dataset, write_dataset
from .datagen.const import MNIST_FILES
from .dec import AndersonConfig, DecNet
from .dec.energy import EnergyNet, unrolled_gd_backward, unrolled_gd_canonicalize
from .enum import BackwardMode, BaselineKind, CanonicalizerKind
from .exceptions import ConfigError, MonoCanonException, UsageError
from .image_warp import apply_warp, apply_warp_inverse, draw_warp_grid, write_pnm
from .metrics import canonicalizer_equivariance_probe, evaluate
from .nn.checkpoint import assign_parameters, load_checkpoint
from .nn.train import TrainConfig
from .warp import Warp2D, WarpSampler, derive_seed

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s: %(message)s"
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

COMMAND_KINDS = {
    CanonicalizerKind.NONE: BaselineKind.AUGMENTED,
    CanonicalizerKind.DEC: BaselineKind.DEC,
    CanonicalizerKind.VANILLA: BaselineKind.VANILLA_CANON,
}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest(config: RunConfig) -> DatasetManifest:
    data = config.data
    source = data.source
    if source == "auto":
        found = data.mnist_dir is not None and all(
            (Path(data.mnist_dir) / stem).exists() or (Path(data.mnist_dir) / f"{stem}.gz").exists()
            for split in MNIST_FILES.values() for stem in split
        )
        source = "mnist" if found else "segments"
        _LOGGER.info("Glyph source: %s", source)
    return DatasetManifest(
        n_train=data.n_train, n_test=data.n_test, canvas=data.canvas, digits=data.digits,
        scale_range=data.scale_range, seed=data.seed, source=source, mnist_dir=data.mnist_dir,
        variants=data.variants, grid_size=config.model.grid_size, concentration=data.concentration,
        min_segment=config.model.min_segment, spread=data.spread,
    )


def _sampler(config: RunConfig) -> WarpSampler:
    return WarpSampler(config.model.grid_size, config.data.concentration, config.model.min_segment,
                       config.data.spread)


def _anderson(config: RunConfig) -> AndersonConfig:
    dec = config.dec
    return AndersonConfig(dec.window, dec.beta, dec.max_iters, dec.tol, dec.verbose)


def _baseline_config(config: RunConfig, manifest: DatasetManifest) -> BaselineConfig:
    model = config.model
    return BaselineConfig(
        n_classes=manifest.n_classes,
        size=manifest.canvas,
        channels=tuple(model.channels),
        grid_size=model.grid_size,
        min_segment=model.min_segment,
        dec_channels=None if model.dec_channels is None else tuple(model.dec_channels),
        anderson=_anderson(config),
        backward_mode=BackwardMode(config.dec.backward),
        unroll_steps=config.dec.unroll_steps,
        placements=model.placements,
        shared=model.shared,
        loss_weight=config.train.loss_weight,
        seed=config.train.seed,
    )


def _train_config(config: RunConfig) -> TrainConfig:
    train = config.train
    return TrainConfig(lr=train.lr, batch_size=train.batch_size, epochs=train.epochs, optimizer=train.optimizer,
                       seed=train.seed, aux_samples=train.aux_samples,
                       freeze_canonicalizer=train.freeze_canonicalizer)


def _dataset(config: RunConfig) -> tuple:
    if config.paths.data is None:
        raise UsageError("paths.data must point at a generated dataset")
    return read_dataset(config.paths.data)


def cmd_gen(config: RunConfig, out: Path) -> int:
    """Generates and writes the dataset."""
    manifest = _manifest(config)
    write_dataset(manifest, generate_dataset(manifest), out)
    return EXIT_OK


def cmd_train(config: RunConfig, out: Path) -> int:
    """Trains ``train.kind``; writes model.mcan and train_log.csv."""
    manifest, splits = _dataset(config)
    result = train_baseline(
        BaselineKind(config.train.kind), _baseline_config(config, manifest), _train_config(config),
        manifest.sampler(), splits["train"], splits.get("test"), augmented=config.paths.augmented,
        log_path=out / "train_log.csv", checkpoint=out / "model.mcan",
    )
    _LOGGER.info("Trained %s for %s epochs", result.kind, len(result.history))
    return EXIT_OK


def cmd_eval(config: RunConfig, out: Path) -> int:
    """Evaluates ``model.canonicalizer`` on the test split; writes metrics.json."""
    manifest, splits = _dataset(config)
    kind = CanonicalizerKind(config.model.canonicalizer)
    if kind not in COMMAND_KINDS:
        raise UsageError(f"cannot evaluate canonicalizer {kind}")
    model = build_baseline_model(COMMAND_KINDS[kind], _baseline_config(config, manifest))
    if config.paths.checkpoint is not None:
        loaded = assign_parameters(model, load_checkpoint(config.paths.checkpoint), strict=False)
        _LOGGER.info("Loaded %s tensors from %s", len(loaded), config.paths.checkpoint)
    test = splits["test"]
    variants = splits.get("variants")
    if config.eval.limit is not None:
        test = test.subset(range(min(config.eval.limit, len(test))))
        if variants is not None:
            variants = variants.subset(np.flatnonzero(variants.variant_of < len(test)))
    sampler = manifest.sampler()
    report = evaluate(model, test, sampler, variants=variants, n_warps=config.eval.n_warps, seed=config.eval.seed,
                      buckets=config.eval.buckets, canonicalizer=str(kind), batch_size=config.eval.batch_size)
    if config.eval.probe and hasattr(model, "canonicalizers") and model.canonicalizers:
        report.extra["canonicalizer_probe"] = canonicalizer_equivariance_probe(
            model.canonicalizers[0], test.images, sampler, config.eval.n_warps, config.eval.seed)
    _write_json(out / "metrics.json", report.to_dict())
    return EXIT_OK


def cmd_check_group(config: RunConfig, out: Path) -> int:
    """Runs every warp group property suite; writes check_group.json."""
    checks = config.checks
    report = run_group_checks(tuple(checks.grid_sizes), checks.triples, checks.seed)
    _write_json(out / "check_group.json", report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_check_claim1(config: RunConfig, out: Path) -> int:
    """Runs the fixed-point oracle over ``checks.claim_seeds`` seeds; writes check_claim1.json."""
    checks = config.checks
    seeds = range(checks.seed, checks.seed + checks.claim_seeds)
    report = run_claim_checks(seeds, size=checks.claim_size, grid=checks.claim_grid)
    _write_json(out / "check_claim1.json", report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_demo_warp(config: RunConfig, out: Path) -> int:
    """Writes original, warped and unwarped images with their warp grids as PGM."""
    seed = config.data.seed
    if config.paths.data is not None:
        _, splits = read_dataset(config.paths.data)
        image = splits["test"].images[0, 0].astype(np.float64)
    else:
        rng = np.random.default_rng(seed)
        source = SegmentGlyphs("test")
        digits = rng.integers(0, 10, size=config.data.digits)
        glyphs = [source.pick(int(d), rng)[1] for d in digits]
        scales = np.full(len(digits), 1.0)
        image = compose_sample(glyphs, digits, scales, config.data.canvas, rng).image[0]
    warp = _sampler(config).sample(derive_seed(seed, 0))
    warped = apply_warp(image, warp)
    restored = apply_warp_inverse(warped, warp)
    panels = {
        "original": draw_warp_grid(image, Warp2D.identity(warp.grid_n), value=0.5),
        "warped": draw_warp_grid(warped, warp, value=0.5),
        "unwarped": restored,
    }
    for name, panel in panels.items():
        write_pnm(out / f"{name}.pgm", panel)
    write_pnm(out / "demo.pgm", np.concatenate(list(panels.values()), axis=1))
    _write_json(out / "demo.json", {"warp": warp.to_dict(), "round_trip_mse": float(np.mean((restored - image) ** 2))})
    return EXIT_OK


def _measure(fn: Callable[[], None], repeats: int) -> dict:
    tracemalloc.start()
    started = time.perf_counter()
    for _ in range(repeats):
        fn()
    seconds = (time.perf_counter() - started) / repeats
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return {"seconds_per_batch": seconds, "peak_bytes": int(peak)}


def cmd_bench(config: RunConfig, out: Path) -> int:
    """Times one training step of DEC canonicalization against unrolled GD; writes bench.json."""
    bench = config.bench
    grid = config.model.grid_size
    rng = np.random.default_rng(bench.seed)
    batch = rng.uniform(0.0, 1.0, size=(bench.batch_size, 1, bench.size, bench.size))
    dec = DecNet.build(1, grid, seed=derive_seed(bench.seed, 1), zero_head=False)
    energy = EnergyNet.build(1, grid, seed=derive_seed(bench.seed, 2))
    anderson = _anderson(config)
    d_values = rng.normal(size=dec.constrain(dec.identity_raw()).parameter_vector().size)
    d_raw = rng.normal(size=dec.raw_size)

    def dec_step() -> None:
        canonicalizer = DecCanonicalizer(dec, anderson, BackwardMode(config.dec.backward), config.dec.unroll_steps)
        canonicalizer.training = True
        for img in batch:
            _, tape = canonicalizer.canonicalize(img)
            canonicalizer.backward(img, tape, d_values)

    def gd_step() -> None:
        for img in batch:
            tape = unrolled_gd_canonicalize(energy, img, lr=bench.gd_lr, steps=bench.gd_steps)
            unrolled_gd_backward(energy, tape, d_raw)

    results = {
        "dec": _measure(dec_step, bench.repeats),
        "unrolled_gd": _measure(gd_step, bench.repeats),
        "batch_size": bench.batch_size,
        "dec_max_iters": anderson.max_iters,
        "gd_steps": bench.gd_steps,
    }
    results["time_ratio"] = results["dec"]["seconds_per_batch"] / results["unrolled_gd"]["seconds_per_batch"]
    results["memory_ratio"] = results["dec"]["peak_bytes"] / max(1, results["unrolled_gd"]["peak_bytes"])
    _write_json(out / "bench.json", results)
    return EXIT_OK


def cmd_compare(config: RunConfig, out: Path) -> int:
    """Trains and evaluates every comparison method; writes comparison.csv."""
    manifest, splits = _dataset(config)
    test = splits["test"]
    if config.eval.limit is not None:
        test = test.subset(range(min(config.eval.limit, len(test))))
    run_comparison(_baseline_config(config, manifest), _train_config(config), manifest.sampler(), splits["train"],
                   test, out_dir=out, sweep=config.train.sweep, n_warps=config.eval.n_warps,
                   eval_seed=config.eval.seed, buckets=config.eval.buckets)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "check-group": cmd_check_group,
    "check-claim1": cmd_check_claim1,
    "demo-warp": cmd_demo_warp,
    "bench": cmd_bench,
    "compare": cmd_compare,
}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parses the command line."""
    parser = argparse.ArgumentParser(prog="monocanon", description="Monotone-warp canonicalization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS), help="Command to run")
    parser.add_argument("--config", default=None, help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value by dotted path, e.g. train.epochs=2")
    parser.add_argument("--seed", type=int, default=None, help="Seed for data, training and evaluation")
    parser.add_argument("--out", default=None, help="Output directory (default: runs/<command>)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on the console")
    return parser.parse_args(argv)


def _setup_logging(out: Path, verbose: bool) -> list[logging.Handler]:
    root = logging.getLogger()
    root.setLevel(logging.DEBUG)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logfile = logging.FileHandler(out / "run.log", encoding="utf-8")
    logfile.setFormatter(logging.Formatter(LOG_FORMAT))
    handlers = [console, logfile]
    for handler in handlers:
        root.addHandler(handler)
    return handlers


def _error(exc: BaseException) -> None:
    payload = {"error": type(exc).__name__, "message": " ".join(str(a) for a in exc.args)}
    if isinstance(exc, ConfigError):
        payload["keys"] = exc.keys
    sys.stderr.write(json.dumps(payload) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = parse_args(argv)
    try:
        config = RunConfig.load(args.config, args.overrides)
        if args.seed is not None:
            config = config.with_seed(args.seed)
    except MonoCanonException as exc:
        _error(exc)
        return EXIT_USAGE
    out = Path(args.out or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(out, args.verbose)
    try:
        _LOGGER.debug(">> main(command=%s, out=%s)", args.command, out)
        config.write(out)
        return COMMANDS[args.command](config, out)
    except (ConfigError, UsageError) as exc:
        _error(exc)
        return EXIT_USAGE
    except (MonoCanonException, ValueError) as exc:
        _LOGGER.error("%s failed: %s", args.command, exc)
        _error(exc)
        return EXIT_FAILED
    finally:
        for handler in handlers:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
