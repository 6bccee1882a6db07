"""Command-line surface: generate / train / infer / eval / inspect-checkpoint.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
All commands are deterministic for a fixed (config, seed); timestamps appear
only in log lines on stderr, never in emitted artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import simp
from .checkpoint import CheckpointError, describe_checkpoint, load_checkpoint
from .conditions import ConditionRangeError
from .config import ConfigError, ExperimentConfig, check_pairs_in_range, load_config
from .dataset import (MANIFEST_NAME, ManifestError, default_condition_grid,
                      generate_dataset, load_samples, validate_manifest)
from .evaluation import GroundTruth, OracleCache, evaluate, generate_design
from .imaging import image_to_density_grid, invert_palette, read_pgm, write_pgm, write_png
from .networks import Discriminator, Generator
from .training import (TrainState, TrainingAbort, restore_networks,
                       restore_train_state, train)

logger = logging.getLogger("topogan")

USAGE_ERRORS = (ConfigError, ManifestError, ConditionRangeError)


def _load_experiment(args) -> ExperimentConfig:
    config = load_config(args.config, seed=getattr(args, "seed", None),
                         resolution=getattr(args, "resolution", None))
    ad.set_default_dtype(config.dtype)
    return config


def _condition_pairs(config: ExperimentConfig) -> list[dict[str, float]]:
    pairs = config.dataset_pairs
    if pairs is None:
        pairs = default_condition_grid()
    check_pairs_in_range(pairs, config.conditions)
    return pairs


def _build_networks(config: ExperimentConfig) -> tuple[Generator, Discriminator]:
    rng = np.random.default_rng(config.seed)
    return Generator(config.generator, rng), Discriminator(config.discriminator, rng)


def _domain(config: ExperimentConfig) -> simp.Domain2D:
    return simp.Domain2D(config.domain_nelx, config.domain_nely)


def cmd_generate(args) -> int:
    config = _load_experiment(args)
    pairs = _condition_pairs(config)
    out_dir = Path(args.out)
    outcome = generate_dataset(_domain(config), pairs, out_dir, config.resolution,
                               rmin=config.simp_rmin, max_iters=config.simp_max_iters,
                               tol=config.simp_tol,
                               load_magnitude=config.load_magnitude,
                               image_bits=config.image_bits,
                               workers=config.generate_workers)
    logger.info("generated %d ground truths (%d skipped) under %s",
                len(outcome.records), len(outcome.skipped), out_dir)
    if not outcome.records:
        logger.error("all %d solves failed to converge", len(pairs))
        return 1
    return 0


def cmd_train(args) -> int:
    config = _load_experiment(args)
    manifest = Path(args.dataset) / MANIFEST_NAME if Path(args.dataset).is_dir() \
        else Path(args.dataset)
    samples = load_samples(manifest, config.conditions, config.resolution)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.gog"
    csv_path = out_dir / "curves.csv"

    generator, discriminator = _build_networks(config)
    fingerprint = config.fingerprint()
    state: TrainState | None = None
    if args.resume:
        data = load_checkpoint(checkpoint_path, expected_fingerprint=fingerprint)
        restore_networks(data, generator, discriminator)
        state = restore_train_state(data, config.train)
        logger.info("resuming from %s at epoch %d", checkpoint_path, state.epoch)

    result = train(samples, generator, discriminator, config.train, state=state,
                   fingerprint=fingerprint, checkpoint_path=checkpoint_path,
                   csv_path=csv_path)
    logger.info("training done: %d generator updates; checkpoint at %s, curves at %s",
                result.state.g_updates, checkpoint_path, csv_path)
    return 0


def _load_generator(config: ExperimentConfig, checkpoint) -> Generator:
    generator, discriminator = _build_networks(config)
    data = load_checkpoint(checkpoint, expected_fingerprint=config.fingerprint())
    restore_networks(data, generator, discriminator)
    return generator


def cmd_infer(args) -> int:
    config = _load_experiment(args)
    values = {"vf": args.vf, "nu": args.nu}
    check_pairs_in_range([values], config.conditions)
    generator = _load_generator(config, args.checkpoint)
    rng = np.random.default_rng(config.seed) if config.generator.inference_dropout else None

    start = time.perf_counter()
    image = generate_design(generator, config.conditions, values, rng=rng)
    elapsed = time.perf_counter() - start
    logger.info("single inference at R=%d: %.3f s wall-clock",
                config.resolution, elapsed)

    out = Path(args.out) if args.out else Path(f"design_vf{args.vf:g}_nu{args.nu:g}.pgm")
    if out.is_dir():
        out = out / f"design_vf{args.vf:g}_nu{args.nu:g}.pgm"
    if args.invert_palette:
        image = invert_palette(image)
    write_pgm(out, image, bits=config.image_bits)
    write_png(out.with_suffix(".png"), image)
    logger.info("wrote %s and %s", out, out.with_suffix(".png"))
    return 0


def cmd_eval(args) -> int:
    config = _load_experiment(args)
    domain = _domain(config)
    oracle = OracleCache(domain, rmin=config.simp_rmin,
                         max_iters=config.simp_max_iters,
                         load_magnitude=config.load_magnitude)

    if args.manifest:
        manifest = Path(args.manifest)
        if manifest.is_dir():
            manifest = manifest / MANIFEST_NAME
        records = validate_manifest(manifest, resolution=config.resolution)
        if args.ids:
            wanted = set(args.ids.split(","))
            known = {r.sample_id for r in records}
            unknown = wanted - known
            if unknown:
                logger.warning("unknown sample ids ignored: %s", sorted(unknown))
            records = [r for r in records if r.sample_id in wanted]
        conditions = []
        for record in records:
            image, _ = read_pgm(manifest.parent / record.image)
            xphys = np.clip(image_to_density_grid(image, domain.nelx, domain.nely),
                            0.0, 1.0)
            oracle.put(record.conditions["vf"], record.conditions["nu"],
                       GroundTruth(xphys=xphys, c_act=record.c_act))
            conditions.append(dict(record.conditions))
    else:
        conditions = _condition_pairs(config)

    generator = _load_generator(config, args.checkpoint)
    mode = "binary" if args.binary_threshold is not None else "continuous"
    threshold = args.binary_threshold if args.binary_threshold is not None else 0.5
    rng = np.random.default_rng(config.seed) if config.generator.inference_dropout else None
    records = evaluate(generator, conditions, config.conditions, oracle,
                       mode=mode, threshold=threshold, out_dir=args.out,
                       invert=args.invert_palette, rng=rng)
    if records:
        mean_v = float(np.mean([abs(r.v_err_pct) for r in records]))
        mean_c = float(np.mean([abs(r.c_err_pct) for r in records]))
        logger.info("evaluated %d conditions: mean |V_err|=%.4f%%, mean |C_err|=%.4f%%",
                    len(records), mean_v, mean_c)
    else:
        logger.warning("no conditions evaluated; empty report written")
    return 0


def cmd_inspect(args) -> int:
    summary = describe_checkpoint(args.checkpoint)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topogan",
        description="Cantilever topology-optimization ground truths, conditional "
                    "GAN training, and physics-scored evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--resolution", type=int, default=None,
                       help="override image resolution R")

    p = sub.add_parser("generate", help="run the SIMP optimizer over condition "
                                        "pairs and write the dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the conditional GAN on a dataset")
    common(p)
    p.add_argument("--dataset", required=True,
                   help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="run directory for checkpoint and curves")
    p.add_argument("--resume", action="store_true",
                   help="continue from the run directory's checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate one design from (vf, nu)")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vf", type=float, required=True, help="target volume fraction")
    p.add_argument("--nu", type=float, required=True, help="Poisson's ratio")
    p.add_argument("--out", default=None, help="output image path or directory")
    p.add_argument("--invert-palette", action="store_true",
                   help="render dark material on light background")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score generated designs against the physics oracle")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None,
                   help="dataset directory or manifest with ground truths; "
                        "omitted = conditions from config, oracle on demand")
    p.add_argument("--ids", default=None, help="comma-separated sample id filter")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--binary-threshold", type=float, default=None,
                   help="threshold densities to {0,1} at this level "
                        "(default: continuous densities)")
    p.add_argument("--invert-palette", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except (CheckpointError, TrainingAbort, simp.SingularSystemError,
            simp.OcBisectionError) as exc:
        logger.error("%s", exc)
        return 1
    except OSError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
