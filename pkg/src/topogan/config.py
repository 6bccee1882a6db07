"""Experiment configuration: one declarative JSON file with explicit keys.

Every tunable lives here; commands get a config path plus a few overriding
flags (seed, resolution, output directory). The fingerprint hashes the
architecture- and optimizer-defining subset of the config, so checkpoints
refuse to load under an incompatible setup while remaining extendable to
more epochs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditions import ConditionSpec
from .networks import DiscriminatorConfig, GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """The experiment config is missing, malformed, or inconsistent."""


_TASKS = ("cantilever", "paired-images")
_PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    resolution: int
    precision: str
    domain_nelx: int
    domain_nely: int
    conditions: list[ConditionSpec]
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    train: TrainConfig
    simp_rmin: float
    simp_max_iters: int
    simp_tol: float
    load_magnitude: float
    image_bits: int
    dataset_pairs: list[dict[str, float]] | None
    generate_workers: int
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def fingerprint(self) -> str:
        """Hash of the run-defining config subset (architecture, conditions,
        optimizer); epochs and schedule stay out so runs can be extended."""
        subset = {
            "task": self.task,
            "seed": self.seed,
            "resolution": self.resolution,
            "precision": self.precision,
            "domain": [self.domain_nelx, self.domain_nely],
            "conditions": [[s.name, s.min, s.max] for s in self.conditions],
            "generator": {
                "base_filters": self.generator.base_filters,
                "filter_cap": self.generator.filter_cap,
                "dense_widths": list(self.generator.dense_widths),
                "dropout_rate": self.generator.dropout_rate,
                "dropout_blocks": self.generator.dropout_blocks,
            },
            "discriminator": {
                "base_filters": self.discriminator.base_filters,
                "n_stride2": self.discriminator.n_stride2,
            },
            "train": {
                "k": self.train.k,
                "lam": self.train.lam,
                "lr": self.train.lr,
                "beta1": self.train.beta1,
                "beta2": self.train.beta2,
                "adversarial_mode": self.train.adversarial_mode,
                "flip_augment": self.train.flip_augment,
            },
        }
        canonical = json.dumps(subset, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _require(raw: dict, key: str, where: str = "config"):
    if key not in raw:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return raw[key]


def load_config(path, *, seed: int | None = None,
                resolution: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, seed=seed, resolution=resolution)


def parse_config(raw: dict, *, seed: int | None = None,
                 resolution: int | None = None) -> ExperimentConfig:
    task = _require(raw, "task")
    if task not in _TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {_TASKS}")

    if seed is None:
        seed = int(raw.get("seed", 0))
    if resolution is None:
        resolution = int(_require(raw, "resolution"))
    precision = raw.get("precision", "float64")
    if precision not in _PRECISIONS:
        raise ConfigError(f"precision must be one of {sorted(_PRECISIONS)}, "
                          f"got {precision!r}")

    domain_raw = raw.get("domain")
    if task == "cantilever":
        if not domain_raw:
            raise ConfigError("cantilever task requires a 'domain' section "
                              "with nelx and nely")
        nelx = int(_require(domain_raw, "nelx", "domain"))
        nely = int(_require(domain_raw, "nely", "domain"))
    else:
        domain_raw = domain_raw or {}
        nelx = int(domain_raw.get("nelx", resolution))
        nely = int(domain_raw.get("nely", resolution))

    conditions = []
    for entry in _require(raw, "conditions"):
        try:
            conditions.append(ConditionSpec(name=entry["name"],
                                            min=float(entry["min"]),
                                            max=float(entry["max"])))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad condition entry {entry!r}: {exc}") from exc
    if not conditions:
        raise ConfigError("at least one condition is required")
    if task == "cantilever":
        names = [s.name for s in conditions]
        if names != ["vf", "nu"]:
            raise ConfigError("cantilever task requires conditions named "
                              f"['vf', 'nu'] in that order, got {names}")

    gen_raw = raw.get("generator", {})
    try:
        generator = GeneratorConfig(
            resolution=resolution,
            in_channels=len(conditions),
            base_filters=int(gen_raw.get("base_filters", 64)),
            filter_cap=int(gen_raw.get("filter_cap", 512)),
            dense_widths=tuple(gen_raw.get("dense_widths", [512])),
            dropout_rate=float(gen_raw.get("dropout_rate", 0.5)),
            dropout_blocks=int(gen_raw.get("dropout_blocks", 3)),
            inference_dropout=bool(gen_raw.get("inference_dropout", False)),
        )
        disc_raw = raw.get("discriminator", {})
        discriminator = DiscriminatorConfig(
            in_channels=len(conditions) + 1,
            base_filters=int(disc_raw.get("base_filters", 64)),
            n_stride2=int(disc_raw.get("n_stride2", 3)),
        )
        train_raw = raw.get("train", {})
        schedule = train_raw.get("batch_schedule")
        train = TrainConfig(
            epochs=int(train_raw.get("epochs", 200)),
            k=int(train_raw.get("k", 1)),
            lam=float(train_raw.get("lambda", 100.0)),
            lr=float(train_raw.get("lr", 2e-4)),
            beta1=float(train_raw.get("beta1", 0.5)),
            beta2=float(train_raw.get("beta2", 0.999)),
            batch_schedule=None if schedule is None else
            tuple((int(e), int(n)) for e, n in schedule),
            seed=seed,
            checkpoint_interval=int(train_raw.get("checkpoint_interval", 0)),
            adversarial_mode=train_raw.get("adversarial_mode", "non_saturating"),
            flip_augment=bool(train_raw.get("flip_augment", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    simp_raw = raw.get("simp", {})
    dataset_raw = raw.get("dataset", {})
    pairs = dataset_raw.get("pairs")
    if pairs is not None:
        pairs = [{"vf": float(p[0]), "nu": float(p[1])} if isinstance(p, (list, tuple))
                 else {"vf": float(p["vf"]), "nu": float(p["nu"])} for p in pairs]
    image_bits = int(dataset_raw.get("image_bits", 8))
    if image_bits not in (8, 16):
        raise ConfigError(f"dataset.image_bits must be 8 or 16, got {image_bits}")

    return ExperimentConfig(
        task=task,
        seed=seed,
        resolution=resolution,
        precision=precision,
        domain_nelx=nelx,
        domain_nely=nely,
        conditions=conditions,
        generator=generator,
        discriminator=discriminator,
        train=train,
        simp_rmin=float(simp_raw.get("rmin", 2.4)),
        simp_max_iters=int(simp_raw.get("max_iters", 400)),
        simp_tol=float(simp_raw.get("tol", 0.01)),
        load_magnitude=float(simp_raw.get("load_magnitude", 1.0)),
        image_bits=image_bits,
        dataset_pairs=pairs,
        generate_workers=int(dataset_raw.get("workers", 1)),
        raw=raw,
    )


def check_pairs_in_range(pairs: list[dict[str, float]],
                         conditions: list[ConditionSpec]) -> None:
    """Validate every condition value against its spec before any solve."""
    by_name = {s.name: s for s in conditions}
    for pair in pairs:
        for name, value in pair.items():
            spec = by_name.get(name)
            if spec is None:
                raise ConfigError(f"unknown condition '{name}' in pair {pair}")
            spec.normalize(value)  # raises ConditionRangeError when out of range
