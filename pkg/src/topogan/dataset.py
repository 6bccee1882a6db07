"""Dataset generation and the manifest index.

The manifest is line-delimited JSON (one record per sample: id, condition
values, target image path, oracle compliance, oracle volume) plus a CSV
mirror for spreadsheets. Ground truths come from the SIMP optimizer, are
rendered to grayscale PGM at the training resolution, and are re-read
through the same image path the trainer uses, so quantization is identical
everywhere.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simp
from .conditions import ConditionSpec, encode_conditions
from .imaging import density_to_image, read_pgm, write_pgm
from .training import TrainSample

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


class ManifestError(ValueError):
    """The manifest file is missing, malformed, or inconsistent."""


@dataclass
class ManifestRecord:
    sample_id: str
    conditions: dict[str, float]
    image: str  # path relative to the manifest file
    c_act: float
    volume: float

    def to_json(self) -> str:
        return json.dumps({"id": self.sample_id, "conditions": self.conditions,
                           "image": self.image, "c_act": self.c_act,
                           "volume": self.volume}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        raw = json.loads(line)
        return cls(sample_id=raw["id"], conditions=dict(raw["conditions"]),
                   image=raw["image"], c_act=float(raw["c_act"]),
                   volume=float(raw["volume"]))


def write_manifest(path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    names = sorted({k for r in records for k in r.conditions})
    with open(path.with_suffix(".csv"), "w") as fh:
        fh.write(",".join(["id", *names, "image", "c_act", "volume"]) + "\n")
        for r in records:
            cells = [r.sample_id, *(repr(r.conditions[n]) for n in names),
                     r.image, repr(r.c_act), repr(r.volume)]
            fh.write(",".join(cells) + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return records


def validate_manifest(path, resolution: int | None = None,
                      require_positive_compliance: bool = True) -> list[ManifestRecord]:
    """Read and check a manifest: unique ids, resolvable images, sane oracle values."""
    path = Path(path)
    records = read_manifest(path)
    seen: set[str] = set()
    for record in records:
        if record.sample_id in seen:
            raise ManifestError(f"duplicate sample id '{record.sample_id}'")
        seen.add(record.sample_id)
        image_path = path.parent / record.image
        if not image_path.exists():
            raise ManifestError(f"sample '{record.sample_id}': image not found: {image_path}")
        if require_positive_compliance and not record.c_act > 0:
            raise ManifestError(f"sample '{record.sample_id}': oracle compliance "
                                f"{record.c_act} is not positive")
        if resolution is not None:
            image, _ = read_pgm(image_path)
            if image.shape != (resolution, resolution):
                raise ManifestError(
                    f"sample '{record.sample_id}': image is {image.shape[1]}x"
                    f"{image.shape[0]}, expected {resolution}x{resolution}")
    return records


@dataclass
class GenerationOutcome:
    records: list[ManifestRecord]
    skipped: list[tuple[dict[str, float], str]]


def generate_dataset(domain: simp.Domain2D, pairs: list[dict[str, float]],
                     out_dir, resolution: int, *, rmin: float = 2.4,
                     max_iters: int = 400, tol: float = 0.01,
                     load_magnitude: float = 1.0, image_bits: int = 8,
                     workers: int = 1) -> GenerationOutcome:
    """Optimize each (vf, nu) pair and store the rendered ground truths.

    Non-converged solves are skipped with a logged reason. The solves fan
    out over a thread pool; the manifest is assembled in input order by the
    single caller thread, so output is deterministic.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    def solve(pair: dict[str, float]):
        material = simp.MaterialParams(nu=pair["nu"])
        bcs = simp.cantilever_bcs(domain, load_magnitude)
        return simp.optimize(domain, material, bcs, vstar=pair["vf"],
                             rmin=rmin, max_iters=max_iters, tol=tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, pairs))
    else:
        results = [solve(pair) for pair in pairs]

    records: list[ManifestRecord] = []
    skipped: list[tuple[dict[str, float], str]] = []
    for index, (pair, result) in enumerate(zip(pairs, results)):
        if not result.converged:
            reason = (f"optimizer did not converge within {max_iters} updates "
                      f"(vf={pair['vf']}, nu={pair['nu']})")
            logger.warning("skipping sample %d: %s", index, reason)
            skipped.append((pair, reason))
            continue
        sample_id = f"sample_{index:04d}"
        name = f"{sample_id}_vf{pair['vf']:g}_nu{pair['nu']:g}.pgm"
        write_pgm(images_dir / name, density_to_image(result.xphys, resolution),
                  bits=image_bits)
        records.append(ManifestRecord(
            sample_id=sample_id,
            conditions={"vf": float(pair["vf"]), "nu": float(pair["nu"])},
            image=f"images/{name}",
            c_act=float(result.compliance_history[-1]),
            volume=float(result.xphys.mean()),
        ))
    write_manifest(out_dir / MANIFEST_NAME, records)
    return GenerationOutcome(records=records, skipped=skipped)


def default_condition_grid() -> list[dict[str, float]]:
    """Documented reconstruction of a training grid: vf 0.25..0.55 step 0.05
    crossed with nu 0.2..0.5 step 0.05 (the source dataset is unpublished)."""
    pairs = []
    for vf in np.arange(0.25, 0.551, 0.05):
        for nu in np.arange(0.2, 0.501, 0.05):
            pairs.append({"vf": round(float(vf), 4), "nu": round(float(nu), 4)})
    return pairs


def load_samples(manifest_path, specs: list[ConditionSpec],
                 resolution: int) -> list[TrainSample]:
    """Materialize training samples: encoded condition stacks + target images."""
    manifest_path = Path(manifest_path)
    records = validate_manifest(manifest_path, resolution=resolution)
    samples = []
    for record in records:
        image, _ = read_pgm(manifest_path.parent / record.image)
        stack = encode_conditions(
            [(spec, record.conditions[spec.name]) for spec in specs],
            resolution, resolution)
        samples.append(TrainSample(sample_id=record.sample_id,
                                   condition_values=dict(record.conditions),
                                   condition_image=stack,
                                   target_image=image[None]))
    return samples
