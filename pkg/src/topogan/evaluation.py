"""Physics-based scoring of generated geometries.

Generated grayscale images are resampled onto the FEA grid (area average),
turned into density fields (continuous by default, or thresholded binary),
and judged against the oracle: V_err compares achieved volume fraction to
the target, C_err compares compliance to the ground-truth optimizer's value.
Both errors are signed percentages; their magnitudes are what a results
table reports.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simp
from .autodiff import Tensor, no_grad
from .conditions import ConditionSpec, encode_conditions
from .imaging import (density_to_image, image_to_density_grid, invert_palette,
                      side_by_side, write_pgm, write_png)
from .networks import Generator

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("vf", "nu", "v_gan", "v_err_pct", "c_act", "c_gan", "c_err_pct")


def grayscale_to_xphys(image: np.ndarray, domain: simp.Domain2D,
                       mode: str = "continuous", threshold: float = 0.5,
                       signed_input: bool = False) -> np.ndarray:
    """Turn a grayscale image into an (nelx, nely) density field.

    signed_input=True declares generator-range values in [-1, 1] (mapped to
    [0, 1] here); otherwise values must already be in [0, 1]. Values outside
    the declared range signal an upstream bug and raise.
    """
    image = np.asarray(image, dtype=np.float64)
    tol = 1e-9
    if signed_input:
        if image.min() < -1 - tol or image.max() > 1 + tol:
            raise ValueError(f"generator-range image outside [-1, 1]: "
                             f"min={image.min()}, max={image.max()}")
        image = np.clip((image + 1.0) / 2.0, 0.0, 1.0)
    elif image.min() < -tol or image.max() > 1 + tol:
        raise ValueError(f"grayscale image outside [0, 1]: "
                         f"min={image.min()}, max={image.max()}")
    rho = image_to_density_grid(image, domain.nelx, domain.nely)
    rho = np.clip(rho, 0.0, 1.0)
    if mode == "continuous":
        return rho
    if mode == "binary":
        return np.where(rho >= threshold, 1.0, 0.0)
    raise ValueError(f"unknown density mode {mode!r}")


def v_err(xphys: np.ndarray, vstar: float) -> float:
    """Signed volume error percent: (V* - mean(xphys)) / V* * 100."""
    if not 0 < vstar <= 1:
        raise ValueError(f"target volume fraction must be in (0, 1], got {vstar}")
    return (vstar - float(xphys.mean())) / vstar * 100.0


def c_err_pct(c_act: float, c_gan: float) -> float:
    """Signed compliance error percent: (C_act - C_gan) / C_gan * 100."""
    return (c_act - c_gan) / c_gan * 100.0


def c_err(domain: simp.Domain2D, material: simp.MaterialParams,
          bcs: simp.BoundaryConditions, xphys: np.ndarray, c_act: float) -> float:
    """Compliance error of a candidate field against the oracle value."""
    if c_act <= 0:
        raise ValueError(f"ground-truth compliance must be positive, got {c_act}")
    return c_err_pct(c_act, simp.compliance_of(domain, material, bcs, xphys))


@dataclass
class EvalRecord:
    vf: float
    nu: float
    v_gan: float  # achieved volume fraction, mean(xphys)
    v_err_pct: float
    c_act: float
    c_gan: float
    c_err_pct: float
    nel: int = 0

    @property
    def v_gan_abs(self) -> float:
        """Absolute material volume: fraction times element count."""
        return self.v_gan * self.nel

    def as_row(self) -> list[float]:
        return [self.vf, self.nu, self.v_gan, self.v_err_pct,
                self.c_act, self.c_gan, self.c_err_pct]


@dataclass
class GroundTruth:
    xphys: np.ndarray
    c_act: float


class OracleCache:
    """Ground-truth designs by condition pair, computed on demand."""

    def __init__(self, domain: simp.Domain2D, rmin: float = 2.4,
                 max_iters: int = 400, load_magnitude: float = 1.0):
        self.domain = domain
        self.rmin = rmin
        self.max_iters = max_iters
        self.load_magnitude = load_magnitude
        self._cache: dict[tuple[float, float], GroundTruth] = {}

    def put(self, vf: float, nu: float, truth: GroundTruth) -> None:
        self._cache[(vf, nu)] = truth

    def get(self, vf: float, nu: float) -> GroundTruth:
        key = (vf, nu)
        if key not in self._cache:
            logger.info("oracle cache miss for vf=%.4g nu=%.4g; running optimizer", vf, nu)
            material = simp.MaterialParams(nu=nu)
            bcs = simp.cantilever_bcs(self.domain, self.load_magnitude)
            result = simp.optimize(self.domain, material, bcs, vstar=vf,
                                   rmin=self.rmin, max_iters=self.max_iters)
            self._cache[key] = GroundTruth(xphys=result.xphys,
                                           c_act=float(result.compliance_history[-1]))
        return self._cache[key]


def generate_design(generator: Generator, specs: list[ConditionSpec],
                    values: dict[str, float], *,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Run the generator on encoded conditions; returns a [0,1] image."""
    resolution = generator.config.resolution
    stack = encode_conditions([(s, values[s.name]) for s in specs],
                              resolution, resolution)
    dtype = next(iter(generator.params.values())).data.dtype.type
    x = Tensor((2.0 * stack[None] - 1.0).astype(dtype))
    with no_grad():
        out = generator.forward(x, training=False, rng=rng)
    return np.clip((out.data[0, 0].astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)


def evaluate(generator: Generator, conditions: list[dict[str, float]],
             specs: list[ConditionSpec], oracle: OracleCache, *,
             mode: str = "continuous", threshold: float = 0.5,
             out_dir=None, invert: bool = False,
             rng: np.random.Generator | None = None) -> list[EvalRecord]:
    """Score the generator on (vf, nu) pairs against the physics oracle.

    Writes side-by-side ground-truth/generated panels and a metrics CSV when
    out_dir is given. Returns one record per condition pair.
    """
    domain = oracle.domain
    material_cache: dict[float, simp.MaterialParams] = {}
    bcs = simp.cantilever_bcs(domain, oracle.load_magnitude)
    records: list[EvalRecord] = []
    panels_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        panels_dir = out_dir / "panels"
        panels_dir.mkdir(exist_ok=True)

    for index, values in enumerate(conditions):
        vf, nu = float(values["vf"]), float(values["nu"])
        truth = oracle.get(vf, nu)
        material = material_cache.setdefault(nu, simp.MaterialParams(nu=nu))

        image = generate_design(generator, specs, values, rng=rng)
        xphys = grayscale_to_xphys(image, domain, mode=mode, threshold=threshold)
        v_gan = float(xphys.mean())
        c_gan = simp.compliance_of(domain, material, bcs, xphys)
        record = EvalRecord(vf=vf, nu=nu, v_gan=v_gan,
                            v_err_pct=v_err(xphys, vf),
                            c_act=truth.c_act, c_gan=c_gan,
                            c_err_pct=c_err_pct(truth.c_act, c_gan),
                            nel=domain.nel)
        records.append(record)
        logger.info("eval vf=%.3g nu=%.3g: V_err=%+.4f%% (|%.4f|) C_err=%+.4f%% (|%.4f|)",
                    vf, nu, record.v_err_pct, abs(record.v_err_pct),
                    record.c_err_pct, abs(record.c_err_pct))

        if panels_dir is not None:
            gt_image = density_to_image(truth.xphys, generator.config.resolution)
            panel = side_by_side(gt_image, image)
            if invert:
                panel = invert_palette(panel)
            stem = f"{index:03d}_vf{vf:g}_nu{nu:g}"
            write_pgm(panels_dir / f"{stem}.pgm", panel)
            write_png(panels_dir / f"{stem}.png", panel)

    if out_dir is not None:
        write_metrics_csv(out_dir / "metrics.csv", records)
    return records


def write_metrics_csv(path, records: list[EvalRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for record in records:
            writer.writerow([repr(v) for v in record.as_row()])
