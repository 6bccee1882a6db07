"""Fill-fraction encoding of scalar design conditions.

A scalar v in [min, max] becomes a binary image whose first
round((v - min)/(max - min) * H*W) pixels in raster order (row-major from
the top-left) are black (0) and the rest white (1). The black-pixel count is
the only information carrier, so any convolution can read the magnitude and
the encoding is exactly invertible up to quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConditionRangeError(ValueError):
    """A condition value lies outside its declared [min, max] range."""


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    min: float
    max: float

    def __post_init__(self):
        if not self.min < self.max:
            raise ValueError(f"condition '{self.name}': need min < max, "
                             f"got [{self.min}, {self.max}]")

    def normalize(self, value: float) -> float:
        if not self.min <= value <= self.max:
            raise ConditionRangeError(
                f"condition '{self.name}': value {value} outside range "
                f"[{self.min}, {self.max}]")
        return (value - self.min) / (self.max - self.min)


def encode_scalar(value: float, spec: ConditionSpec, height: int, width: int) -> np.ndarray:
    """Encode one scalar as an (height, width) array of {0., 1.} pixels."""
    u = spec.normalize(value)
    n_black = math.floor(u * height * width + 0.5)  # round half up
    flat = np.ones(height * width)
    flat[:n_black] = 0.0
    return flat.reshape(height, width)


def decode_image(image: np.ndarray, spec: ConditionSpec) -> float:
    """Invert encode_scalar from the black-pixel count."""
    n_black = int(np.count_nonzero(image == 0.0))
    return spec.min + n_black / image.size * (spec.max - spec.min)


def encode_conditions(values: list[tuple[ConditionSpec, float]],
                      height: int, width: int) -> np.ndarray:
    """Stack one fill-fraction channel per condition: [C, height, width]."""
    if not values:
        raise ValueError("encode_conditions needs at least one condition")
    return np.stack([encode_scalar(v, spec, height, width) for spec, v in values])
