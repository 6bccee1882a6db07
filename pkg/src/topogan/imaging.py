"""Grayscale image I/O and resampling for density fields.

Native storage is binary PGM (P5), 8-bit by default with a 16-bit option;
PNG export exists for documentation. Values are densities in [0, 1] with
1.0 (solid) rendered white. Density fields are (nelx, nely) arrays while
images are (rows, cols) = (y, x), so rendering transposes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def resample_area(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Exact area-weighted average resampling of a 2-D array.

    Each output cell takes the mean over the input region it covers, with
    fractional overlaps weighted by overlap length per axis. Conservative:
    the global mean is preserved for any size pair.
    """
    def axis_weights(n_in: int, n_out: int) -> np.ndarray:
        w = np.zeros((n_out, n_in))
        scale = n_in / n_out
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
            for j in range(j0, min(j1, n_in)):
                w[i, j] = min(hi, j + 1) - max(lo, j)
        return w / scale

    wy = axis_weights(arr.shape[0], out_shape[0])
    wx = axis_weights(arr.shape[1], out_shape[1])
    return wy @ arr @ wx.T


def density_to_image(rho: np.ndarray, resolution: int) -> np.ndarray:
    """Render an (nelx, nely) density field as a resolution x resolution image."""
    return resample_area(rho.T, (resolution, resolution))


def image_to_density_grid(image: np.ndarray, nelx: int, nely: int) -> np.ndarray:
    """Resample an image back onto the (nelx, nely) element grid."""
    return resample_area(image, (nely, nelx)).T


def write_pgm(path, image01: np.ndarray, bits: int = 8) -> None:
    """Write a [0,1] grayscale array as binary PGM (P5)."""
    if bits not in (8, 16):
        raise ValueError(f"PGM bit depth must be 8 or 16, got {bits}")
    if image01.ndim != 2:
        raise ValueError(f"expected a 2-D image, got {image01.ndim}-D")
    lo, hi = float(image01.min()), float(image01.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"image values outside [0, 1]: min={lo}, max={hi}")
    maxval = 255 if bits == 8 else 65535
    quantized = np.floor(image01 * maxval + 0.5).astype(np.uint32)
    header = f"P5\n{image01.shape[1]} {image01.shape[0]}\n{maxval}\n".encode("ascii")
    payload = quantized.astype(">u2" if bits == 16 else np.uint8).tobytes()
    Path(path).write_bytes(header + payload)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM into a [0,1] float array; returns (image, bits)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval -- whitespace/comment separated
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval not in (255, 65535):
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    image = data.reshape(height, width).astype(np.float64) / maxval
    return image, 8 if maxval == 255 else 16


def write_png(path, image01: np.ndarray) -> None:
    """8-bit grayscale PNG export for documentation."""
    quantized = np.floor(np.clip(image01, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path)


def side_by_side(left: np.ndarray, right: np.ndarray, gap: int = 4,
                 gap_value: float = 0.5) -> np.ndarray:
    """Compose two equally tall images with a neutral divider between them."""
    if left.shape[0] != right.shape[0]:
        raise ValueError(f"panel heights differ: {left.shape[0]} vs {right.shape[0]}")
    divider = np.full((left.shape[0], gap), gap_value)
    return np.hstack([left, divider, right])


def invert_palette(image01: np.ndarray) -> np.ndarray:
    """Flip to dark-material-on-light rendering; stored semantics unchanged."""
    return 1.0 - image01
