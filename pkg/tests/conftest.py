"""Shared helpers: finite-difference oracles and tiny network configs."""

from __future__ import annotations

import numpy as np
import pytest

from topogan.networks import DiscriminatorConfig, GeneratorConfig


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def directional_numeric_grad(f, x: np.ndarray, direction: np.ndarray,
                             h: float = 1e-5) -> float:
    """Central finite difference of f along a fixed direction."""
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    scale = max(float(np.abs(exact).max()), 1e-12)
    return float(np.abs(approx - exact).max()) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def tiny_generator_config(resolution=16, in_channels=2, **overrides) -> GeneratorConfig:
    defaults = dict(base_filters=8, filter_cap=16, dense_widths=(24,))
    defaults.update(overrides)
    return GeneratorConfig(resolution=resolution, in_channels=in_channels, **defaults)


def tiny_discriminator_config(in_channels=3, **overrides) -> DiscriminatorConfig:
    defaults = dict(base_filters=8, n_stride2=2)
    defaults.update(overrides)
    return DiscriminatorConfig(in_channels=in_channels, **defaults)
