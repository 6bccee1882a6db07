"""Conditional image-to-image networks and their adversarial losses.

The generator is a U-Net: stride-2 4x4 conv encoder blocks down to a 1x1
bottleneck, a flattened adaptive dense stack, then stride-2 transposed-conv
decoder blocks, each concatenating the mirrored encoder activation before
upsampling. The discriminator is a patch classifier: stacked stride-2 conv
blocks plus one stride-1 block and a final 1-channel conv with sigmoid, so
it emits a grid of per-patch real/fake probabilities rather than one global
score. Randomness enters the generator through dropout in the first decoder
blocks, active during training and optionally at inference.

Convention: geometry images live in [-1, 1] (tanh output); callers map to
[0, 1] grayscale at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int
    in_channels: int
    base_filters: int = 64
    filter_cap: int = 512
    dense_widths: tuple[int, ...] = (512,)
    dropout_rate: float = 0.5
    dropout_blocks: int = 3
    inference_dropout: bool = False
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.resolution < 16 or not _is_power_of_two(self.resolution):
            raise ValueError(f"resolution must be a power of 2 >= 16, "
                             f"got {self.resolution}")
        if self.in_channels < 1:
            raise ValueError("generator needs at least one condition channel")
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))

    @property
    def depth(self) -> int:
        return int(np.log2(self.resolution))

    def filters(self, i: int) -> int:
        return min(self.base_filters * 2 ** i, self.filter_cap)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int  # condition channels + candidate channels
    base_filters: int = 64
    n_stride2: int = 3
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.n_stride2 < 1:
            raise ValueError("discriminator needs at least one stride-2 block")

    def filters(self, i: int) -> int:
        return min(self.base_filters * 2 ** i, 8 * self.base_filters)


def _gaussian(rng: np.random.Generator, shape, sigma=0.02) -> np.ndarray:
    return rng.normal(0.0, sigma, size=shape)


class _Network:
    """Named parameter tensors plus non-trainable buffers (BN running stats)."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _add_param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _add_bn(self, prefix: str, channels: int) -> None:
        self._add_param(f"{prefix}.gamma", np.ones(channels))
        self._add_param(f"{prefix}.beta", np.zeros(channels))
        dtype = ad.default_dtype()
        self.buffers[f"{prefix}.mean"] = np.zeros(channels, dtype=dtype)
        self.buffers[f"{prefix}.var"] = np.ones(channels, dtype=dtype)

    def _bn(self, prefix: str, x: Tensor, training: bool) -> Tensor:
        return ad.batchnorm2d(x, self.params[f"{prefix}.gamma"],
                              self.params[f"{prefix}.beta"],
                              self.buffers[f"{prefix}.mean"],
                              self.buffers[f"{prefix}.var"],
                              training=training, batch1_mode="instance")

    def _conv_block_in(self, x: Tensor, name: str, stride: int) -> Tensor:
        w = self.params[f"{name}.w"]
        b = self.params[f"{name}.b"]
        out = ad.conv2d(x, w, stride=stride, padding=1)
        return out + ad.reshape(b, (1, b.size, 1, 1))

    def set_parameters(self, new_params: dict[str, Tensor]) -> None:
        if set(new_params) != set(self.params):
            missing = set(self.params) ^ set(new_params)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        self.params = dict(new_params)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


class Generator(_Network):
    """U-Net with an adaptive dense bottleneck; maps condition stacks
    [N, C, R, R] to geometry images [N, 1, R, R] in [-1, 1]."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        d = config.depth
        # encoder: batch norm everywhere except the first block and the
        # innermost (1x1 spatial) block, where batch statistics degenerate
        for i in range(d):
            cin = config.in_channels if i == 0 else config.filters(i - 1)
            cout = config.filters(i)
            self._add_param(f"enc{i}.w", _gaussian(rng, (cout, cin, 4, 4)))
            self._add_param(f"enc{i}.b", np.zeros(cout))
            if 1 <= i <= d - 2:
                self._add_bn(f"enc{i}.bn", cout)
        flat = config.filters(d - 1)
        sizes = (flat, *config.dense_widths, flat)
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._add_param(f"dense{k}.w", _gaussian(rng, (a, b)))
            self._add_param(f"dense{k}.b", np.zeros(b))
        self.n_dense = len(sizes) - 1
        for j in range(d):
            cin = 2 * config.filters(d - 1 - j)
            cout = 1 if j == d - 1 else config.filters(d - 2 - j)
            self._add_param(f"dec{j}.w", _gaussian(rng, (cin, cout, 4, 4)))
            self._add_param(f"dec{j}.b", np.zeros(cout))
            if j < d - 1:
                self._add_bn(f"dec{j}.bn", cout)

    def forward(self, x: Tensor, *, training: bool,
                rng: np.random.Generator | None = None,
                skip_gates=None, return_activations: bool = False):
        cfg = self.config
        n, c, h, w = x.data.shape
        if h != w or not _is_power_of_two(h):
            raise ad.ShapeError(f"generator input must be square with power-of-2 "
                                f"extent, got {h}x{w}")
        if h != cfg.resolution:
            raise ad.ShapeError(f"generator input extent {h} does not match "
                                f"configured resolution {cfg.resolution}")
        if c != cfg.in_channels:
            raise ad.ShapeError(f"generator input channel axis is {c}, "
                                f"config expects {cfg.in_channels}")
        d = cfg.depth
        dropout_active = (training or cfg.inference_dropout) and cfg.dropout_rate > 0
        activations: dict[str, Tensor] = {}

        enc: list[Tensor] = []
        out = x
        for i in range(d):
            out = self._conv_block_in(out, f"enc{i}", stride=2)
            if 1 <= i <= d - 2:
                out = self._bn(f"enc{i}.bn", out, training)
            out = ad.leaky_relu(out, cfg.negative_slope)
            enc.append(out)
            activations[f"enc{i}"] = out

        flat = cfg.filters(d - 1)
        out = ad.reshape(enc[-1], (n, flat))
        for k in range(self.n_dense):
            out = ad.dense(out, self.params[f"dense{k}.w"], self.params[f"dense{k}.b"])
            out = ad.leaky_relu(out, cfg.negative_slope)
        out = ad.reshape(out, (n, flat, 1, 1))
        activations["bottleneck"] = out

        for j in range(d):
            skip = enc[d - 1 - j]
            if skip_gates is not None:
                skip = skip * float(skip_gates[j])
            out = ad.concat([out, skip], axis=1)
            wt = self.params[f"dec{j}.w"]
            out = ad.conv_transpose2d(out, wt, stride=2, padding=1)
            bias = self.params[f"dec{j}.b"]
            out = out + ad.reshape(bias, (1, bias.size, 1, 1))
            if j < d - 1:
                out = self._bn(f"dec{j}.bn", out, training)
                if j < cfg.dropout_blocks and dropout_active:
                    out = ad.dropout(out, cfg.dropout_rate, True, rng)
                out = ad.relu(out)
            else:
                out = ad.tanh(out)
            activations[f"dec{j}"] = out

        if return_activations:
            return out, activations
        return out


class Discriminator(_Network):
    """Patch classifier over channel-concatenated (condition, candidate)
    pairs; emits an [N, 1, h, w] map of probabilities in (0, 1)."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        s = config.n_stride2
        for i in range(s):
            cin = config.in_channels if i == 0 else config.filters(i - 1)
            cout = config.filters(i)
            self._add_param(f"block{i}.w", _gaussian(rng, (cout, cin, 4, 4)))
            self._add_param(f"block{i}.b", np.zeros(cout))
            if i >= 1:
                self._add_bn(f"block{i}.bn", cout)
        cpen = config.filters(s)
        self._add_param(f"block{s}.w", _gaussian(rng, (cpen, config.filters(s - 1), 4, 4)))
        self._add_param(f"block{s}.b", np.zeros(cpen))
        self._add_bn(f"block{s}.bn", cpen)
        self._add_param("out.w", _gaussian(rng, (1, cpen, 4, 4)))
        self._add_param("out.b", np.zeros(1))

    def forward(self, condition: Tensor, candidate: Tensor, *, training: bool) -> Tensor:
        if condition.data.shape[2:] != candidate.data.shape[2:]:
            raise ad.ShapeError(
                f"condition spatial size {condition.data.shape[2:]} does not match "
                f"candidate spatial size {candidate.data.shape[2:]}")
        if condition.data.shape[0] != candidate.data.shape[0]:
            raise ad.ShapeError(
                f"condition batch axis is {condition.data.shape[0]}, candidate "
                f"batch axis is {candidate.data.shape[0]}")
        cfg = self.config
        out = ad.concat([condition, candidate], axis=1)
        if out.data.shape[1] != cfg.in_channels:
            raise ad.ShapeError(f"concatenated channel axis is {out.data.shape[1]}, "
                                f"config expects {cfg.in_channels}")
        s = cfg.n_stride2
        for i in range(s):
            out = self._conv_block_in(out, f"block{i}", stride=2)
            if i >= 1:
                out = self._bn(f"block{i}.bn", out, training)
            out = ad.leaky_relu(out, cfg.negative_slope)
        out = self._conv_block_in(out, f"block{s}", stride=1)
        out = self._bn(f"block{s}.bn", out, training)
        out = ad.leaky_relu(out, cfg.negative_slope)
        out = self._conv_block_in(out, "out", stride=1)
        return ad.sigmoid(out)


PROB_EPS = 1e-7


def discriminator_loss(d_real: Tensor, d_fake: Tensor, eps: float = PROB_EPS) -> Tensor:
    """BCE form of the adversarial objective, minimized by the discriminator:
    -mean(log D(x,y)) - mean(log(1 - D(x,G(x,z))))."""
    dr = ad.clamp(d_real, eps, 1.0 - eps)
    df = ad.clamp(d_fake, eps, 1.0 - eps)
    return -ad.mean(ad.log(dr)) - ad.mean(ad.log(1.0 - df))


def generator_loss(d_fake: Tensor, generated: Tensor, target: Tensor,
                   lam: float, mode: str = "non_saturating",
                   eps: float = PROB_EPS) -> tuple[Tensor, Tensor, Tensor]:
    """Generator objective: adversarial term + lam * mean absolute error.

    mode 'non_saturating' uses -mean(log D(fake)) for gradient health;
    mode 'literal' descends mean(log(1 - D(fake))) as written in the
    original minimax update rule.
    """
    if lam < 0:
        raise ValueError(f"L1 weight must be >= 0, got {lam}")
    if generated.data.shape != target.data.shape:
        raise ad.ShapeError(f"generated shape {generated.data.shape} does not "
                            f"match target shape {target.data.shape}")
    df = ad.clamp(d_fake, eps, 1.0 - eps)
    if mode == "non_saturating":
        adversarial = -ad.mean(ad.log(df))
    elif mode == "literal":
        adversarial = ad.mean(ad.log(1.0 - df))
    else:
        raise ValueError(f"unknown adversarial mode {mode!r}")
    l1 = ad.mean(ad.tensor_abs(target - generated))
    total = adversarial + l1 * lam
    return total, adversarial, l1
