"""Adversarial training loop with dynamic batch sizing.

Each step runs k discriminator updates on the current minibatch (fresh
generator outputs every time, detached from the generator's tape) followed
by one generator update minimizing adversarial + lambda * L1. The per-epoch
batch size comes from a (epoch_start, size) schedule, defaulting to doubling
through {1, 2, 4, 8} at the quarter points of the run. All randomness
(shuffling, dropout) flows through one RNG owned by the training state, so a
checkpoint restores to a bitwise-identical continuation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward, zero_grads
from .checkpoint import (CheckpointData, load_checkpoint, merge_prefixed,
                         save_checkpoint, split_prefixed)
from .networks import Discriminator, Generator, discriminator_loss, generator_loss

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "epoch", "batch_size", "d_loss", "g_adv", "g_l1")


class TrainingAbort(RuntimeError):
    """Training was stopped by a non-finite loss; the message names the step."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    k: int = 1
    lam: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_schedule: tuple[tuple[int, int], ...] | None = None
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 = final only
    adversarial_mode: str = "non_saturating"
    flip_augment: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 1:
            raise ValueError(f"discriminator steps k must be >= 1, got {self.k}")
        schedule = self.batch_schedule
        if schedule is None:
            schedule = default_batch_schedule(self.epochs)
        else:
            schedule = tuple((int(e), int(n)) for e, n in schedule)
            validate_schedule(schedule)
        object.__setattr__(self, "batch_schedule", schedule)


def default_batch_schedule(epochs: int) -> tuple[tuple[int, int], ...]:
    """Double the batch through {1,2,4,8} at the quarter points of the run."""
    marks = {}
    for quarter, size in enumerate((1, 2, 4, 8)):
        marks[epochs * quarter // 4] = size
    schedule = tuple(sorted(marks.items()))
    validate_schedule(schedule)
    return schedule


def validate_schedule(schedule: Sequence[tuple[int, int]]) -> None:
    if not schedule:
        raise ValueError("batch schedule is empty")
    starts = [e for e, _ in schedule]
    if starts[0] != 0:
        raise ValueError(f"batch schedule must start at epoch 0, got {starts[0]}")
    if any(b >= a for a, b in zip(starts[1:], starts[:-1])):
        raise ValueError(f"batch schedule epochs must be strictly increasing: {starts}")
    if any(n < 1 for _, n in schedule):
        raise ValueError("batch sizes must be positive")


def batch_size_at(schedule: Sequence[tuple[int, int]], epoch: int) -> int:
    """Batch size of the latest schedule entry with epoch_start <= epoch."""
    validate_schedule(schedule)
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    size = schedule[0][1]
    for start, n in schedule:
        if start > epoch:
            break
        size = n
    return size


@dataclass
class TrainSample:
    sample_id: str
    condition_values: dict[str, float]
    condition_image: np.ndarray  # [C, R, R], binary {0, 1}
    target_image: np.ndarray     # [1, R, R], grayscale in [0, 1]


@dataclass
class TrainState:
    epoch: int
    global_step: int
    d_updates: int
    g_updates: int
    adam_g: AdamState
    adam_d: AdamState
    rng: np.random.Generator
    ema: dict[str, float] = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        return cls(epoch=0, global_step=0, d_updates=0, g_updates=0,
                   adam_g=AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2),
                   adam_d=AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2),
                   rng=np.random.default_rng(config.seed))


_EMA_WEIGHT = 0.1


def _update_ema(ema: dict[str, float], metrics: dict[str, float]) -> None:
    for key, value in metrics.items():
        prev = ema.get(key)
        ema[key] = value if prev is None else (1 - _EMA_WEIGHT) * prev + _EMA_WEIGHT * value


def _to_net(arr: np.ndarray, dtype) -> Tensor:
    """Map [0,1] image data onto the network's [-1,1] scale."""
    return Tensor((2.0 * arr - 1.0).astype(dtype))


def assemble_batch(samples: Sequence[TrainSample], dtype,
                   flip: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    cond = np.stack([s.condition_image for s in samples])
    target = np.stack([s.target_image for s in samples])
    if flip is not None:
        target[flip] = target[flip][:, :, :, ::-1]
    return _to_net(cond, dtype), _to_net(target, dtype)


def _check_finite(loss: Tensor, what: str, step: int) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingAbort(f"non-finite loss ({value}) in {what} at global step {step}; "
                            "aborting training")
    return value


def train_step(generator: Generator, discriminator: Discriminator,
               state: TrainState, batch: Sequence[TrainSample],
               config: TrainConfig) -> dict[str, float]:
    """One Algorithm-style step: k discriminator updates, one generator update."""
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    dtype = next(iter(generator.params.values())).data.dtype.type
    flip = None
    if config.flip_augment:
        flip = state.rng.random(len(batch)) < 0.5
    cond, target = assemble_batch(batch, dtype, flip)

    d_loss_value = 0.0
    for _ in range(config.k):
        fake = generator.forward(cond, training=True, rng=state.rng).detach()
        d_real = discriminator.forward(cond, target, training=True)
        d_fake = discriminator.forward(cond, fake, training=True)
        d_loss = discriminator_loss(d_real, d_fake)
        d_loss_value = _check_finite(d_loss, "discriminator update", state.global_step)
        zero_grads(discriminator.params.values())
        backward(d_loss)
        grads = {name: p.grad for name, p in discriminator.params.items()}
        discriminator.set_parameters(adam_step(discriminator.params, grads, state.adam_d))
        state.d_updates += 1

    fake = generator.forward(cond, training=True, rng=state.rng)
    d_fake = discriminator.forward(cond, fake, training=True)
    total, adv, l1 = generator_loss(d_fake, fake, target, config.lam,
                                    mode=config.adversarial_mode)
    _check_finite(total, "generator update", state.global_step)
    zero_grads(generator.params.values())
    zero_grads(discriminator.params.values())  # discard spillover into D
    backward(total)
    grads = {name: p.grad for name, p in generator.params.items()}
    generator.set_parameters(adam_step(generator.params, grads, state.adam_g))
    state.g_updates += 1
    state.global_step += 1

    metrics = {"d_loss": d_loss_value, "g_adv": adv.item(), "g_l1": l1.item()}
    _update_ema(state.ema, metrics)
    return metrics


@dataclass
class TrainResult:
    curves: list[dict]
    state: TrainState


def train(dataset: Sequence[TrainSample], generator: Generator,
          discriminator: Discriminator, config: TrainConfig, *,
          state: TrainState | None = None, fingerprint: str = "",
          checkpoint_path=None, csv_path=None) -> TrainResult:
    """Run the epoch loop; optionally checkpoint and stream the loss CSV.

    Pass a restored state to continue a checkpointed run; the continuation
    is bitwise-identical to an uninterrupted one.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    shape = dataset[0].condition_image.shape
    for s in dataset:
        if s.condition_image.shape != shape:
            raise ValueError(f"sample '{s.sample_id}' condition shape "
                             f"{s.condition_image.shape} differs from {shape}")
        if s.target_image.shape[1:] != shape[1:]:
            raise ValueError(f"sample '{s.sample_id}' target shape "
                             f"{s.target_image.shape} does not match conditions {shape}")

    if state is None:
        state = TrainState.fresh(config)
    curves: list[dict] = []

    csv_file = writer = None
    if csv_path is not None:
        fresh_csv = state.epoch == 0 or not Path(csv_path).exists()
        csv_file = open(csv_path, "w" if fresh_csv else "a", newline="")
        writer = csv.writer(csv_file)
        if fresh_csv:
            writer.writerow(CURVE_COLUMNS)

    try:
        for epoch in range(state.epoch, config.epochs):
            size = batch_size_at(config.batch_schedule, epoch)
            order = state.rng.permutation(len(dataset))
            for lo in range(0, len(dataset), size):
                batch = [dataset[i] for i in order[lo:lo + size]]
                metrics = train_step(generator, discriminator, state, batch, config)
                row = {"step": state.global_step, "epoch": epoch, "batch_size": len(batch),
                       **metrics}
                curves.append(row)
                if writer is not None:
                    writer.writerow([row[c] for c in CURVE_COLUMNS])
            state.epoch = epoch + 1
            if csv_file is not None:
                csv_file.flush()
            logger.info("epoch %d/%d batch=%d d_loss=%.4f g_adv=%.4f g_l1=%.4f",
                        epoch + 1, config.epochs, size,
                        state.ema.get("d_loss", float("nan")),
                        state.ema.get("g_adv", float("nan")),
                        state.ema.get("g_l1", float("nan")))
            due = (config.checkpoint_interval > 0
                   and (epoch + 1) % config.checkpoint_interval == 0)
            if checkpoint_path is not None and (due or epoch + 1 == config.epochs):
                write_training_checkpoint(checkpoint_path, generator, discriminator,
                                          state, fingerprint)
    finally:
        if csv_file is not None:
            csv_file.close()

    return TrainResult(curves=curves, state=state)


def write_training_checkpoint(path, generator: Generator, discriminator: Discriminator,
                              state: TrainState, fingerprint: str) -> None:
    data = CheckpointData(
        fingerprint=fingerprint,
        params=merge_prefixed(G=generator.params, D=discriminator.params),
        buffers=merge_prefixed(G=generator.buffers, D=discriminator.buffers),
        adam_g=state.adam_g,
        adam_d=state.adam_d,
        rng_state=state.rng.bit_generator.state,
        progress={"epoch": state.epoch, "global_step": state.global_step,
                  "d_updates": state.d_updates, "g_updates": state.g_updates,
                  "ema": state.ema},
    )
    save_checkpoint(path, data)


def restore_networks(data: CheckpointData, generator: Generator,
                     discriminator: Discriminator) -> None:
    """Load checkpointed tensors into freshly built networks (shapes must match)."""
    for net, prefix in ((generator, "G"), (discriminator, "D")):
        params = split_prefixed(data.params, prefix + ".")
        buffers = split_prefixed(data.buffers, prefix + ".")
        if set(params) != set(net.params):
            raise ValueError(f"checkpoint {prefix} parameters do not match the "
                             "configured architecture")
        for name, arr in params.items():
            if arr.shape != net.params[name].data.shape:
                raise ValueError(f"checkpoint tensor {prefix}.{name} has shape "
                                 f"{arr.shape}, expected {net.params[name].data.shape}")
        net.set_parameters({name: Tensor(arr, requires_grad=True, name=name,
                                         dtype=arr.dtype.type)
                            for name, arr in params.items()})
        for name, arr in buffers.items():
            net.buffers[name][...] = arr


def restore_train_state(data: CheckpointData, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng()
    rng.bit_generator.state = data.rng_state
    progress = data.progress
    return TrainState(epoch=int(progress["epoch"]),
                      global_step=int(progress["global_step"]),
                      d_updates=int(progress["d_updates"]),
                      g_updates=int(progress["g_updates"]),
                      adam_g=data.adam_g, adam_d=data.adam_d, rng=rng,
                      ema=dict(progress.get("ema", {})))


def load_training_checkpoint(path, config: TrainConfig, generator: Generator,
                             discriminator: Discriminator,
                             fingerprint: str | None = None) -> TrainState:
    data = load_checkpoint(path, expected_fingerprint=fingerprint)
    restore_networks(data, generator, discriminator)
    return restore_train_state(data, config)
