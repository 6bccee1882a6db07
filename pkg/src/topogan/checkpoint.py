"""Versioned binary checkpoint container.

Layout: magic "GOG1", format version, config fingerprint, then
length-prefixed named tensor sections (parameters, buffers), two Adam
states, the training RNG state, and a JSON progress blob, closed by a
sha256 digest of everything before it. All payloads are little-endian
(big-endian hosts get byteswapped on write/read). Writes go to a temp file
and rename into place so a crash never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tensor

MAGIC = b"GOG1"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_TAG_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class CheckpointError(RuntimeError):
    """Checkpoint is unreadable, corrupted, or from a different config."""


@dataclass
class CheckpointData:
    fingerprint: str
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam_g: AdamState
    adam_d: AdamState
    rng_state: dict
    progress: dict = field(default_factory=dict)


def _write_name(out: io.BytesIO, name: str) -> None:
    encoded = name.encode("utf-8")
    out.write(struct.pack("<H", len(encoded)))
    out.write(encoded)


def _read_name(buf: io.BytesIO) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def _write_tensor(out: io.BytesIO, name: str, arr: np.ndarray) -> None:
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
    _write_name(out, name)
    out.write(struct.pack("<BB", tag, arr.ndim))
    out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.write(np.ascontiguousarray(arr, dtype=_TAG_DTYPES[tag]).tobytes())


def _read_tensor(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    name = _read_name(buf)
    tag, ndim = struct.unpack("<BB", buf.read(2))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(buf.read(count * dtype.itemsize), dtype=dtype)
    native = data.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
    return name, native


def _write_section(out: io.BytesIO, tensors: dict[str, np.ndarray]) -> None:
    out.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(out, name, tensors[name])


def _read_section(buf: io.BytesIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", buf.read(4))
    return dict(_read_tensor(buf) for _ in range(count))


def _write_adam(out: io.BytesIO, state: AdamState) -> None:
    out.write(struct.pack("<Q", state.step))
    out.write(struct.pack("<4d", state.lr, state.beta1, state.beta2, state.eps))
    _write_section(out, state.m)
    _write_section(out, state.v)


def _read_adam(buf: io.BytesIO) -> AdamState:
    (step,) = struct.unpack("<Q", buf.read(8))
    lr, beta1, beta2, eps = struct.unpack("<4d", buf.read(32))
    m = _read_section(buf)
    v = _read_section(buf)
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=step, m=m, v=v)


def _write_blob(out: io.BytesIO, payload: dict) -> None:
    encoded = json.dumps(payload, sort_keys=True).encode("utf-8")
    out.write(struct.pack("<I", len(encoded)))
    out.write(encoded)


def _read_blob(buf: io.BytesIO) -> dict:
    (n,) = struct.unpack("<I", buf.read(4))
    return json.loads(buf.read(n).decode("utf-8"))


def save_checkpoint(path, data: CheckpointData) -> None:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<B", FORMAT_VERSION))
    _write_name(out, data.fingerprint)
    _write_section(out, data.params)
    _write_section(out, data.buffers)
    _write_adam(out, data.adam_g)
    _write_adam(out, data.adam_d)
    _write_blob(out, data.rng_state)
    _write_blob(out, data.progress)
    body = out.getvalue()
    digest = hashlib.sha256(body).digest()

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    os.replace(tmp, path)


def load_checkpoint(path, expected_fingerprint: str | None = None) -> CheckpointData:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 33 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: magic bytes mismatch; not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: sha256 digest mismatch; file is corrupted")
    buf = io.BytesIO(body)
    buf.read(4)
    (version,) = struct.unpack("<B", buf.read(1))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    fingerprint = _read_name(buf)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(
            f"{path}: config fingerprint mismatch (checkpoint {fingerprint[:12]}..., "
            f"expected {expected_fingerprint[:12]}...); refusing to load")
    params = _read_section(buf)
    buffers = _read_section(buf)
    adam_g = _read_adam(buf)
    adam_d = _read_adam(buf)
    rng_state = _read_blob(buf)
    progress = _read_blob(buf)
    return CheckpointData(fingerprint=fingerprint, params=params, buffers=buffers,
                          adam_g=adam_g, adam_d=adam_d, rng_state=rng_state,
                          progress=progress)


def describe_checkpoint(path) -> dict:
    """Human-oriented summary used by the inspect command."""
    data = load_checkpoint(path)
    def section(tensors):
        return {
            "count": len(tensors),
            "scalars": int(sum(t.size for t in tensors.values())),
        }
    return {
        "fingerprint": data.fingerprint,
        "params": section(data.params),
        "buffers": section(data.buffers),
        "adam_g_steps": data.adam_g.step,
        "adam_d_steps": data.adam_d.step,
        "progress": data.progress,
    }


def split_prefixed(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {name[len(prefix):]: arr for name, arr in tensors.items()
            if name.startswith(prefix)}


def merge_prefixed(**groups: dict) -> dict[str, np.ndarray]:
    merged: dict[str, np.ndarray] = {}
    for prefix, tensors in groups.items():
        for name, value in tensors.items():
            arr = value.data if isinstance(value, Tensor) else value
            merged[f"{prefix}.{name}"] = arr
    return merged
