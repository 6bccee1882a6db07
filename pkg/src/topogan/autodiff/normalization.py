"""Batch normalization over [N,C,H,W] tensors.

Training mode normalizes with batch statistics and updates the running
mean/variance in place (torch-style momentum: new = (1-m)*old + m*batch).
Inference mode normalizes with the running statistics, which are constants
on the tape. A batch of one sample has no batch variance; callers choose
between an explicit error (default) and instance-style per-sample spatial
statistics, which keep single-sample training steps defined.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accumulate, _make_node


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray, *,
                training: bool, momentum: float = 0.1, eps: float = 1e-5,
                batch1_mode: str = "error") -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"batchnorm2d expects a 4-D input [N,C,H,W], got {x.data.ndim}-D")
    n, c = x.data.shape[:2]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"batchnorm2d affine parameters must have shape ({c},)")
    if batch1_mode not in ("error", "instance"):
        raise ValueError(f"unknown batch1_mode {batch1_mode!r}")

    g = gamma.data.reshape(1, c, 1, 1)
    b = beta.data.reshape(1, c, 1, 1)

    if not training:
        denom = 1.0 / np.sqrt(running_var + eps)
        scale = (g * denom.reshape(1, c, 1, 1)).astype(x.data.dtype)
        xhat = ((x.data - running_mean.reshape(1, c, 1, 1))
                * denom.reshape(1, c, 1, 1)).astype(x.data.dtype)
        data = g * xhat + b

        def backward_inference(grad):
            _accumulate(x, grad * scale)
            _accumulate(gamma, (grad * xhat).sum(axis=(0, 2, 3)))
            _accumulate(beta, grad.sum(axis=(0, 2, 3)))

        return _make_node(data.astype(x.data.dtype), (x, gamma, beta), backward_inference)

    if n == 1 and batch1_mode == "error":
        raise ValueError("batchnorm2d: training mode needs a batch of at least 2 "
                         "(batch variance is undefined for a single sample); "
                         "pass batch1_mode='instance' for per-sample spatial statistics")
    axes = (2, 3) if n == 1 else (0, 2, 3)
    m = int(np.prod([x.data.shape[a] for a in axes]))

    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = g * xhat + b

    # running stats track per-channel batch statistics (unbiased variance)
    batch_mean = mu.mean(axis=0).reshape(c)
    batch_var = var.mean(axis=0).reshape(c)
    unbias = m / (m - 1) if m > 1 else 1.0
    running_mean *= 1.0 - momentum
    running_mean += momentum * batch_mean
    running_var *= 1.0 - momentum
    running_var += momentum * batch_var * unbias

    def backward_training(grad):
        if x.requires_grad:
            dxhat = grad * g
            dvar = (dxhat * centered).sum(axis=axes, keepdims=True) * (-0.5) * inv_std ** 3
            dmu = -(dxhat * inv_std).sum(axis=axes, keepdims=True)
            dx = dxhat * inv_std + (2.0 / m) * dvar * centered + dmu / m
            _accumulate(x, dx)
        _accumulate(gamma, (grad * xhat).sum(axis=(0, 2, 3)))
        _accumulate(beta, grad.sum(axis=(0, 2, 3)))

    return _make_node(data.astype(x.data.dtype), (x, gamma, beta), backward_training)
