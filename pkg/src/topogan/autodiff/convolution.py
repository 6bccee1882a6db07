"""2-D convolution and transposed convolution with reverse-mode gradients.

The three numpy kernels below (forward gather, input-gradient scatter,
kernel gradient) are shared by both ops: a transposed convolution is the
adjoint of a convolution, so its forward pass is the convolution's
input-gradient and vice versa. Loops run only over the kernel window
(kh x kw slice assignments), so everything vectorizes over batch, channels,
and spatial extent with a deterministic reduction order.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make_node, _accumulate


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _gather_cols(xp: np.ndarray, kh: int, kw: int, stride: int,
                 ho: int, wo: int) -> np.ndarray:
    """Stack the kh*kw shifted views of a padded input: [N,C,kh,kw,Ho,Wo]."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride,
                                  j:j + stride * wo:stride]
    return cols


def _conv2d_forward(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = _out_size(h, kh, stride, padding)
    wo = _out_size(w, kw, stride, padding)
    cols = _gather_cols(_pad2d(x, padding), kh, kw, stride, ho, wo)
    out = np.tensordot(k, cols, axes=([1, 2, 3], [1, 2, 3]))  # [F,N,Ho,Wo]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _conv2d_input_grad(gy: np.ndarray, k: np.ndarray, stride: int, padding: int,
                       in_hw: tuple[int, int]) -> np.ndarray:
    """Scatter an output-space array back to input space (adjoint of forward)."""
    n, _, ho, wo = gy.shape
    _, c, kh, kw = k.shape
    h, w = in_hw
    gcols = np.tensordot(gy, k, axes=([1], [0]))  # [N,Ho,Wo,C,kh,kw]
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding == 0:
        return gxp
    return gxp[:, :, padding:padding + h, padding:padding + w]


def _conv2d_kernel_grad(x: np.ndarray, gy: np.ndarray, stride: int, padding: int,
                        kshape: tuple[int, int, int, int]) -> np.ndarray:
    _, _, kh, kw = kshape
    _, _, ho, wo = gy.shape
    cols = _gather_cols(_pad2d(x, padding), kh, kw, stride, ho, wo)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 4, 5]))  # [F,C,kh,kw]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x:[N,C,H,W] with kernel:[F,C,kh,kw]."""
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input [N,C,H,W], got {x.data.ndim}-D")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D kernel [F,C,kh,kw], got {kernel.data.ndim}-D")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeError(f"conv2d channel axis mismatch: input C={c}, kernel expects C={ck}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        axis = "height" if kh > h + 2 * padding else "width"
        raise ShapeError(f"conv2d kernel exceeds padded input on the {axis} axis: "
                         f"kernel {kh}x{kw}, padded input {h + 2 * padding}x{w + 2 * padding}")

    data = _conv2d_forward(x.data, kernel.data, stride, padding)

    def backward_fn(grad):
        if x.requires_grad:
            _accumulate(x, _conv2d_input_grad(grad, kernel.data, stride, padding, (h, w)))
        if kernel.requires_grad:
            _accumulate(kernel, _conv2d_kernel_grad(x.data, grad, stride, padding,
                                                    kernel.data.shape))

    return _make_node(data, (x, kernel), backward_fn)


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x:[N,C,H,W] with kernel:[C,F,kh,kw].

    Output spatial size is (H-1)*stride - 2*padding + kh. With a shared
    kernel array this op is the exact adjoint of :func:`conv2d`:
    <conv2d(x,k), y> == <x, conv_transpose2d(y,k)>.
    """
    if stride < 1:
        raise ValueError(f"conv_transpose2d stride must be >= 1, got {stride}")
    if x.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects a 4-D input, got {x.data.ndim}-D")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects a 4-D kernel [C,F,kh,kw], "
                         f"got {kernel.data.ndim}-D")
    n, c, h, w = x.data.shape
    ck, f, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeError(f"conv_transpose2d channel axis mismatch: input C={c}, "
                         f"kernel expects C={ck}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        axis = "height" if ho < 1 else "width"
        raise ShapeError(f"conv_transpose2d produces an empty {axis} axis "
                         f"({ho}x{wo}) for input {h}x{w}")

    data = _conv2d_input_grad(x.data, kernel.data, stride, padding, (ho, wo))

    def backward_fn(grad):
        if x.requires_grad:
            _accumulate(x, _conv2d_forward(grad, kernel.data, stride, padding))
        if kernel.requires_grad:
            _accumulate(kernel, _conv2d_kernel_grad(grad, x.data, stride, padding,
                                                    kernel.data.shape))

    return _make_node(data, (x, kernel), backward_fn)
