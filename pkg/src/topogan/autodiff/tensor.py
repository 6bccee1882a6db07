"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record their producing operation so that
``backward`` can replay the graph in reverse topological order. Tensors are
treated as immutable after construction; optimizers build new tensors rather
than mutating data in place. The graph (the "tape") lives in the parent links
of the tensors themselves and is confined to the thread that built it.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible; the message names the offending axis."""


class DomainError(ValueError):
    """Operand values are outside an operation's mathematical domain."""


_FLOAT_DTYPES = (np.float32, np.float64)

_session = threading.local()


def set_default_dtype(dtype) -> None:
    """Select the session float width (64-bit default, 32-bit for speed)."""
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported default dtype {dtype!r}; use float32 or float64")
    _session.dtype = dtype


def default_dtype():
    return getattr(_session, "dtype", np.float64)


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        self._prev = grad_enabled()
        _session.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _session.grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return getattr(_session, "grad_enabled", True)


class Tensor:
    """N-dimensional array participating in the differentiation tape.

    ``requires_grad`` marks trainable leaves; intermediate results require
    grad whenever any input does. ``grad`` accumulates additively during
    ``backward``. A detached tensor has no parents and never receives
    gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Return a grad-free view of this tensor's data, off the tape."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype.type))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype.type), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype.type))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype.type), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype.type))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype.type), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, _as_tensor(1.0 / other, self.dtype.type))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype.type))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype.type))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _make_node(data: np.ndarray, parents: Sequence[Tensor],
               backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; records the graph only when grads are wanted."""
    out = Tensor(data, dtype=data.dtype.type)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Visits each graph node exactly once in reverse topological order, so
    shared subexpressions contribute additively. Returns a gradient map for
    ``params`` (or for every reachable grad-requiring leaf when omitted);
    parameters passed in but unreachable from the loss map to zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if params is not None:
        out = {}
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out[p] = p.grad
        return out
    return {node: node.grad for node in topo
            if node._backward is None and node.requires_grad and node.grad is not None}


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(grad, b.data.shape))

    return _make_node(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(-grad, b.data.shape))

    return _make_node(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.data.shape))

    return _make_node(data, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands, got "
                         f"{a.data.ndim}-D and {b.data.ndim}-D")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner axis mismatch: lhs axis 1 is {a.data.shape[1]}, "
                         f"rhs axis 0 is {b.data.shape[0]}")
    data = a.data @ b.data

    def backward_fn(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _make_node(data, (a, b), backward_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for x:[N,K], weight:[K,M], bias:[M]."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense expects a 2-D input, got {x.data.ndim}-D")
    if weight.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"dense inner axis mismatch: input axis 1 is {x.data.shape[1]}, "
                         f"weight axis 0 is {weight.data.shape[0]}")
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(f"dense bias axis mismatch: weight axis 1 is {weight.data.shape[1]}, "
                         f"bias shape is {bias.data.shape}")
    return add(matmul(x, weight), bias)


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)
    old_shape = x.data.shape

    def backward_fn(grad):
        _accumulate(x, grad.reshape(old_shape))

    return _make_node(data, (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, grad[tuple(index)])

    return _make_node(data, tuple(tensors), backward_fn)


# -- reductions and elementwise ----------------------------------------------

def mean(x: Tensor) -> Tensor:
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)
    n = x.data.size

    def backward_fn(grad):
        _accumulate(x, np.full_like(x.data, grad / n))

    return _make_node(data, (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(grad):
        _accumulate(x, np.full_like(x.data, grad))

    return _make_node(data, (x,), backward_fn)


def tensor_abs(x: Tensor) -> Tensor:
    data = np.abs(x.data)
    sign = np.sign(x.data)  # subgradient at 0 is 0

    def backward_fn(grad):
        _accumulate(x, grad * sign)

    return _make_node(data, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive inputs; "
                          f"min value is {x.data.min()}")
    data = np.log(x.data)

    def backward_fn(grad):
        _accumulate(x, grad / x.data)

    return _make_node(data, (x,), backward_fn)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(x.data, lo, hi)
    mask = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return _make_node(data, (x,), backward_fn)


# -- activations --------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    mask = (x.data > 0).astype(x.data.dtype)

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return _make_node(data, (x,), backward_fn)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data >= 0, x.data.dtype.type(1), x.data.dtype.type(slope))
    data = x.data * factor

    def backward_fn(grad):
        _accumulate(x, grad * factor)

    return _make_node(data, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    data = _stable_sigmoid(x.data)

    def backward_fn(grad):
        _accumulate(x, grad * data * (1 - data))

    return _make_node(data, (x,), backward_fn)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward_fn(grad):
        _accumulate(x, grad * (1 - data * data))

    return _make_node(data, (x,), backward_fn)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; exact identity when inactive or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - rate)
    data = x.data * mask

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return _make_node(data, (x,), backward_fn)
