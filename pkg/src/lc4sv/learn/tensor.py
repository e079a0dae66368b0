"""A small reverse-mode autodiff over numpy arrays.

Each operation records its parents and a closure mapping the upstream
gradient to one gradient per parent. ``Tensor.backward`` walks the graph in
reverse topological order. Only the operations the models in this package
need are provided; everything runs in float64.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sp_fft

from ..errors import ShapeError


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- graph ---------------------------------------------------------
    def backward(self, grad=None):
        """Populate ``.grad`` on every node of the graph that requires it.

        Gradients are recomputed from scratch on each call (no accumulation
        across calls).
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a, exponent: float):
    a = as_tensor(a)
    exponent = float(exponent)
    return _make(a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a):
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, negative_slope: float = 0.01):
    a = as_tensor(a)
    slope = np.where(a.data >= 0.0, 1.0, negative_slope)
    return _make(a.data * slope, (a,), lambda g: (g * slope,))


def smooth_l1(a, beta: float = 1.0):
    """Elementwise Huber loss: 0.5 e^2 for |e| < beta, |e| - 0.5 beta otherwise."""
    a = as_tensor(a)
    e = a.data
    quad = np.abs(e) < beta
    out = np.where(quad, 0.5 * e * e / beta, np.abs(e) - 0.5 * beta)
    return _make(out, (a,), lambda g: (g * np.where(quad, e / beta, np.sign(e)),))


# -- reductions and shape ops ----------------------------------------------
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, backward)


def matmul(a, b):
    """``a @ b`` for ``a`` of any rank >= 1 and ``b`` of rank 2."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ShapeError("matmul expects a 2-D right operand")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

    return _make(out, (a, b), backward)


# -- framing and Fourier transforms ------------------------------------------
def _frame_index(length, frame_length, hop):
    count = (length - frame_length) // hop + 1
    return hop * np.arange(count)[:, None] + np.arange(frame_length)[None, :]


def _scatter_frames(frames, index, length):
    """Overlap-add ``frames[..., F, W]`` into signals of ``length`` samples."""
    lead = frames.shape[:-2]
    rows = int(np.prod(lead)) if lead else 1
    flat = frames.reshape(rows, -1)
    offsets = (np.arange(rows) * length)[:, None] + index.reshape(1, -1)
    out = np.bincount(offsets.ravel(), weights=flat.ravel(), minlength=rows * length)
    return out.reshape(lead + (length,))


def frame(a, frame_length: int, hop: int):
    """Slice the last axis into overlapping frames: (..., T) -> (..., F, frame_length)."""
    a = as_tensor(a)
    length = a.shape[-1]
    if length < frame_length:
        raise ShapeError(f"signal of {length} samples is shorter than one frame ({frame_length})")
    index = _frame_index(length, frame_length, hop)
    out = a.data[..., index]
    return _make(out, (a,), lambda g: (_scatter_frames(g, index, length),))


def overlap_add(a, hop: int, length: int):
    """Adjoint of :func:`frame`: sum frames (..., F, W) back into (..., length)."""
    a = as_tensor(a)
    width = a.shape[-1]
    index = _frame_index(length, width, hop)
    if index.shape[0] != a.shape[-2]:
        raise ShapeError(f"{a.shape[-2]} frames do not tile {length} samples with hop {hop}")
    out = _scatter_frames(a.data, index, length)
    return _make(out, (a,), lambda g: (g[..., index],))


def _as_parts(spec):
    """View complex (...,) as float (..., 2) without copying."""
    return np.ascontiguousarray(spec).view(np.float64).reshape(spec.shape + (2,))


def _as_complex(parts):
    return np.ascontiguousarray(parts).view(np.complex128)[..., 0]


def rfft(a, n: int):
    """One-sided DFT of the last axis, zero-padded to ``n`` (even).

    Returns real and imaginary parts stacked on a new trailing axis:
    shape (..., n // 2 + 1, 2).
    """
    a = as_tensor(a)
    width = a.shape[-1]
    if n % 2 or width > n:
        raise ShapeError(f"rfft needs even n >= input width, got n={n}, width={width}")
    out = _as_parts(sp_fft.rfft(a.data, n=n, axis=-1))

    def backward(g):
        h = _as_complex(g).copy()
        h[..., 1:-1] *= 0.5
        return (n * sp_fft.irfft(h, n=n, axis=-1)[..., :width],)

    return _make(out, (a,), backward)


def irfft(a, n: int):
    """Inverse of :func:`rfft` from stacked (..., n // 2 + 1, 2) parts to (..., n)."""
    a = as_tensor(a)
    if a.shape[-1] != 2 or a.shape[-2] != n // 2 + 1:
        raise ShapeError(f"irfft expects (..., {n // 2 + 1}, 2), got {a.shape}")
    out = sp_fft.irfft(_as_complex(a.data), n=n, axis=-1)

    def backward(g):
        spec = sp_fft.rfft(g, n=n, axis=-1) / n
        spec[..., 1:-1] *= 2.0
        grad = _as_parts(spec)
        grad[..., 0, 1] = 0.0
        grad[..., -1, 1] = 0.0
        return (grad,)

    return _make(out, (a,), backward)


def complex_abs(a):
    """Magnitude of stacked (..., 2) real/imaginary parts.

    The gradient at an exactly zero magnitude is taken as zero.
    """
    a = as_tensor(a)
    re, im = a.data[..., 0], a.data[..., 1]
    mag = np.sqrt(re * re + im * im)

    def backward(g):
        nonzero = mag > 0.0
        scale = np.divide(g, mag, out=np.zeros_like(mag), where=nonzero)
        return (scale[..., None] * a.data,)

    return _make(mag, (a,), backward)


def power_spectrum(a):
    """Squared magnitude of stacked (..., 2) parts."""
    a = as_tensor(a)
    re, im = a.data[..., 0], a.data[..., 1]
    return _make(re * re + im * im, (a,),
                 lambda g: (2.0 * g[..., None] * a.data,))


def norm(a, axis=None):
    """Euclidean norm over ``axis``; zero-norm entries get a zero gradient."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def backward(g):
        o, gg = out, g
        if axis is not None:
            o, gg = np.expand_dims(out, axis), np.expand_dims(g, axis)
        safe = np.where(o > 0.0, o, 1.0)
        return (np.where(o > 0.0, gg / safe, 0.0) * a.data,)

    return _make(out, (a,), backward)
