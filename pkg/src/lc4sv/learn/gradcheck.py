"""Central finite-difference gradient checks for the autodiff substrate."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, arrays, h: float = 1e-4):
    """Central differences of a scalar ``fn(*arrays)`` w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn(*arrays))
            flat[i] = orig - h
            down = float(fn(*arrays))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grad(fn, arrays):
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, arrays, h: float = 1e-4) -> float:
    """Largest relative error between autodiff and finite differences."""
    num = numeric_grad(fn, arrays, h)
    ana = analytic_grad(fn, arrays)
    return max(relative_error(n, a) for n, a in zip(num, ana))
