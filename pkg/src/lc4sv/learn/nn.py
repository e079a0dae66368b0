"""Layers, parameter containers and the Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError, FrozenParameterError, ShapeError
from . import tensor as T
from .tensor import Tensor, as_tensor


def dense_forward(x, weight, bias):
    """y[..., j] = sum_k weight[j, k] * x[..., k] + bias[j]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[0],) or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense shapes disagree: x{x.shape}, W{weight.shape}, b{bias.shape}")
    return T.matmul(x, T.transpose(weight)) + bias


def leaky_relu(x, negative_slope: float = 0.01):
    return T.leaky_relu(x, negative_slope)


def cosine_similarity(a, b, axis: int = -1):
    """<a, b> / (|a| |b|) along ``axis``; raises on zero-norm inputs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[axis] != b.shape[axis]:
        raise ShapeError(f"cosine dimensions disagree: {a.shape} vs {b.shape}")
    na_sq = T.tsum(T.square(a), axis=axis)
    nb_sq = T.tsum(T.square(b), axis=axis)
    if np.any(na_sq.data == 0.0) or np.any(nb_sq.data == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return T.tsum(a * b, axis=axis) / T.sqrt(na_sq * nb_sq)


def pairwise_cosine(a, b):
    """Cosine similarity matrix between rows of ``a`` (N, d) and rows of ``b`` (M, d)."""
    a, b = as_tensor(a), as_tensor(b)
    na = T.sqrt(T.tsum(T.square(a), axis=-1, keepdims=True))
    nb = T.sqrt(T.tsum(T.square(b), axis=-1, keepdims=True))
    if np.any(na.data == 0.0) or np.any(nb.data == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return T.matmul(a / na, T.transpose(b / nb))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamSet:
    """An ordered mapping of named parameter tensors with a frozen flag."""

    def __init__(self, params=None):
        self.params: dict[str, Tensor] = {}
        self.frozen = False
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=not self.frozen)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def freeze(self) -> "ParamSet":
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state) -> None:
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unexpected parameter {k!r}")
            if self.params[k].shape != np.shape(v):
                raise ShapeError(f"parameter {k!r}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def fingerprint(self) -> bytes:
        return b"".join(k.encode() + v.data.tobytes() for k, v in self.params.items())


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **kwargs) -> "AdamState":
        shape = np.shape(param.data if isinstance(param, Tensor) else param)
        return cls(np.zeros(shape), np.zeros(shape), **kwargs)


def adam_update(param, grad, state: AdamState, learning_rate: float):
    """One bias-corrected Adam step; returns (new_param, new_state).

    Coordinates whose gradient is exactly zero are left untouched, moments
    included, so a zero gradient never moves a parameter.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or state.first_moment.shape != param.shape:
        raise ShapeError(f"adam shapes disagree: param {param.shape}, grad {grad.shape}")
    t = state.step_count + 1
    active = grad != 0.0
    m = np.where(active, state.beta1 * state.first_moment + (1.0 - state.beta1) * grad,
                 state.first_moment)
    v = np.where(active, state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad,
                 state.second_moment)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    step = learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_param = np.where(active, param - step, param)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return new_param, new_state


class Adam:
    """Adam over one or more parameter sets; refuses frozen sets."""

    def __init__(self, param_sets, learning_rate: float, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if isinstance(param_sets, ParamSet):
            param_sets = [param_sets]
        self.param_sets = list(param_sets)
        for ps in self.param_sets:
            if ps.frozen:
                raise FrozenParameterError("optimizer constructed over a frozen parameter set")
        self.learning_rate = float(learning_rate)
        self.states = {
            id(t): AdamState.zeros_like(t, beta1=beta1, beta2=beta2, epsilon=epsilon)
            for ps in self.param_sets for t in ps.tensors()
        }

    def step(self) -> None:
        for ps in self.param_sets:
            if ps.frozen:
                raise FrozenParameterError("attempt to update a frozen parameter set")
            for t in ps.tensors():
                grad = t.grad if t.grad is not None else np.zeros_like(t.data)
                t.data, self.states[id(t)] = adam_update(
                    t.data, grad, self.states[id(t)], self.learning_rate)

    def zero_grad(self) -> None:
        for ps in self.param_sets:
            for t in ps.tensors():
                t.grad = None
