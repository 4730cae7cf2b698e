"""Plain numeric kernels, the named parameter store, and gradient checking."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .autodiff import Tensor, parameter
from .errors import NumericError


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a vector (max-subtraction)."""
    v = np.asarray(v)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def layer_norm(v: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """gain * (v - mean) / sqrt(population variance + eps) + bias."""
    v = np.asarray(v)
    if np.shape(gain) != v.shape or np.shape(bias) != v.shape:
        raise ValueError("gain and bias must match the input length")
    mu = v.mean()
    var = ((v - mu) ** 2).mean()
    return gain * (v - mu) / np.sqrt(var + eps) + bias


class ParamStore:
    """Named, flat-indexable collection of parameters with gradient slots.

    Enumeration order is insertion order and stays stable, which fixes the
    canonical order for gradient reduction, clipping, checkpoint layout, and
    finite-difference sweeps.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = parameter(np.ascontiguousarray(array, dtype=self.dtype))
        self._params[name] = t
        return t

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_of(self, name: str) -> np.ndarray:
        t = self._params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def clone_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {src.shape} vs {t.data.shape}")
            t.data[...] = src.astype(self.dtype)


def gradient_check(loss_fn: Callable[[], Tensor], params: ParamStore,
                   eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild its graph from the store's current arrays on
    every call; parameters are perturbed in place one scalar at a time. The
    error for one scalar is ``|a - f| / max(|a|, |f|, 1e-8)``.
    """
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("loss is non-finite at the current parameters")
    loss.backward()
    analytic = {name: params.grad_of(name).copy() for name, _ in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(loss_fn().data)
            flat[idx] = orig - eps
            down = float(loss_fn().data)
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"loss became non-finite while perturbing {name!r}[{idx}]")
            fd = (up - down) / (2.0 * eps)
            a = float(a_flat[idx])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if err > worst:
                worst = err
    return worst


def global_grad_norm(params: ParamStore) -> float:
    total = 0.0
    for name, _ in params.items():
        g = params.grad_of(name)
        total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))
