"""Deterministic numeric primitives: softmax, attention, Adam.

All arrays are float64. Operations are pure except adam_step, which
mutates the AdamState passed to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgumentError


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1D vector (max-subtraction form)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("softmax expects a non-empty 1D vector")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("softmax input must be finite")
    return kernels.softmax_rows(x[None, :])[0]


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(q k^T / sqrt(d_k)) v for 2D q, k, v."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InvalidArgumentError("attention inputs must be 2D")
    if q.shape[1] != k.shape[1]:
        raise InvalidArgumentError(
            f"q and k must share column count: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise InvalidArgumentError(
            f"k and v must share row count: {k.shape} vs {v.shape}")
    out, _ = kernels.attention_forward(
        np.ascontiguousarray(q), np.ascontiguousarray(k), np.ascontiguousarray(v))
    return out


@dataclass
class AdamState:
    """Moment buffers and step counter for one flat parameter vector."""

    lr: float
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidArgumentError(f"need lr >= 0, got {self.lr}")
        self.m = np.zeros(self.n_params)
        self.v = np.zeros(self.n_params)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update. Mutates state, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != (state.n_params,):
        raise InvalidArgumentError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.n_params}")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads ** 2
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
