"""Pure-numpy reference kernels.

These are the fallback implementations of the hot numeric primitives used
by the decision head. The compiled module ``octopus.kernels._fast``
implements the same signatures; both must agree to float64 round-off.
"""

from __future__ import annotations

import numpy as np

_LN_EPS = 1e-5


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2D array."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Single-head scaled dot-product attention.

    Returns (out, attn) where attn = softmax(q k^T / sqrt(d_k)) and
    out = attn @ v.
    """
    dk = q.shape[1]
    scores = (q @ k.T) / np.sqrt(dk)
    attn = softmax_rows(scores)
    return attn @ v, attn


def attention_backward(d_out: np.ndarray, q: np.ndarray, k: np.ndarray,
                       v: np.ndarray, attn: np.ndarray):
    """Gradients of attention_forward w.r.t. q, k, v given d(out)."""
    dk = q.shape[1]
    d_attn = d_out @ v.T
    dv = attn.T @ d_out
    # softmax jacobian, row-wise: ds = attn * (d_attn - sum(d_attn * attn))
    inner = (d_attn * attn).sum(axis=1, keepdims=True)
    d_scores = attn * (d_attn - inner) / np.sqrt(dk)
    dq = d_scores @ k
    dkk = d_scores.T @ q
    return dq, dkk, dv


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Row-wise layer normalization. Returns (y, mean, rstd)."""
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * rstd
    return xhat * gain + bias, mean[:, 0], rstd[:, 0]


def layer_norm_backward(d_y: np.ndarray, x: np.ndarray, gain: np.ndarray,
                        mean: np.ndarray, rstd: np.ndarray):
    """Gradients of layer_norm_forward. Returns (dx, dgain, dbias)."""
    n = x.shape[1]
    mean = mean[:, None]
    rstd = rstd[:, None]
    xhat = (x - mean) * rstd
    dgain = (d_y * xhat).sum(axis=0)
    dbias = d_y.sum(axis=0)
    dxhat = d_y * gain
    dx = rstd * (dxhat
                 - dxhat.mean(axis=1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dgain, dbias
