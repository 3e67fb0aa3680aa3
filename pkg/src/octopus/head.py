"""Learnable decision head: a small transformer that picks a decoding action.

The head reads the simulator's hidden-state sequence, prepends a learnable
summary ("eye") token, adds learned position embeddings, runs pre-LN
transformer blocks, and maps the summary position through a tanh MLP to one
logit per action. Forward and backward passes are written out by hand on top
of the kernel primitives so gradients are exact (verified by finite
differences in the test suite).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .decoding import N_ACTIONS, Action
from .errors import CheckpointError, ContractViolation, InvalidArgumentError
from .kernels import (attention_backward, attention_forward,
                      layer_norm_backward, layer_norm_forward)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class HeadConfig:
    d: int = 32
    layers: int = 2
    heads: int = 4
    mlp_hidden: int = 64
    n_actions: int = N_ACTIONS
    max_positions: int = 64

    def __post_init__(self):
        if self.d <= 0 or self.layers <= 0 or self.heads <= 0:
            raise InvalidArgumentError("d, layers, heads must be positive")
        if self.d % self.heads != 0:
            raise InvalidArgumentError(
                f"d={self.d} not divisible by heads={self.heads}")

    @property
    def d_head(self) -> int:
        return self.d // self.heads


HeadParams = dict[str, np.ndarray]


def param_shapes(config: HeadConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter name -> shape map; iteration order is canonical."""
    d, h = config.d, config.mlp_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "eye": (d,),
        "pos": (config.max_positions, d),
    }
    for i in range(config.layers):
        p = f"layer{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes[f"{p}.attn.wq"] = (d, d)
        shapes[f"{p}.attn.bq"] = (d,)
        shapes[f"{p}.attn.wk"] = (d, d)
        shapes[f"{p}.attn.bk"] = (d,)
        shapes[f"{p}.attn.wv"] = (d, d)
        shapes[f"{p}.attn.bv"] = (d,)
        shapes[f"{p}.attn.wo"] = (d, d)
        shapes[f"{p}.attn.bo"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, h)
        shapes[f"{p}.mlp.b1"] = (h,)
        shapes[f"{p}.mlp.w2"] = (h, d)
        shapes[f"{p}.mlp.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.w1"] = (d, h)
    shapes["head.b1"] = (h,)
    shapes["head.w2"] = (h, config.n_actions)
    shapes["head.b2"] = (config.n_actions,)
    return shapes


def n_params(config: HeadConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_head(config: HeadConfig, seed: int = 0) -> HeadParams:
    """N(0, 0.02^2) weights; layer-norm gains 1; all other biases 0."""
    from .rng import RngState

    rng = RngState(seed, "head/init")
    params: HeadParams = {}
    for name, shape in param_shapes(config).items():
        size = int(np.prod(shape))
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".bq", ".bk", ".bv", ".bo",
                            ".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.gaussian(size, 0.02).reshape(shape)
    return params


def flatten_params(params: HeadParams, config: HeadConfig) -> np.ndarray:
    """Concatenate parameters into one vector in canonical order."""
    shapes = param_shapes(config)
    missing = set(shapes) - set(params)
    if missing:
        raise InvalidArgumentError(f"missing parameters: {sorted(missing)}")
    return np.concatenate([np.asarray(params[n]).ravel() for n in shapes])


def unflatten_params(vec: np.ndarray, config: HeadConfig) -> HeadParams:
    shapes = param_shapes(config)
    total = n_params(config)
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (total,):
        raise InvalidArgumentError(
            f"expected parameter vector of shape ({total},), got {vec.shape}")
    out: HeadParams = {}
    offset = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        out[name] = vec[offset:offset + size].reshape(shape).copy()
        offset += size
    return out


# ---------------------------------------------------------------------------
# Forward

@dataclass
class _BlockTrace:
    x_in: np.ndarray
    ln1_mean: np.ndarray
    ln1_rstd: np.ndarray
    a: np.ndarray  # normalized input to attention
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: list[np.ndarray]  # per-head attention weights
    heads_out: np.ndarray  # concatenated head outputs
    x_mid: np.ndarray  # after attention residual
    ln2_mean: np.ndarray
    ln2_rstd: np.ndarray
    f: np.ndarray  # normalized input to the feed-forward
    ff_act: np.ndarray  # tanh activations of the hidden layer


@dataclass
class ForwardTrace:
    x0: np.ndarray  # input sequence after eye + position embedding
    n_pos: int
    param_sig: float  # parameter checksum; detects stale traces
    blocks: list[_BlockTrace]
    x_final: np.ndarray
    final_mean: np.ndarray
    final_rstd: np.ndarray
    y: np.ndarray  # final-LN output
    h0: np.ndarray  # summary vector
    z: np.ndarray  # head MLP tanh activations
    logits: np.ndarray


def _param_sig(params: HeadParams) -> float:
    return float(sum(np.sum(v) for v in params.values()))


def _split_heads(x: np.ndarray, config: HeadConfig) -> list[np.ndarray]:
    return [x[:, i * config.d_head:(i + 1) * config.d_head]
            for i in range(config.heads)]


def head_forward(params: HeadParams, config: HeadConfig,
                 states: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Action logits for one hidden-state sequence. Returns (logits, trace)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != config.d:
        raise InvalidArgumentError(
            f"states must be (n, {config.d}), got {states.shape}")
    n = states.shape[0] + 1
    if n > config.max_positions:
        raise InvalidArgumentError(
            f"sequence of {n} positions exceeds cap {config.max_positions}")

    x = np.concatenate([params["eye"][None, :], states], axis=0)
    x = x + params["pos"][:n]
    x0 = x.copy()

    blocks: list[_BlockTrace] = []
    for i in range(config.layers):
        p = f"layer{i}"
        a, m1, r1 = layer_norm_forward(x, params[f"{p}.ln1.gain"],
                                       params[f"{p}.ln1.bias"])
        q = a @ params[f"{p}.attn.wq"] + params[f"{p}.attn.bq"]
        k = a @ params[f"{p}.attn.wk"] + params[f"{p}.attn.bk"]
        v = a @ params[f"{p}.attn.wv"] + params[f"{p}.attn.bv"]
        attn_w: list[np.ndarray] = []
        outs: list[np.ndarray] = []
        for (qh, kh, vh) in zip(_split_heads(q, config),
                                _split_heads(k, config),
                                _split_heads(v, config)):
            oh, ah = attention_forward(qh, kh, vh)
            outs.append(oh)
            attn_w.append(ah)
        heads_out = np.concatenate(outs, axis=1)
        x_mid = x + heads_out @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]

        f, m2, r2 = layer_norm_forward(x_mid, params[f"{p}.ln2.gain"],
                                       params[f"{p}.ln2.bias"])
        ff_act = np.tanh(f @ params[f"{p}.mlp.w1"] + params[f"{p}.mlp.b1"])
        x_next = x_mid + ff_act @ params[f"{p}.mlp.w2"] + params[f"{p}.mlp.b2"]

        blocks.append(_BlockTrace(
            x_in=x, ln1_mean=m1, ln1_rstd=r1, a=a, q=q, k=k, v=v,
            attn=attn_w, heads_out=heads_out, x_mid=x_mid,
            ln2_mean=m2, ln2_rstd=r2, f=f, ff_act=ff_act))
        x = x_next

    y, mf, rf = layer_norm_forward(x, params["final_ln.gain"],
                                   params["final_ln.bias"])
    h0 = y[0]
    z = np.tanh(h0 @ params["head.w1"] + params["head.b1"])
    logits = z @ params["head.w2"] + params["head.b2"]
    trace = ForwardTrace(x0=x0, n_pos=n, param_sig=_param_sig(params),
                         blocks=blocks, x_final=x, final_mean=mf,
                         final_rstd=rf, y=y, h0=h0, z=z, logits=logits)
    return logits, trace


def select_action(logits: np.ndarray) -> Action:
    """Greedy action choice; ties break toward the lower-numbered action."""
    return Action(int(np.argmax(logits)))


# ---------------------------------------------------------------------------
# Backward

def head_backward(params: HeadParams, config: HeadConfig,
                  trace: ForwardTrace,
                  d_logits: np.ndarray) -> HeadParams:
    """Exact reverse-mode gradients of the action logits' scalar loss.

    d_logits is dLoss/dlogits; the return value maps every parameter name to
    its gradient array (same shapes as the parameters).
    """
    if _param_sig(params) != trace.param_sig:
        raise ContractViolation(
            "trace is stale: parameters changed since head_forward")
    d_logits = np.asarray(d_logits, dtype=np.float64)
    grads: HeadParams = {n: np.zeros(s)
                         for n, s in param_shapes(config).items()}

    # head MLP
    grads["head.b2"] += d_logits
    grads["head.w2"] += np.outer(trace.z, d_logits)
    d_z = params["head.w2"] @ d_logits
    d_pre = d_z * (1.0 - trace.z ** 2)
    grads["head.b1"] += d_pre
    grads["head.w1"] += np.outer(trace.h0, d_pre)
    d_h0 = params["head.w1"] @ d_pre

    d_y = np.zeros_like(trace.y)
    d_y[0] = d_h0
    d_x, dg, db = layer_norm_backward(d_y, trace.x_final,
                                      params["final_ln.gain"],
                                      trace.final_mean, trace.final_rstd)
    grads["final_ln.gain"] += dg
    grads["final_ln.bias"] += db

    for i in reversed(range(config.layers)):
        p = f"layer{i}"
        blk = trace.blocks[i]

        # feed-forward sublayer (residual: x_next = x_mid + ff)
        d_ff_out = d_x
        grads[f"{p}.mlp.b2"] += d_ff_out.sum(axis=0)
        grads[f"{p}.mlp.w2"] += blk.ff_act.T @ d_ff_out
        d_act = d_ff_out @ params[f"{p}.mlp.w2"].T
        d_pre = d_act * (1.0 - blk.ff_act ** 2)
        grads[f"{p}.mlp.b1"] += d_pre.sum(axis=0)
        grads[f"{p}.mlp.w1"] += blk.f.T @ d_pre
        d_f = d_pre @ params[f"{p}.mlp.w1"].T
        d_x_mid, dg, db = layer_norm_backward(d_f, blk.x_mid,
                                              params[f"{p}.ln2.gain"],
                                              blk.ln2_mean, blk.ln2_rstd)
        grads[f"{p}.ln2.gain"] += dg
        grads[f"{p}.ln2.bias"] += db
        d_x_mid = d_x_mid + d_x  # residual path

        # attention sublayer (residual: x_mid = x + proj(heads_out))
        grads[f"{p}.attn.bo"] += d_x_mid.sum(axis=0)
        grads[f"{p}.attn.wo"] += blk.heads_out.T @ d_x_mid
        d_heads = d_x_mid @ params[f"{p}.attn.wo"].T
        d_q = np.zeros_like(blk.q)
        d_k = np.zeros_like(blk.k)
        d_v = np.zeros_like(blk.v)
        dh = config.d_head
        for h in range(config.heads):
            sl = slice(h * dh, (h + 1) * dh)
            dqh, dkh, dvh = attention_backward(
                d_heads[:, sl], blk.q[:, sl], blk.k[:, sl], blk.v[:, sl],
                blk.attn[h])
            d_q[:, sl] = dqh
            d_k[:, sl] = dkh
            d_v[:, sl] = dvh
        grads[f"{p}.attn.bq"] += d_q.sum(axis=0)
        grads[f"{p}.attn.wq"] += blk.a.T @ d_q
        grads[f"{p}.attn.bk"] += d_k.sum(axis=0)
        grads[f"{p}.attn.wk"] += blk.a.T @ d_k
        grads[f"{p}.attn.bv"] += d_v.sum(axis=0)
        grads[f"{p}.attn.wv"] += blk.a.T @ d_v
        d_a = (d_q @ params[f"{p}.attn.wq"].T
               + d_k @ params[f"{p}.attn.wk"].T
               + d_v @ params[f"{p}.attn.wv"].T)
        d_x_in, dg, db = layer_norm_backward(d_a, blk.x_in,
                                             params[f"{p}.ln1.gain"],
                                             blk.ln1_mean, blk.ln1_rstd)
        grads[f"{p}.ln1.gain"] += dg
        grads[f"{p}.ln1.bias"] += db
        d_x = d_x_in + d_x_mid  # residual path

    grads["eye"] += d_x[0]
    grads["pos"][:trace.n_pos] += d_x
    return grads


# ---------------------------------------------------------------------------
# Checkpoints

def model_fingerprint(model_json: str) -> str:
    return hashlib.sha256(model_json.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path: str, params: HeadParams, config: HeadConfig,
                    meta: dict | None = None) -> None:
    """Write a JSON checkpoint atomically (temp file + rename)."""
    shapes = param_shapes(config)
    missing = set(shapes) - set(params)
    if missing:
        raise InvalidArgumentError(f"missing parameters: {sorted(missing)}")
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "head_config": asdict(config),
        "params": {n: np.asarray(params[n]).tolist() for n in shapes},
        "meta": meta or {},
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[HeadParams, HeadConfig, dict]:
    """Read a checkpoint, validating structure and shapes."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path!r} is not valid JSON") from e
    if not isinstance(payload, dict):
        raise CheckpointError("checkpoint root must be a JSON object")
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r}")
    for key in ("head_config", "params"):
        if key not in payload:
            raise CheckpointError(f"checkpoint missing {key!r}")
    try:
        config = HeadConfig(**payload["head_config"])
    except (TypeError, InvalidArgumentError) as e:
        raise CheckpointError(f"bad head_config in checkpoint: {e}") from e
    shapes = param_shapes(config)
    raw = payload["params"]
    params: HeadParams = {}
    for name, shape in shapes.items():
        if name not in raw:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        arr = np.asarray(raw[name], dtype=np.float64)
        if arr.shape != shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {arr.shape}, expected {shape}")
        params[name] = arr
    return params, config, payload.get("meta", {})
