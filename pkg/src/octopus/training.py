"""Direct preference optimization of the decision head.

The reference-free objective for a pair (chosen, rejected) is

    loss = -log sigmoid(beta * (logp_chosen - logp_rejected))

where logp is the head's log-probability of a workflow: the sum over decode
steps of log softmax(head logits on the pre-step hidden snapshot) at the
action actually taken. Decoded tokens are policy-independent given the
workflow, so replays are verified against the recorded tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoding import Action, CdConfig, decode_step
from .errors import DataIntegrityError, InvalidArgumentError
from .head import (ForwardTrace, HeadConfig, HeadParams, flatten_params,
                   head_backward, head_forward, init_head, n_params,
                   unflatten_params)
from .preference import PreferencePair
from .rng import RngState
from .simulator import ModelConfig, encode, slot_state
from .tensor import AdamState, adam_step, softmax
from .world import BOS, CooccurrencePrior, Sample


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.beta <= 0 or self.lr <= 0:
            raise InvalidArgumentError("beta and lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")


@dataclass
class _StepGrad:
    trace: ForwardTrace
    d_logits: np.ndarray  # d(logp)/d(head logits) at this step


def workflow_logprob(model: ModelConfig, sample: Sample,
                     workflow: tuple[Action, ...],
                     params: HeadParams, head_config: HeadConfig,
                     cfg: CdConfig,
                     prior: CooccurrencePrior | None = None,
                     expected_tokens: tuple[int, ...] | None = None,
                     collect_grads: bool = False
                     ) -> tuple[float, list[_StepGrad]]:
    """Head log-probability of a workflow, replaying its decode.

    When expected_tokens is given, each replayed token must match it;
    a mismatch raises DataIntegrityError. With collect_grads, also returns
    per-step traces and d(logp)/d(logits) for reverse mode.
    """
    history: tuple[int, ...] = (BOS,)
    logp = 0.0
    steps: list[_StepGrad] = []
    t = 0
    while t < model.max_len and slot_state(sample, history).kind != "done":
        if t >= len(workflow):
            raise InvalidArgumentError(
                "workflow shorter than the replayed decode")
        action = Action(workflow[t])
        hidden = encode(model, sample, history)
        logits, trace = head_forward(params, head_config, hidden.states)
        probs = softmax(logits)
        logp += float(np.log(probs[int(action)]))
        if collect_grads:
            d_logits = -probs
            d_logits[int(action)] += 1.0
            steps.append(_StepGrad(trace=trace, d_logits=d_logits))
        token, _ = decode_step(model, sample, history, action, cfg,
                               prior=prior)
        if expected_tokens is not None:
            if t >= len(expected_tokens) or token != expected_tokens[t]:
                raise DataIntegrityError(
                    f"replay mismatch for {sample.sample_id} at step {t}: "
                    f"emitted {token}, recorded "
                    f"{expected_tokens[t] if t < len(expected_tokens) else None}")
        history = history + (token,)
        t += 1
    if expected_tokens is not None and t != len(expected_tokens):
        raise DataIntegrityError(
            f"replay for {sample.sample_id} emitted {t} tokens, "
            f"recorded {len(expected_tokens)}")
    return logp, steps


def dpo_loss(logp_chosen: float, logp_rejected: float,
             beta: float) -> tuple[float, float]:
    """(loss, dloss/d_delta) with delta = beta * (chosen - rejected).

    Computed as softplus(-delta) for numerical stability.
    """
    delta = beta * (logp_chosen - logp_rejected)
    loss = float(np.logaddexp(0.0, -delta))
    sig = float(np.exp(-np.logaddexp(0.0, delta)))  # sigmoid(-delta)
    return loss, -sig  # d softplus(-delta) / d delta = -sigmoid(-delta)


def _pair_loss_and_grads(model: ModelConfig, sample: Sample,
                         pair: PreferencePair, params: HeadParams,
                         head_config: HeadConfig, cfg: CdConfig,
                         beta: float, prior: CooccurrencePrior | None,
                         want_grads: bool
                         ) -> tuple[float, bool, HeadParams | None]:
    lp_c, steps_c = workflow_logprob(
        model, sample, pair.chosen, params, head_config, cfg, prior=prior,
        expected_tokens=pair.chosen_tokens, collect_grads=want_grads)
    lp_r, steps_r = workflow_logprob(
        model, sample, pair.rejected, params, head_config, cfg, prior=prior,
        expected_tokens=pair.rejected_tokens, collect_grads=want_grads)
    loss, d_delta = dpo_loss(lp_c, lp_r, beta)
    if not want_grads:
        return loss, lp_c > lp_r, None
    grads: HeadParams | None = None
    for steps, sign in ((steps_c, 1.0), (steps_r, -1.0)):
        coef = d_delta * beta * sign
        for step in steps:
            g = head_backward(params, head_config, step.trace,
                              coef * step.d_logits)
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
    return loss, lp_c > lp_r, grads


@dataclass
class EpochStats:
    loss: float
    pref_accuracy: float  # fraction of pairs with logp(chosen) > logp(rejected)
    grad_norm: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)


def train(model: ModelConfig, samples: list[Sample],
          pairs: list[PreferencePair], head_config: HeadConfig,
          train_config: TrainConfig, cfg: CdConfig,
          prior: CooccurrencePrior | None = None,
          init_params: HeadParams | None = None
          ) -> tuple[HeadParams, TrainReport]:
    """Mini-batch Adam on the DPO objective. Fully deterministic."""
    if not pairs:
        raise InvalidArgumentError("train needs at least one preference pair")
    by_id = {s.sample_id: s for s in samples}
    for pair in pairs:
        if pair.sample_id not in by_id:
            raise DataIntegrityError(
                f"pair references unknown sample {pair.sample_id!r}")

    params = init_params if init_params is not None else init_head(
        head_config, seed=train_config.seed)
    vec = flatten_params(params, head_config)
    adam = AdamState(lr=train_config.lr, n_params=n_params(head_config))
    report = TrainReport()

    for epoch in range(train_config.epochs):
        rng = RngState(train_config.seed, f"train/epoch{epoch}")
        order = np.argsort(rng.uniform(len(pairs)), kind="stable")
        epoch_loss = 0.0
        epoch_correct = 0
        norms: list[float] = []
        for start in range(0, len(pairs), train_config.batch_size):
            batch = [pairs[i] for i in order[start:start + train_config.batch_size]]
            params = unflatten_params(vec, head_config)
            batch_grads = np.zeros_like(vec)
            for pair in batch:
                loss, correct, grads = _pair_loss_and_grads(
                    model, by_id[pair.sample_id], pair, params, head_config,
                    cfg, train_config.beta, prior, want_grads=True)
                epoch_loss += loss
                epoch_correct += int(correct)
                batch_grads += flatten_params(grads, head_config)
            batch_grads /= len(batch)
            norm = float(np.linalg.norm(batch_grads))
            norms.append(norm)
            if norm > train_config.grad_clip:
                batch_grads *= train_config.grad_clip / norm
            vec = adam_step(vec, batch_grads, adam)
        report.epochs.append(EpochStats(
            loss=epoch_loss / len(pairs),
            pref_accuracy=epoch_correct / len(pairs),
            grad_norm=float(np.mean(norms))))
    return unflatten_params(vec, head_config), report


def grad_check(model: ModelConfig, samples: list[Sample],
               pairs: list[PreferencePair], head_config: HeadConfig,
               cfg: CdConfig, beta: float = 1.0, seed: int = 0,
               n_coords: int = 40, h: float = 1e-4,
               prior: CooccurrencePrior | None = None) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not pairs:
        raise InvalidArgumentError("grad_check needs at least one pair")
    by_id = {s.sample_id: s for s in samples}
    params = init_head(head_config, seed=seed)
    vec = flatten_params(params, head_config)

    def total_loss(v: np.ndarray) -> float:
        p = unflatten_params(v, head_config)
        out = 0.0
        for pair in pairs:
            loss, _, _ = _pair_loss_and_grads(
                model, by_id[pair.sample_id], pair, p, head_config, cfg,
                beta, prior, want_grads=False)
            out += loss
        return out / len(pairs)

    analytic = np.zeros_like(vec)
    for pair in pairs:
        _, _, grads = _pair_loss_and_grads(
            model, by_id[pair.sample_id], pair, params, head_config, cfg,
            beta, prior, want_grads=True)
        analytic += flatten_params(grads, head_config)
    analytic /= len(pairs)

    coord_rng = RngState(seed, "gradcheck/coords")
    total = n_params(head_config)
    idx = sorted({int(coord_rng.integers(0, total))
                  for _ in range(n_coords)})
    worst = 0.0
    for i in idx:
        vp = vec.copy()
        vp[i] += h
        vm = vec.copy()
        vm[i] -= h
        fd = (total_loss(vp) - total_loss(vm)) / (2.0 * h)
        a = analytic[i]
        if max(abs(a), abs(fd)) < 1e-10:
            continue
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
        worst = max(worst, rel)
    return worst
