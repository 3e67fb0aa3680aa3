"""Contrastive decoding: the four-action space and workflow-driven loops.

Decoding is greedy everywhere (argmax with lowest-index tie-breaking), so
every run is exactly reproducible from (model, sample, workflow | head).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import InvalidArgumentError
from .simulator import (HiddenSeq, LogitBundle, ModelConfig, base_logits,
                        distorted_stream, encode, slot_state)
from .world import BOS, EOS, CooccurrencePrior, Sample


class Action(IntEnum):
    NULL = 0
    S1 = 1  # noise-image contrast (counters language priors)
    S2 = 2  # query-mask contrast (counters visual information loss)
    S3 = 3  # blind-token contrast (counters attention bias)


N_ACTIONS = len(Action)

_STREAM_NAME = {Action.S1: "s1", Action.S2: "s2", Action.S3: "s3"}


@dataclass(frozen=True)
class CdConfig:
    """Contrast hyperparameters with m = 1 + alpha, n = alpha (so m - n = 1)."""

    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidArgumentError(f"need alpha >= 0, got {self.alpha}")

    @property
    def m(self) -> float:
        return 1.0 + self.alpha

    @property
    def n(self) -> float:
        return self.alpha


Workflow = tuple[Action, ...]


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]  # generated tokens after BOS, ending at EOS or cap
    actions: tuple[Action, ...]  # one per generated token
    margins: tuple[float, ...]  # chosen-vs-runner-up logit gap per step
    hidden: HiddenSeq  # full final hidden sequence; prefixes are the snapshots

    def snapshot(self, t: int) -> np.ndarray:
        """Hidden states the policy saw before emitting token t (0-based)."""
        n = self.hidden.n_image + self.hidden.n_query + 1 + t
        return self.hidden.states[:n]


def contrast(base: np.ndarray, distorted: np.ndarray,
             cfg: CdConfig) -> np.ndarray:
    """m * base - n * distorted, elementwise."""
    base = np.asarray(base, dtype=np.float64)
    distorted = np.asarray(distorted, dtype=np.float64)
    if base.shape != distorted.shape:
        raise InvalidArgumentError(
            f"stream length mismatch: {base.shape} vs {distorted.shape}")
    return cfg.m * base - cfg.n * distorted


def step_logits(bundle: LogitBundle, action: Action,
                cfg: CdConfig) -> np.ndarray:
    if action == Action.NULL:
        return bundle.base
    return contrast(bundle.base, distorted_stream(bundle, _STREAM_NAME[action]), cfg)


def decode_step(model: ModelConfig, sample: Sample, history: tuple[int, ...],
                action: Action, cfg: CdConfig,
                prior: CooccurrencePrior | None = None) -> tuple[int, float]:
    """Greedy next token under one action. Returns (token, top-2 margin)."""
    bundle = base_logits(model, sample, history, prior=prior)
    logits = step_logits(bundle, action, cfg)
    token = int(np.argmax(logits))  # argmax takes the lowest index on ties
    runner_up = np.partition(logits, -2)[-2]
    return token, float(logits[token] - runner_up)


def run_workflow(model: ModelConfig, sample: Sample, workflow: Workflow,
                 cfg: CdConfig,
                 prior: CooccurrencePrior | None = None) -> DecodeResult:
    """Decode applying workflow[t] at step t; stops at EOS or max length."""
    history: tuple[int, ...] = (BOS,)
    tokens: list[int] = []
    actions: list[Action] = []
    margins: list[float] = []
    while len(tokens) < model.max_len:
        if slot_state(sample, history).kind == "done":
            break
        t = len(tokens)
        if t >= len(workflow):
            raise InvalidArgumentError(
                "workflow shorter than emitted length; pad with Action.NULL")
        action = Action(workflow[t])
        token, margin = decode_step(model, sample, history, action, cfg,
                                    prior=prior)
        tokens.append(token)
        actions.append(action)
        margins.append(margin)
        history = history + (token,)
    hidden = encode(model, sample, history)
    return DecodeResult(tokens=tuple(tokens), actions=tuple(actions),
                        margins=tuple(margins), hidden=hidden)


def decode_with_policy(model: ModelConfig, sample: Sample, head_params,
                       head_config, cfg: CdConfig,
                       prior: CooccurrencePrior | None = None
                       ) -> tuple[DecodeResult, Workflow]:
    """Decode choosing each step's action with the decision head."""
    from .head import head_forward, select_action

    if head_config.d != model.d:
        raise InvalidArgumentError(
            f"head dimension {head_config.d} != model dimension {model.d}")
    history: tuple[int, ...] = (BOS,)
    tokens: list[int] = []
    actions: list[Action] = []
    margins: list[float] = []
    while len(tokens) < model.max_len:
        if slot_state(sample, history).kind == "done":
            break
        h_t = encode(model, sample, history)
        logits, _ = head_forward(head_params, head_config, h_t.states)
        action = select_action(logits)
        token, margin = decode_step(model, sample, history, action, cfg,
                                    prior=prior)
        tokens.append(token)
        actions.append(action)
        margins.append(margin)
        history = history + (token,)
    hidden = encode(model, sample, history)
    result = DecodeResult(tokens=tuple(tokens), actions=tuple(actions),
                          margins=tuple(margins), hidden=hidden)
    return result, tuple(actions)
