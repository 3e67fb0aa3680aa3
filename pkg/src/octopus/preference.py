"""Preference-pair construction from exploratory decoding rollouts.

For generative samples we draw random per-step action workflows, score each
decode under a hallucination-aware criterion, and pair the best rollout
against the worst (ties dropped). For discriminative samples we decode once
under each single-action workflow and pair a confident correct answer against
an incorrect (or less confident) one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .decoding import Action, CdConfig, run_workflow, step_logits
from .errors import InvalidArgumentError
from .metrics import parse_mentions
from .rng import RngState
from .simulator import ModelConfig, base_logits
from .tensor import softmax
from .world import BOS, YES, CooccurrencePrior, Sample

CRITERIA = ("chair", "cover", "average")

DEFAULT_N_ROLLOUTS = 10


@dataclass(frozen=True)
class Rollout:
    workflow: tuple[Action, ...]
    tokens: tuple[int, ...]
    score: float  # higher is better under the chosen criterion


@dataclass(frozen=True)
class PreferencePair:
    sample_id: str
    task: str  # "describe" | "exists"
    chosen: tuple[Action, ...]
    rejected: tuple[Action, ...]
    chosen_tokens: tuple[int, ...]  # decode replays must reproduce these
    rejected_tokens: tuple[int, ...]
    chosen_score: float
    rejected_score: float
    criterion: str


def score_rollout(sample: Sample, tokens: tuple[int, ...],
                  criterion: str) -> float:
    """Per-response quality score; higher is always better.

    chair: negated per-response hallucinated-mention fraction.
    cover: fraction of scene objects mentioned.
    average: mean of the two.
    """
    if criterion not in CRITERIA:
        raise InvalidArgumentError(f"unknown criterion {criterion!r}")
    mentions = parse_mentions(tokens)
    halluc = sum(1 for m in mentions if m not in sample.scene.objects)
    chair = halluc / len(mentions) if mentions else 0.0
    cover = (len(set(mentions) & set(sample.scene.objects))
             / len(sample.scene.objects))
    if criterion == "chair":
        return -chair
    if criterion == "cover":
        return cover
    return (cover - chair) / 2.0


def sample_rollouts(model: ModelConfig, sample: Sample, cfg: CdConfig,
                    seed: int, n_rollouts: int = DEFAULT_N_ROLLOUTS,
                    criterion: str = "chair",
                    prior: CooccurrencePrior | None = None) -> list[Rollout]:
    """Decode n_rollouts uniformly random workflows for one sample."""
    if n_rollouts < 1:
        raise InvalidArgumentError("need n_rollouts >= 1")
    rng = RngState(seed, f"prefs/{sample.sample_id}")
    rollouts: list[Rollout] = []
    for _ in range(n_rollouts):
        workflow = tuple(Action(a)
                         for a in rng.integers(0, 4, model.max_len))
        result = run_workflow(model, sample, workflow, cfg, prior=prior)
        rollouts.append(Rollout(
            workflow=workflow, tokens=result.tokens,
            score=score_rollout(sample, result.tokens, criterion)))
    return rollouts


def build_pairs_generative(model: ModelConfig, samples: list[Sample],
                           cfg: CdConfig, seed: int,
                           n_rollouts: int = DEFAULT_N_ROLLOUTS,
                           criterion: str = "chair",
                           prior: CooccurrencePrior | None = None
                           ) -> list[PreferencePair]:
    """Best-vs-worst rollout per describe sample; score ties are dropped."""
    pairs: list[PreferencePair] = []
    for sample in samples:
        if sample.task != "describe":
            raise InvalidArgumentError(
                f"{sample.sample_id} is not a describe sample")
        rollouts = sample_rollouts(model, sample, cfg, seed,
                                   n_rollouts=n_rollouts,
                                   criterion=criterion, prior=prior)
        scores = [r.score for r in rollouts]
        best = rollouts[int(np.argmax(scores))]
        worst = rollouts[int(np.argmin(scores))]
        if best.score == worst.score:
            continue
        pairs.append(PreferencePair(
            sample_id=sample.sample_id, task="describe",
            chosen=best.workflow, rejected=worst.workflow,
            chosen_tokens=best.tokens, rejected_tokens=worst.tokens,
            chosen_score=best.score, rejected_score=worst.score,
            criterion=criterion))
    return pairs


def _answer_confidence(model: ModelConfig, sample: Sample, action: Action,
                       cfg: CdConfig, prior: CooccurrencePrior | None
                       ) -> tuple[str, float, tuple[int, ...]]:
    """(predicted label, emitted-token softmax probability, full tokens)."""
    bundle = base_logits(model, sample, (BOS,), prior=prior)
    logits = step_logits(bundle, action, cfg)
    token = int(np.argmax(logits))
    prob = float(softmax(logits)[token])
    result = run_workflow(model, sample, (action,) * model.max_len, cfg,
                          prior=prior)
    return ("yes" if token == YES else "no"), prob, result.tokens


def build_pairs_discriminative(model: ModelConfig, samples: list[Sample],
                               cfg: CdConfig,
                               prior: CooccurrencePrior | None = None
                               ) -> list[PreferencePair]:
    """Pair single-action answers: confident-correct vs incorrect.

    The chosen side is the correct answer with the highest confidence. The
    rejected side is the incorrect answer with the lowest confidence, or the
    least confident correct answer when every action answers correctly.
    Samples no action answers correctly are skipped.
    """
    pairs: list[PreferencePair] = []
    for sample in samples:
        if sample.task != "exists":
            raise InvalidArgumentError(
                f"{sample.sample_id} is not an exists sample")
        entries = []
        for action in Action:
            label, prob, tokens = _answer_confidence(model, sample, action,
                                                     cfg, prior)
            entries.append((action, label == sample.gold_label, prob, tokens))
        correct = [e for e in entries if e[1]]
        incorrect = [e for e in entries if not e[1]]
        if not correct:
            continue
        chosen = max(correct, key=lambda e: e[2])
        if incorrect:
            rejected = min(incorrect, key=lambda e: e[2])
        else:
            rejected = min(correct, key=lambda e: e[2])
            if rejected[0] == chosen[0]:
                continue
        wf_len = len(chosen[3])  # answer token + EOS
        pairs.append(PreferencePair(
            sample_id=sample.sample_id, task="exists",
            chosen=(chosen[0],) * wf_len,
            rejected=(rejected[0],) * len(rejected[3]),
            chosen_tokens=chosen[3], rejected_tokens=rejected[3],
            chosen_score=chosen[2], rejected_score=rejected[2],
            criterion="confidence"))
    return pairs


# ---------------------------------------------------------------------------
# JSONL serialization

def pair_to_record(pair: PreferencePair) -> dict:
    return {
        "sample_id": pair.sample_id,
        "task": pair.task,
        "chosen": [int(a) for a in pair.chosen],
        "rejected": [int(a) for a in pair.rejected],
        "chosen_tokens": list(pair.chosen_tokens),
        "rejected_tokens": list(pair.rejected_tokens),
        "chosen_score": pair.chosen_score,
        "rejected_score": pair.rejected_score,
        "criterion": pair.criterion,
    }


def pair_from_record(rec: dict) -> PreferencePair:
    return PreferencePair(
        sample_id=rec["sample_id"], task=rec["task"],
        chosen=tuple(Action(a) for a in rec["chosen"]),
        rejected=tuple(Action(a) for a in rec["rejected"]),
        chosen_tokens=tuple(rec["chosen_tokens"]),
        rejected_tokens=tuple(rec["rejected_tokens"]),
        chosen_score=rec["chosen_score"],
        rejected_score=rec["rejected_score"],
        criterion=rec["criterion"])


def pairs_to_jsonl(pairs: list[PreferencePair]) -> str:
    lines = [json.dumps(pair_to_record(p), sort_keys=True,
                        separators=(",", ":")) for p in pairs]
    return "\n".join(lines) + ("\n" if lines else "")


def pairs_from_jsonl(text: str) -> list[PreferencePair]:
    return [pair_from_record(json.loads(line))
            for line in text.splitlines() if line.strip()]
