"""Hallucination and discrimination metrics over decoded responses.

Generative metrics follow the CHAIR convention: chair_s is the fraction of
responses containing at least one absent-object mention, chair_i is the
fraction of all object mentions that are absent. cover is the mean fraction
of scene objects mentioned; cog is the fraction of mentions that are
prior-consistent hallucinations (absent objects from the scene's
high-co-occurrence set).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidArgumentError
from .world import CooccurrencePrior, Sample, Vocab, gen_prior, prior_set


def parse_mentions(tokens: tuple[int, ...]) -> list[int]:
    """Object ids mentioned in a decoded token sequence, in order."""
    return [o for t in tokens if (o := Vocab.token_object(t)) is not None]


@dataclass(frozen=True)
class GenMetrics:
    chair_s: float  # responses with >= 1 hallucinated mention
    chair_i: float  # hallucinated mentions / all mentions (pooled)
    cover: float  # mean fraction of scene objects mentioned
    hal: float  # alias of chair_s (response-level hallucination rate)
    cog: float  # prior-consistent hallucinated mentions / all mentions
    n_responses: int
    n_mentions: int


def gen_metrics(samples: list[Sample], responses: list[tuple[int, ...]],
                prior: CooccurrencePrior | None = None) -> GenMetrics:
    """Aggregate generative metrics for (sample, decoded tokens) pairs."""
    if not samples:
        raise InvalidArgumentError("gen_metrics needs at least one response")
    if len(samples) != len(responses):
        raise InvalidArgumentError(
            f"{len(samples)} samples vs {len(responses)} responses")
    if prior is None:
        prior = gen_prior()

    n_halluc_responses = 0
    n_mentions = 0
    n_halluc_mentions = 0
    n_cog_mentions = 0
    cover_sum = 0.0
    for sample, tokens in zip(samples, responses):
        scene = sample.scene
        mentions = parse_mentions(tokens)
        halluc = [m for m in mentions if m not in scene.objects]
        pset = prior_set(scene.objects, prior)
        n_mentions += len(mentions)
        n_halluc_mentions += len(halluc)
        n_cog_mentions += sum(1 for m in halluc if m in pset)
        if halluc:
            n_halluc_responses += 1
        cover_sum += len(set(mentions) & set(scene.objects)) / len(scene.objects)

    chair_s = n_halluc_responses / len(samples)
    return GenMetrics(
        chair_s=chair_s,
        chair_i=n_halluc_mentions / n_mentions if n_mentions else 0.0,
        cover=cover_sum / len(samples),
        hal=chair_s,
        cog=n_cog_mentions / n_mentions if n_mentions else 0.0,
        n_responses=len(samples),
        n_mentions=n_mentions,
    )


@dataclass(frozen=True)
class DiscMetrics:
    accuracy: float
    precision: float  # "yes" is the positive class
    recall: float
    f1: float
    n: int


def disc_metrics(gold: list[str], predicted: list[str]) -> DiscMetrics:
    """Binary yes/no metrics; f1 is 0 when precision + recall is 0."""
    if not gold:
        raise InvalidArgumentError("disc_metrics needs at least one sample")
    if len(gold) != len(predicted):
        raise InvalidArgumentError(
            f"{len(gold)} gold labels vs {len(predicted)} predictions")
    for lab in (*gold, *predicted):
        if lab not in ("yes", "no"):
            raise InvalidArgumentError(f"labels must be yes/no, got {lab!r}")

    tp = sum(1 for g, p in zip(gold, predicted) if g == "yes" and p == "yes")
    fp = sum(1 for g, p in zip(gold, predicted) if g == "no" and p == "yes")
    fn = sum(1 for g, p in zip(gold, predicted) if g == "yes" and p == "no")
    correct = sum(1 for g, p in zip(gold, predicted) if g == p)
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if (precision + recall) else 0.0)
    return DiscMetrics(accuracy=correct / len(gold), precision=precision,
                       recall=recall, f1=f1, n=len(gold))
