"""Synthetic universe: vocabulary, co-occurrence prior, scenes, datasets.

A scene is a tiny stand-in for an image: a set of 3-6 objects drawn from a
clustered co-occurrence prior, one off-scene "blind" distractor, and an
injected hallucination cause that the simulator turns into logit-level
corruption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError
from .rng import RngState

# ---------------------------------------------------------------------------
# Vocabulary

FUNCTION_TOKENS = ("<bos>", "<eos>", "a", "the", "and", "yes", "no", "<pad>")
BOS, EOS, A, THE, AND, YES, NO, PAD = range(8)

OBJECT_NOUNS = (
    # cluster 0: kitchen
    "cup", "plate", "fork", "knife", "bowl", "pan",
    # cluster 1: street
    "car", "bus", "bike", "sign", "lamp", "bench",
    # cluster 2: office
    "desk", "chair", "laptop", "phone", "book", "pen",
    # cluster 3: park
    "tree", "dog", "ball", "kite", "bird", "grass",
)

N_OBJECTS = 24
N_CLUSTERS = 4
CLUSTER_SIZE = 6
OBJECT_TOKEN_OFFSET = len(FUNCTION_TOKENS)

TOKENS = FUNCTION_TOKENS + OBJECT_NOUNS
VOCAB_SIZE = len(TOKENS)  # 32

CAUSES = ("none", "prior", "vis_loss", "attn_bias")


class Vocab:
    """Fixed 32-token vocabulary: 8 function tokens + 24 object nouns."""

    tokens = TOKENS
    size = VOCAB_SIZE
    object_range = (OBJECT_TOKEN_OFFSET, VOCAB_SIZE)

    @staticmethod
    def object_token(obj: int) -> int:
        return OBJECT_TOKEN_OFFSET + obj

    @staticmethod
    def token_object(token: int) -> int | None:
        """Object id for an object token, None for function tokens."""
        if token >= OBJECT_TOKEN_OFFSET:
            return token - OBJECT_TOKEN_OFFSET
        return None


def cluster_of(obj: int) -> int:
    return obj // CLUSTER_SIZE


def twin_of(obj: int) -> int:
    """Visually confusable partner of an object (pairs within a cluster)."""
    return obj ^ 1


# ---------------------------------------------------------------------------
# Co-occurrence prior

WITHIN_CLUSTER_P = 0.6
CROSS_CLUSTER_P = 0.05


@dataclass(frozen=True)
class CooccurrencePrior:
    matrix: np.ndarray  # (24, 24), symmetric, zero diagonal
    clusters: np.ndarray  # (24,) cluster assignment


@lru_cache(maxsize=8)
def gen_prior(seed: int = 0) -> CooccurrencePrior:
    """Block-structured co-occurrence matrix (deterministic for any seed)."""
    clusters = np.arange(N_OBJECTS) // CLUSTER_SIZE
    same = clusters[:, None] == clusters[None, :]
    m = np.where(same, WITHIN_CLUSTER_P, CROSS_CLUSTER_P)
    np.fill_diagonal(m, 0.0)
    return CooccurrencePrior(matrix=m, clusters=clusters)


def prior_set(objects: tuple[int, ...], prior: CooccurrencePrior,
              threshold: float = 0.3) -> set[int]:
    """Absent objects whose mean co-occurrence with the scene is >= threshold."""
    mean_p = prior.matrix[:, list(objects)].mean(axis=1)
    return {o for o in range(N_OBJECTS)
            if o not in objects and mean_p[o] >= threshold}


# ---------------------------------------------------------------------------
# Scenes and samples

@dataclass(frozen=True)
class Scene:
    scene_id: int
    objects: tuple[int, ...]  # object ids, 3-6 distinct
    blind_object: int  # off-scene distractor
    cause: str  # one of CAUSES

    def __post_init__(self):
        if not (3 <= len(self.objects) <= 6):
            raise InvalidArgumentError("scene must have 3-6 objects")
        if len(set(self.objects)) != len(self.objects):
            raise InvalidArgumentError("scene objects must be distinct")
        if self.blind_object in self.objects:
            raise InvalidArgumentError("blind object must not be in the scene")
        if self.cause not in CAUSES:
            raise InvalidArgumentError(f"unknown cause {self.cause!r}")


DESCRIBE_QUERY = (THE,)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    scene: Scene
    task: str  # "describe" | "exists"
    query_tokens: tuple[int, ...]
    queried_object: int | None = None
    gold_label: str | None = None  # "yes" | "no" for exists

    def __post_init__(self):
        if self.task not in ("describe", "exists"):
            raise InvalidArgumentError(f"unknown task {self.task!r}")
        if self.task == "exists":
            present = self.queried_object in self.scene.objects
            expected = "yes" if present else "no"
            if self.gold_label != expected:
                raise InvalidArgumentError(
                    "exists gold label inconsistent with scene membership")


def gen_scene(rng: RngState, prior: CooccurrencePrior,
              cause_mix: dict[str, float], scene_id: int = 0) -> Scene:
    """Draw one scene: cluster-biased anchor, co-occurrence-weighted companions."""
    probs = np.array([cause_mix.get(c, 0.0) for c in CAUSES])
    if abs(probs.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("cause_mix must sum to 1")

    n = rng.integers(3, 7)
    cluster = rng.integers(0, N_CLUSTERS)
    anchor = cluster * CLUSTER_SIZE + rng.integers(0, CLUSTER_SIZE)
    chosen = [anchor]
    while len(chosen) < n:
        weights = prior.matrix[:, chosen].sum(axis=1)
        weights[chosen] = 0.0
        chosen.append(rng.choice_weighted(weights))

    non_members = [o for o in range(N_OBJECTS) if o not in chosen]
    blind = non_members[rng.integers(0, len(non_members))]
    cause = CAUSES[rng.choice_weighted(probs)]
    return Scene(scene_id=scene_id, objects=tuple(sorted(chosen)),
                 blind_object=blind, cause=cause)


@dataclass(frozen=True)
class WorldConfig:
    n_describe: int
    n_exists: int
    cause_mix: tuple[tuple[str, float], ...] = tuple(
        (c, 0.25) for c in CAUSES)

    def mix_dict(self) -> dict[str, float]:
        return dict(self.cause_mix)


@dataclass
class Dataset:
    samples: list[Sample]
    prior: CooccurrencePrior = field(default_factory=gen_prior)
    seed: int = 0

    def __len__(self):
        return len(self.samples)


def _absent_query_weights(scene: Scene, prior: CooccurrencePrior) -> np.ndarray:
    """Hard-negative weighting for absent-object exists queries."""
    pset = prior_set(scene.objects, prior)
    weights = np.zeros(N_OBJECTS)
    for o in range(N_OBJECTS):
        if o in scene.objects:
            continue
        w = 0.5
        if o in pset:
            w = 2.0
        if any(twin_of(p) == o for p in scene.objects):
            w = 2.0
        if o == scene.blind_object:
            w = 3.0
        weights[o] = w
    return weights


def gen_dataset(config: WorldConfig, seed: int) -> Dataset:
    """Deterministic dataset of describe and exists samples."""
    prior = gen_prior(seed)
    scene_rng = RngState(seed, "world/scenes")
    query_rng = RngState(seed, "world/queries")
    mix = config.mix_dict()

    samples: list[Sample] = []
    scene_id = 0
    for i in range(config.n_describe):
        scene = gen_scene(scene_rng, prior, mix, scene_id=scene_id)
        scene_id += 1
        samples.append(Sample(
            sample_id=f"d{i:06d}", scene=scene, task="describe",
            query_tokens=DESCRIBE_QUERY))
    for i in range(config.n_exists):
        scene = gen_scene(scene_rng, prior, mix, scene_id=scene_id)
        scene_id += 1
        if i % 2 == 0:
            idx = query_rng.integers(0, len(scene.objects))
            obj = scene.objects[idx]
            label = "yes"
        else:
            obj = query_rng.choice_weighted(_absent_query_weights(scene, prior))
            label = "no"
        samples.append(Sample(
            sample_id=f"e{i:06d}", scene=scene, task="exists",
            query_tokens=(THE, Vocab.object_token(obj)),
            queried_object=obj, gold_label=label))
    return Dataset(samples=samples, prior=prior, seed=seed)


# ---------------------------------------------------------------------------
# JSONL serialization

def sample_to_record(s: Sample) -> dict:
    rec = {
        "sample_id": s.sample_id,
        "scene_id": s.scene.scene_id,
        "objects": list(s.scene.objects),
        "blind_object": s.scene.blind_object,
        "cause": s.scene.cause,
        "task": s.task,
        "query_tokens": list(s.query_tokens),
    }
    if s.task == "exists":
        rec["queried_object"] = s.queried_object
        rec["gold_label"] = s.gold_label
    return rec


def sample_from_record(rec: dict) -> Sample:
    scene = Scene(scene_id=rec["scene_id"], objects=tuple(rec["objects"]),
                  blind_object=rec["blind_object"], cause=rec["cause"])
    return Sample(
        sample_id=rec["sample_id"], scene=scene, task=rec["task"],
        query_tokens=tuple(rec["query_tokens"]),
        queried_object=rec.get("queried_object"),
        gold_label=rec.get("gold_label"))


def dataset_to_jsonl(dataset: Dataset) -> str:
    lines = [json.dumps(sample_to_record(s), sort_keys=True,
                        separators=(",", ":"))
             for s in dataset.samples]
    return "\n".join(lines) + ("\n" if lines else "")


def dataset_from_jsonl(text: str, seed: int = 0) -> Dataset:
    samples = [sample_from_record(json.loads(line))
               for line in text.splitlines() if line.strip()]
    return Dataset(samples=samples, prior=gen_prior(seed), seed=seed)
