"""Toy autoregressive vision-language model with injected hallucination causes.

Next-token logits decompose into four named components over the 32-token
vocabulary:

  G  grammar: enforces BOS ("a" obj)* EOS for describe, {yes,no} for exists,
     and blocks repeat mentions. Shared by every stream, so contrastive
     decoding (m - n = 1) always preserves it.
  V  vision: evidence for visible, not-yet-mentioned scene objects (plus a
     "blur" sub-part: under the vis_loss cause, evidence leaks onto each
     visible object's absent twin).
  L  language prior: co-occurrence mass toward objects related to the scene
     gist, the mentions so far, and the queried object.
  B  attention bias: spurious mass toward the scene's blind object.

The base stream is G + w_V (V_true + V_blur) + w_L L + w_B B + eta. The three
distorted streams are built so that, under Eq.-style contrast with
(m, n) = (2, 1), each strategy cancels exactly one corruption channel:

  s1 (noise image, query kept):   G + k w_L L            -> contrast kills L
  s2 (query masked, image kept):  G + k w_V V_blur
                                    + w_L Lbar + w_B B   -> contrast kills blur,
                                                            doubles V_true
  s3 (blind-token image):         G + w_L L + k w_B B    -> contrast kills B

with k = kappa = 2. Per-cause corruption weights are sized so that the two
mismatched strategies provably leave the hallucination in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .errors import ContractViolation, InvalidStateError
from .rng import RngState
from .world import (A, BOS, EOS, NO, YES, N_OBJECTS, Sample, Scene, Vocab,
                    VOCAB_SIZE, CooccurrencePrior, gen_prior, twin_of)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    n_image_tokens: int = 8
    max_len: int = 16
    sigma_eta: float = 0.05
    kappa: float = 2.0
    # clean component weights
    w_vision: float = 4.0
    w_prior: float = 1.0
    w_bias: float = 0.0
    # per-cause corruption
    prior_w_prior: float = 15.0
    visloss_w_vision: float = 1.0
    visloss_w_prior: float = 0.25
    attnbias_w_bias: float = 4.0
    # vis_loss artifacts
    blur: float = 1.5
    dropout: float = 0.3
    # bias channel
    blind_activation: float = 4.0
    blind_baseline: float = 0.1
    # prior scaling
    prior_scale: float = 1.0
    grammar_penalty: float = 50.0
    noise_seed: int = 0
    embed_seed: int = 0

    def weights_for(self, cause: str) -> tuple[float, float, float]:
        """(w_V, w_L, w_B) active for a scene with the given cause."""
        w_v, w_l, w_b = self.w_vision, self.w_prior, self.w_bias
        if cause == "prior":
            w_l = self.prior_w_prior
        elif cause == "vis_loss":
            w_v = self.visloss_w_vision
            w_l = self.visloss_w_prior
        elif cause == "attn_bias":
            w_b = self.attnbias_w_bias
        return w_v, w_l, w_b

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@lru_cache(maxsize=65536)
def visible_objects(model: ModelConfig, scene: Scene) -> tuple[int, ...]:
    """Scene objects the model can actually see (vis_loss drops some)."""
    if scene.cause != "vis_loss":
        return scene.objects
    out = []
    for o in scene.objects:
        u = RngState(model.noise_seed, f"dropout/{scene.scene_id}/{o}").uniform(1)[0]
        if u >= model.dropout:
            out.append(o)
    return tuple(out)


# ---------------------------------------------------------------------------
# Grammar state

@dataclass(frozen=True)
class SlotState:
    kind: str  # "connector" | "object" | "answer" | "final" | "done"
    mentioned: tuple[int, ...]  # object ids mentioned so far, in order


def slot_state(sample: Sample, history: tuple[int, ...]) -> SlotState:
    """Classify the next-token slot given the generated history (incl. BOS)."""
    if not history or history[0] != BOS:
        raise InvalidStateError("history must start with BOS")
    mentioned = tuple(o for t in history
                      if (o := Vocab.token_object(t)) is not None)
    if history[-1] == EOS:
        return SlotState("done", mentioned)
    if sample.task == "exists":
        if len(history) == 1:
            return SlotState("answer", mentioned)
        return SlotState("final", mentioned)
    if history[-1] == A:
        return SlotState("object", mentioned)
    return SlotState("connector", mentioned)


# ---------------------------------------------------------------------------
# Hidden states

# feature channel layout (d = 32)
_CH_BLIND = 24
_CH_PRIOR_GAIN = 25
_CH_VISION_GAIN = 26
_CH_QUERY_FLAG = 27
_CH_GEN_FLAG = 28
_CH_QUERY_MATCH = 29  # queried object visibly present (exists task)

_FEATURE_NOISE = 0.05


@dataclass
class HiddenSeq:
    states: np.ndarray  # (n, d)
    n_image: int
    n_query: int

    def __len__(self):
        return self.states.shape[0]


@lru_cache(maxsize=8)
def _embedding_table(model: ModelConfig) -> np.ndarray:
    rng = RngState(model.embed_seed, "embed")
    table = rng.gaussian(VOCAB_SIZE * model.d, 0.5).reshape(VOCAB_SIZE, model.d)
    table[:, _CH_BLIND:_CH_QUERY_MATCH + 1] = 0.0
    return table


@lru_cache(maxsize=4096)
def image_features(model: ModelConfig, scene: Scene) -> np.ndarray:
    """Per-scene image-token states, scaled by the active corruption weights."""
    w_v, w_l, w_b = model.weights_for(scene.cause)
    visible = set(visible_objects(model, scene))
    feats = np.zeros((model.n_image_tokens, model.d))
    for j, o in enumerate(scene.objects[:6]):
        feats[j, o] = w_v if o in visible else 0.0
    blind_act = model.blind_baseline + w_b * model.blind_activation
    feats[-1, scene.blind_object] = blind_act
    feats[-1, _CH_BLIND] = blind_act
    feats[:, _CH_PRIOR_GAIN] = w_l
    feats[:, _CH_VISION_GAIN] = w_v
    noise = RngState(model.noise_seed, f"feat/{scene.scene_id}")
    feats += noise.gaussian(feats.size, _FEATURE_NOISE).reshape(feats.shape)
    return feats


def encode(model: ModelConfig, sample: Sample,
           history: tuple[int, ...]) -> HiddenSeq:
    """Hidden states for [image tokens] + [query tokens] + [generated tokens]."""
    table = _embedding_table(model)
    img = image_features(model, sample.scene)
    query = table[list(sample.query_tokens)].copy()
    query[:, _CH_QUERY_FLAG] = 1.0
    if (sample.queried_object is not None
            and sample.queried_object in visible_objects(model, sample.scene)):
        query[:, _CH_QUERY_MATCH] = 1.0
    if history:
        gen = table[list(history)].copy()
        gen[:, _CH_GEN_FLAG] = 1.0
        states = np.concatenate([img, query, gen], axis=0)
    else:
        states = np.concatenate([img, query], axis=0)
    return HiddenSeq(states=states, n_image=img.shape[0],
                     n_query=query.shape[0])


# ---------------------------------------------------------------------------
# Logits

@dataclass
class LogitBundle:
    base: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    g: np.ndarray
    v: np.ndarray  # v_true + v_blur
    v_blur: np.ndarray
    l: np.ndarray
    b: np.ndarray
    noise: np.ndarray  # eta added to the base stream
    weights: tuple[float, float, float]  # (w_V, w_L, w_B)


def _noise(model: ModelConfig, sample: Sample, t: int, tag: str) -> np.ndarray:
    rng = RngState(model.noise_seed, f"noise/{sample.sample_id}/{t}/{tag}")
    return rng.gaussian(VOCAB_SIZE, model.sigma_eta)


def base_logits(model: ModelConfig, sample: Sample,
                history: tuple[int, ...],
                prior: CooccurrencePrior | None = None) -> LogitBundle:
    """Base and distorted next-token logit streams for one decode step."""
    if len(history) - 1 >= model.max_len:
        raise InvalidStateError("history exceeds maximum decode length")
    if prior is None:
        prior = gen_prior()
    scene = sample.scene
    state = slot_state(sample, history)
    if state.kind == "done":
        raise InvalidStateError("sequence already ended with EOS")

    w_v, w_l, w_b = model.weights_for(scene.cause)
    pen = model.grammar_penalty
    visible = [o for o in visible_objects(model, scene)
               if o not in state.mentioned]

    g = np.full(VOCAB_SIZE, -pen)
    v_true = np.zeros(VOCAB_SIZE)
    v_blur = np.zeros(VOCAB_SIZE)
    l_vec = np.zeros(VOCAB_SIZE)
    l_bar = np.zeros(VOCAB_SIZE)
    b_vec = np.zeros(VOCAB_SIZE)
    b_vec[Vocab.object_token(scene.blind_object)] = model.blind_activation

    if state.kind == "connector":
        g[A] = 0.0
        g[EOS] = 0.0
        v_true[A if visible else EOS] = 1.0
    elif state.kind == "object":
        ctx = set(scene.objects) | set(state.mentioned)
        if sample.queried_object is not None:
            ctx.add(sample.queried_object)
        ctx_bar = ctx - ({sample.queried_object}
                         if sample.queried_object is not None else set())
        p_sum = prior.matrix[:, sorted(ctx)].sum(axis=1)
        p_sum_bar = prior.matrix[:, sorted(ctx_bar)].sum(axis=1)
        for o in range(N_OBJECTS):
            tok = Vocab.object_token(o)
            if o not in state.mentioned:
                g[tok] = 0.0
            l_vec[tok] = model.prior_scale * p_sum[o]
            l_bar[tok] = model.prior_scale * p_sum_bar[o]
        for o in visible:
            v_true[Vocab.object_token(o)] = 1.0
            if scene.cause == "vis_loss":
                t = twin_of(o)
                if t not in scene.objects and t not in state.mentioned:
                    v_blur[Vocab.object_token(t)] = model.blur
    elif state.kind == "answer":
        g[YES] = 0.0
        g[NO] = 0.0
        q = sample.queried_object
        seen = q in visible_objects(model, scene)
        v_true[YES if seen else NO] = 1.0
        if (scene.cause == "vis_loss" and q not in scene.objects
                and twin_of(q) in visible_objects(model, scene)):
            v_blur[YES] = model.blur
        l_vec[YES] = model.prior_scale * prior.matrix[q, list(scene.objects)].max()
        if q == scene.blind_object:
            b_vec_yes = np.zeros(VOCAB_SIZE)
            b_vec_yes[YES] = model.blind_activation
            b_vec = b_vec_yes
        else:
            b_vec = np.zeros(VOCAB_SIZE)
        # lbar: query masked -> no yes-pressure
    else:  # final slot of an exists answer
        g[EOS] = 0.0
        b_vec = np.zeros(VOCAB_SIZE)

    t = len(history)
    eta = _noise(model, sample, t, "base")
    v = v_true + v_blur
    base = g + w_v * v + w_l * l_vec + w_b * b_vec + eta
    s1 = g + model.kappa * w_l * l_vec + _noise(model, sample, t, "s1")
    s2 = (g + model.kappa * w_v * v_blur + w_l * l_bar + w_b * b_vec
          + _noise(model, sample, t, "s2"))
    s3 = (g + w_l * l_vec + model.kappa * w_b * b_vec
          + _noise(model, sample, t, "s3"))
    return LogitBundle(base=base, s1=s1, s2=s2, s3=s3, g=g, v=v,
                       v_blur=v_blur, l=l_vec, b=b_vec, noise=eta,
                       weights=(w_v, w_l, w_b))


def distorted_stream(bundle: LogitBundle, strategy: str) -> np.ndarray:
    """Pre-computed distorted stream for strategy in {'s1','s2','s3'}."""
    if strategy == "s1":
        return bundle.s1
    if strategy == "s2":
        return bundle.s2
    if strategy == "s3":
        return bundle.s3
    raise ContractViolation(f"no distorted stream for {strategy!r}")


def halluc_margin(logits: np.ndarray, scene: Scene) -> float:
    """max absent-object logit minus max present-object logit."""
    present = [Vocab.object_token(o) for o in scene.objects]
    absent = [Vocab.object_token(o) for o in range(N_OBJECTS)
              if o not in scene.objects]
    return float(logits[absent].max() - logits[present].max())
