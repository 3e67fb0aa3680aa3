import numpy as np
import pytest

from octopus.errors import ContractViolation, InvalidStateError
from octopus.rng import RngState
from octopus.simulator import (ModelConfig, base_logits, distorted_stream,
                               encode, halluc_margin, image_features,
                               slot_state, visible_objects)
from octopus.world import (A, BOS, EOS, NO, YES, DESCRIBE_QUERY, Sample,
                           Scene, Vocab, WorldConfig, gen_dataset, gen_prior)

MODEL = ModelConfig()


def describe_sample(scene, sid="d000000"):
    return Sample(sample_id=sid, scene=scene, task="describe",
                  query_tokens=DESCRIBE_QUERY)


def exists_sample(scene, obj, sid="e000000"):
    label = "yes" if obj in scene.objects else "no"
    return Sample(sample_id=sid, scene=scene, task="exists",
                  query_tokens=(3, Vocab.object_token(obj)),
                  queried_object=obj, gold_label=label)


class TestEncode:
    def test_image_states_depend_only_on_scene(self):
        scene = Scene(0, (1, 2, 3), 7, "none")
        a = describe_sample(scene, "d000000")
        b = exists_sample(scene, 1, "e000000")
        ha = encode(MODEL, a, (BOS,))
        hb = encode(MODEL, b, (BOS,))
        np.testing.assert_array_equal(ha.states[:ha.n_image],
                                      hb.states[:hb.n_image])

    def test_blind_channel_activation_ratio(self):
        clean = Scene(1, (1, 2, 3), 7, "none")
        biased = Scene(1, (1, 2, 3), 7, "attn_bias")
        f_clean = image_features(MODEL, clean)
        f_biased = image_features(MODEL, biased)
        col = 24  # blind channel
        strong = np.abs(f_biased[:, col]) >= 4.0 * np.abs(f_clean[:, col])
        assert strong.sum() == 1

    def test_append_extends_by_one_state(self):
        scene = Scene(2, (4, 5, 6), 9, "none")
        s = describe_sample(scene)
        h1 = encode(MODEL, s, (BOS,))
        h2 = encode(MODEL, s, (BOS, A))
        assert len(h2) == len(h1) + 1
        np.testing.assert_array_equal(h2.states[:len(h1)], h1.states)

    def test_deterministic(self):
        scene = Scene(3, (0, 1, 2), 10, "vis_loss")
        s = describe_sample(scene)
        a = encode(MODEL, s, (BOS,)).states
        b = encode(MODEL, s, (BOS,)).states
        np.testing.assert_array_equal(a, b)


class TestSlotState:
    def test_describe_progression(self):
        scene = Scene(4, (0, 1, 2), 10, "none")
        s = describe_sample(scene)
        assert slot_state(s, (BOS,)).kind == "connector"
        assert slot_state(s, (BOS, A)).kind == "object"
        tok = Vocab.object_token(0)
        assert slot_state(s, (BOS, A, tok)).kind == "connector"
        assert slot_state(s, (BOS, A, tok, EOS)).kind == "done"
        assert slot_state(s, (BOS, A, tok)).mentioned == (0,)

    def test_exists_progression(self):
        scene = Scene(5, (0, 1, 2), 10, "none")
        s = exists_sample(scene, 0)
        assert slot_state(s, (BOS,)).kind == "answer"
        assert slot_state(s, (BOS, YES)).kind == "final"
        assert slot_state(s, (BOS, YES, EOS)).kind == "done"

    def test_requires_bos(self):
        scene = Scene(6, (0, 1, 2), 10, "none")
        with pytest.raises(InvalidStateError):
            slot_state(describe_sample(scene), (A,))


class TestBaseLogits:
    def test_components_reconstruct_base(self):
        ds = gen_dataset(WorldConfig(n_describe=10, n_exists=10), seed=3)
        for s in ds.samples:
            b = base_logits(MODEL, s, (BOS,), prior=ds.prior)
            w_v, w_l, w_b = b.weights
            rebuilt = b.g + w_v * b.v + w_l * b.l + w_b * b.b + b.noise
            np.testing.assert_array_equal(rebuilt, b.base)

    def test_length_guard(self):
        scene = Scene(7, (0, 1, 2), 10, "none")
        s = describe_sample(scene)
        history = (BOS,) + (A, Vocab.object_token(0)) * (MODEL.max_len // 2)
        with pytest.raises(InvalidStateError):
            base_logits(MODEL, s, history)

    def test_done_guard(self):
        scene = Scene(8, (0, 1, 2), 10, "none")
        s = describe_sample(scene)
        with pytest.raises(InvalidStateError):
            base_logits(MODEL, s, (BOS, EOS))

    def test_clean_exists_yes(self):
        ds = gen_dataset(WorldConfig(n_describe=0, n_exists=40), seed=6)
        for s in ds.samples:
            if s.scene.cause != "none" or s.gold_label != "yes":
                continue
            b = base_logits(MODEL, s, (BOS,), prior=ds.prior)
            assert b.base[YES] > b.base[NO]

    def test_prior_corruption_at_first_object_slot(self):
        from octopus.world import prior_set
        ds = gen_dataset(WorldConfig(n_describe=300, n_exists=0), seed=7)
        hit = 0
        total = 0
        for s in ds.samples:
            if s.scene.cause != "prior":
                continue
            total += 1
            b = base_logits(MODEL, s, (BOS, A), prior=ds.prior)
            pset = prior_set(s.scene.objects, ds.prior)
            if not pset:
                continue
            best_absent = max(b.base[Vocab.object_token(o)] for o in pset)
            worst_present = min(b.base[Vocab.object_token(o)]
                                for o in s.scene.objects)
            if best_absent > worst_present:
                hit += 1
        assert total > 20
        assert hit / total >= 0.9

    def test_s1_has_no_vision_component(self):
        scene = Scene(9, (0, 1, 2), 10, "none")
        s = describe_sample(scene)
        b = base_logits(MODEL, s, (BOS, A))
        # s1 = grammar + scaled prior + noise; subtracting those leaves
        # no object-evidence signal
        residual = b.s1 - b.g - MODEL.kappa * b.weights[1] * b.l
        assert np.abs(residual).max() < 10 * MODEL.sigma_eta

    def test_s3_doubles_bias_component(self):
        scene = Scene(10, (0, 1, 2), 10, "attn_bias")
        s = describe_sample(scene)
        b = base_logits(MODEL, s, (BOS, A))
        tok = Vocab.object_token(scene.blind_object)
        expected = (b.g[tok] + b.weights[1] * b.l[tok]
                    + MODEL.kappa * b.weights[2] * b.b[tok])
        assert abs(b.s3[tok] - expected) < 10 * MODEL.sigma_eta

    def test_distorted_stream_dispatch(self):
        scene = Scene(11, (0, 1, 2), 10, "none")
        b = base_logits(MODEL, describe_sample(scene), (BOS,))
        np.testing.assert_array_equal(distorted_stream(b, "s1"), b.s1)
        np.testing.assert_array_equal(distorted_stream(b, "s2"), b.s2)
        np.testing.assert_array_equal(distorted_stream(b, "s3"), b.s3)
        with pytest.raises(ContractViolation):
            distorted_stream(b, "null")


MATCHED_STRATEGY = {"prior": "s1", "vis_loss": "s2", "attn_bias": "s3"}


@pytest.fixture(scope="module")
def scenes_by_cause():
    ds = gen_dataset(WorldConfig(n_describe=800, n_exists=0), seed=13)
    by_cause = {c: [] for c in MATCHED_STRATEGY}
    for s in ds.samples:
        if s.scene.cause in by_cause and len(by_cause[s.scene.cause]) < 200:
            by_cause[s.scene.cause].append(s)
    return ds.prior, by_cause


class TestMarginProperties:
    """Matched strategies shrink the hallucination margin; mismatched do not."""

    MATCHED = MATCHED_STRATEGY

    def test_matched_margin_reduction(self, scenes_by_cause):
        prior, by_cause = scenes_by_cause
        for cause, matched in self.MATCHED.items():
            reduced = 0
            samples = by_cause[cause]
            assert len(samples) >= 150
            for s in samples:
                b = base_logits(MODEL, s, (BOS, A), prior=prior)
                cd = 2.0 * b.base - distorted_stream(b, matched)
                if (halluc_margin(cd, s.scene)
                        < halluc_margin(b.base, s.scene)):
                    reduced += 1
            assert reduced / len(samples) >= 0.9, cause

    def test_mismatched_reduction_strictly_smaller(self, scenes_by_cause):
        prior, by_cause = scenes_by_cause
        for cause, matched in self.MATCHED.items():
            for other in {"s1", "s2", "s3"} - {matched}:
                wins = 0
                samples = by_cause[cause]
                for s in samples:
                    b = base_logits(MODEL, s, (BOS, A), prior=prior)
                    base_m = halluc_margin(b.base, s.scene)
                    cd_m = halluc_margin(
                        2.0 * b.base - distorted_stream(b, matched), s.scene)
                    cd_o = halluc_margin(
                        2.0 * b.base - distorted_stream(b, other), s.scene)
                    if base_m - cd_m > base_m - cd_o:
                        wins += 1
                assert wins / len(samples) >= 0.7, (cause, other)


class TestVisibility:
    def test_only_vis_loss_drops(self):
        scene = Scene(12, (0, 1, 2, 3), 10, "none")
        assert visible_objects(MODEL, scene) == scene.objects

    def test_vis_loss_drop_rate(self):
        rng = RngState(21, "scenes")
        from octopus.world import gen_scene
        prior = gen_prior(0)
        total = dropped = 0
        for i in range(300):
            scene = gen_scene(rng, prior, {"vis_loss": 1.0}, scene_id=i)
            vis = visible_objects(MODEL, scene)
            total += len(scene.objects)
            dropped += len(scene.objects) - len(vis)
        assert abs(dropped / total - MODEL.dropout) < 0.05
