import numpy as np
import pytest

from octopus.errors import InvalidArgumentError
from octopus.rng import RngState
from octopus.world import (CAUSES, CLUSTER_SIZE, N_OBJECTS, Sample, Scene,
                           WorldConfig, cluster_of, dataset_from_jsonl,
                           dataset_to_jsonl, gen_dataset, gen_prior,
                           gen_scene, prior_set, twin_of, Vocab,
                           OBJECT_TOKEN_OFFSET, VOCAB_SIZE)


class TestPrior:
    def test_symmetric_zero_diagonal(self):
        p = gen_prior(0)
        np.testing.assert_array_equal(p.matrix, p.matrix.T)
        np.testing.assert_array_equal(np.diag(p.matrix), np.zeros(N_OBJECTS))

    def test_cluster_values(self):
        p = gen_prior(0)
        assert p.matrix[0, 1] == 0.6  # same cluster
        assert p.matrix[0, CLUSTER_SIZE] == 0.05  # different clusters

    def test_deterministic(self):
        np.testing.assert_array_equal(gen_prior(3).matrix, gen_prior(3).matrix)

    def test_prior_set_nonempty_for_clustered_scene(self):
        p = gen_prior(0)
        pset = prior_set((0, 1, 2), p)
        assert pset == {3, 4, 5}  # remaining kitchen objects


class TestSceneGen:
    def test_pure_cause_mix(self):
        rng = RngState(0, "scenes")
        prior = gen_prior(0)
        for i in range(20):
            s = gen_scene(rng, prior, {"none": 1.0}, scene_id=i)
            assert s.cause == "none"

    def test_cause_frequencies(self):
        rng = RngState(1, "scenes")
        prior = gen_prior(0)
        mix = {c: 0.25 for c in CAUSES}
        counts = {c: 0 for c in CAUSES}
        for i in range(1000):
            counts[gen_scene(rng, prior, mix, scene_id=i).cause] += 1
        for c in CAUSES:
            assert abs(counts[c] / 1000 - 0.25) < 0.05

    def test_blind_object_outside_scene(self):
        rng = RngState(2, "scenes")
        prior = gen_prior(0)
        mix = {c: 0.25 for c in CAUSES}
        for i in range(200):
            s = gen_scene(rng, prior, mix, scene_id=i)
            assert s.blind_object not in s.objects
            assert 3 <= len(s.objects) <= 6

    def test_bad_mix_rejected(self):
        with pytest.raises(InvalidArgumentError):
            gen_scene(RngState(0, "s"), gen_prior(0), {"none": 0.5})


class TestSceneSampleValidation:
    def test_scene_size_bounds(self):
        with pytest.raises(InvalidArgumentError):
            Scene(0, (1, 2), 5, "none")
        with pytest.raises(InvalidArgumentError):
            Scene(0, (1, 2, 3, 4, 5, 6, 7), 10, "none")

    def test_blind_in_scene_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Scene(0, (1, 2, 3), 2, "none")

    def test_unknown_cause_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Scene(0, (1, 2, 3), 5, "blur")

    def test_exists_label_consistency(self):
        scene = Scene(0, (1, 2, 3), 5, "none")
        with pytest.raises(InvalidArgumentError):
            Sample("e0", scene, "exists", (3, 9), queried_object=1,
                   gold_label="no")


class TestDataset:
    def test_empty(self):
        ds = gen_dataset(WorldConfig(n_describe=0, n_exists=0), seed=0)
        assert len(ds) == 0
        assert dataset_to_jsonl(ds) == ""

    def test_balanced_exists_labels(self):
        ds = gen_dataset(WorldConfig(n_describe=0, n_exists=100), seed=0)
        labels = [s.gold_label for s in ds.samples]
        assert labels.count("yes") == 50
        assert labels.count("no") == 50

    def test_deterministic_serialization(self):
        cfg = WorldConfig(n_describe=20, n_exists=20)
        a = dataset_to_jsonl(gen_dataset(cfg, seed=9))
        b = dataset_to_jsonl(gen_dataset(cfg, seed=9))
        assert a == b

    def test_roundtrip(self):
        ds = gen_dataset(WorldConfig(n_describe=10, n_exists=10), seed=4)
        back = dataset_from_jsonl(dataset_to_jsonl(ds), seed=4)
        assert back.samples == ds.samples

    def test_invariants_sweep(self):
        ds = gen_dataset(WorldConfig(n_describe=50, n_exists=50), seed=5)
        for s in ds.samples:
            assert s.scene.blind_object not in s.scene.objects
            assert s.scene.cause in CAUSES
            if s.task == "exists":
                present = s.queried_object in s.scene.objects
                assert s.gold_label == ("yes" if present else "no")


class TestVocab:
    def test_size(self):
        assert VOCAB_SIZE == 32
        assert Vocab.size == 32

    def test_object_token_roundtrip(self):
        for o in range(N_OBJECTS):
            assert Vocab.token_object(Vocab.object_token(o)) == o
        assert Vocab.token_object(0) is None
        assert Vocab.token_object(OBJECT_TOKEN_OFFSET - 1) is None

    def test_twins_are_within_cluster(self):
        for o in range(N_OBJECTS):
            assert twin_of(twin_of(o)) == o
            assert cluster_of(twin_of(o)) == cluster_of(o)
