import math

import numpy as np
import pytest

from octopus.decoding import Action, CdConfig
from octopus.errors import DataIntegrityError, InvalidArgumentError
from octopus.head import HeadConfig, flatten_params, init_head
from octopus.preference import (build_pairs_discriminative,
                                build_pairs_generative)
from octopus.simulator import ModelConfig
from octopus.training import (TrainConfig, dpo_loss, grad_check, train,
                              workflow_logprob)
from octopus.world import WorldConfig, gen_dataset

MODEL = ModelConfig()
CFG = CdConfig()
HEAD = HeadConfig()


@pytest.fixture(scope="module")
def dataset():
    return gen_dataset(WorldConfig(n_describe=12, n_exists=12), seed=9)


@pytest.fixture(scope="module")
def pairs(dataset):
    describe = [s for s in dataset.samples if s.task == "describe"]
    exists = [s for s in dataset.samples if s.task == "exists"]
    out = build_pairs_generative(MODEL, describe, CFG, seed=2,
                                 prior=dataset.prior)
    out += build_pairs_discriminative(MODEL, exists, CFG, prior=dataset.prior)
    assert out
    return out


def uniform_head():
    params = init_head(HEAD, seed=0)
    params["head.w2"] = np.zeros_like(params["head.w2"])
    params["head.b2"] = np.zeros_like(params["head.b2"])
    return params


class TestWorkflowLogprob:
    def test_uniform_head_gives_minus_n_log4(self, dataset):
        params = uniform_head()
        sample = next(s for s in dataset.samples if s.task == "exists")
        workflow = (Action.NULL,) * MODEL.max_len
        logp, steps = workflow_logprob(MODEL, sample, workflow, params, HEAD,
                                       CFG, prior=dataset.prior)
        # exists decodes emit exactly an answer token and EOS
        assert logp == pytest.approx(-2 * math.log(4), abs=1e-9)
        assert steps == []

    def test_collect_grads_returns_per_step(self, dataset):
        params = init_head(HEAD, seed=1)
        sample = next(s for s in dataset.samples if s.task == "exists")
        workflow = (Action.S2,) * MODEL.max_len
        _, steps = workflow_logprob(MODEL, sample, workflow, params, HEAD,
                                    CFG, prior=dataset.prior,
                                    collect_grads=True)
        assert len(steps) == 2
        for step in steps:
            # d logp / d logits sums to zero: one-hot minus softmax
            assert abs(step.d_logits.sum()) < 1e-12

    def test_replay_mismatch_raises(self, dataset, pairs):
        by_id = {s.sample_id: s for s in dataset.samples}
        pair = pairs[0]
        params = init_head(HEAD, seed=0)
        wrong = tuple(t + 1 for t in pair.chosen_tokens)
        with pytest.raises(DataIntegrityError):
            workflow_logprob(MODEL, by_id[pair.sample_id], pair.chosen,
                             params, HEAD, CFG, prior=dataset.prior,
                             expected_tokens=wrong)

    def test_replay_length_mismatch_raises(self, dataset, pairs):
        by_id = {s.sample_id: s for s in dataset.samples}
        pair = pairs[0]
        params = init_head(HEAD, seed=0)
        with pytest.raises(DataIntegrityError):
            workflow_logprob(MODEL, by_id[pair.sample_id], pair.chosen,
                             params, HEAD, CFG, prior=dataset.prior,
                             expected_tokens=pair.chosen_tokens + (0,))


class TestDpoLoss:
    def test_indifference_point(self):
        loss, d = dpo_loss(0.0, 0.0, beta=1.0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        assert d == pytest.approx(-0.5, abs=1e-12)

    def test_large_positive_gap(self):
        loss, _ = dpo_loss(10.0, -10.0, beta=1.0)
        assert loss < 1e-8

    def test_large_negative_gap(self):
        loss, d = dpo_loss(-10.0, 10.0, beta=1.0)
        assert loss == pytest.approx(20.0, abs=1e-8)
        assert d == pytest.approx(-1.0, abs=1e-8)

    def test_shift_invariance(self):
        a = dpo_loss(-1.3, -2.9, beta=2.0)
        b = dpo_loss(-1.3 + 7.0, -2.9 + 7.0, beta=2.0)
        assert a == pytest.approx(b, abs=1e-12)

    def test_extreme_inputs_finite(self):
        for gap in (1e4, -1e4):
            loss, d = dpo_loss(gap, 0.0, beta=1.0)
            assert math.isfinite(loss) and math.isfinite(d)

    def test_derivative_matches_finite_difference(self):
        h = 1e-6
        for delta in (-3.0, -0.2, 0.0, 0.4, 5.0):
            lp, d = dpo_loss(delta, 0.0, beta=1.0)
            lp2, _ = dpo_loss(delta + h, 0.0, beta=1.0)
            lm, _ = dpo_loss(delta - h, 0.0, beta=1.0)
            assert d == pytest.approx((lp2 - lm) / (2 * h), abs=1e-6)


class TestTrain:
    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(lr=0.0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(beta=-1.0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(epochs=0)

    def test_empty_pairs_rejected(self, dataset):
        with pytest.raises(InvalidArgumentError):
            train(MODEL, dataset.samples, [], HEAD,
                  TrainConfig(epochs=1), CFG)

    def test_unknown_sample_rejected(self, dataset, pairs):
        import dataclasses
        bad = [dataclasses.replace(pairs[0], sample_id="d999999")]
        with pytest.raises(DataIntegrityError):
            train(MODEL, dataset.samples, bad, HEAD,
                  TrainConfig(epochs=1), CFG, prior=dataset.prior)

    def test_bit_deterministic(self, dataset, pairs):
        config = TrainConfig(epochs=2, seed=3)
        subset = pairs[:4]
        a, ra = train(MODEL, dataset.samples, subset, HEAD, config, CFG,
                      prior=dataset.prior)
        b, rb = train(MODEL, dataset.samples, subset, HEAD, config, CFG,
                      prior=dataset.prior)
        np.testing.assert_array_equal(flatten_params(a, HEAD),
                                      flatten_params(b, HEAD))
        assert [e.loss for e in ra.epochs] == [e.loss for e in rb.epochs]

    def test_single_pair_overfits(self, dataset, pairs):
        pair = next(p for p in pairs if p.chosen != p.rejected)
        config = TrainConfig(epochs=200, batch_size=1, lr=1e-2, seed=0)
        _, report = train(MODEL, dataset.samples, [pair], HEAD, config, CFG,
                          prior=dataset.prior)
        losses = [e.loss for e in report.epochs]
        assert losses[-1] < 0.05
        assert min(losses) == pytest.approx(losses[-1], abs=0.05)
        assert report.epochs[-1].pref_accuracy == 1.0

    def test_zero_gap_pair_has_zero_gradient(self, dataset):
        import dataclasses
        describe = [s for s in dataset.samples if s.task == "describe"]
        src = build_pairs_generative(MODEL, describe, CFG, seed=2,
                                     prior=dataset.prior)[0]
        degenerate = dataclasses.replace(
            src, rejected=src.chosen, rejected_tokens=src.chosen_tokens)
        config = TrainConfig(epochs=1, batch_size=1, seed=0)
        params, report = train(MODEL, dataset.samples, [degenerate], HEAD,
                               config, CFG, prior=dataset.prior)
        assert report.epochs[0].grad_norm < 1e-12
        assert report.epochs[0].loss == pytest.approx(math.log(2), abs=1e-12)


class TestGradCheck:
    def test_small_relative_error(self, dataset, pairs):
        err = grad_check(MODEL, dataset.samples, pairs[:2], HEAD, CFG,
                         seed=0, n_coords=25, prior=dataset.prior)
        assert err < 1e-4

    def test_empty_pairs_rejected(self, dataset):
        with pytest.raises(InvalidArgumentError):
            grad_check(MODEL, dataset.samples, [], HEAD, CFG)
