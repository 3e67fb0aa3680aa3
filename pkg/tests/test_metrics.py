import pytest

from octopus.errors import InvalidArgumentError
from octopus.metrics import (disc_metrics, gen_metrics, parse_mentions)
from octopus.world import (A, BOS, EOS, DESCRIBE_QUERY, Sample, Scene, Vocab,
                           gen_prior)


def tok(o):
    return Vocab.object_token(o)


def sample_for(objects, blind=23, cause="none", sid="d000000"):
    if blind in objects:
        blind = next(o for o in range(24) if o not in objects)
    return Sample(sample_id=sid, scene=Scene(0, tuple(objects), blind, cause),
                  task="describe", query_tokens=DESCRIBE_QUERY)


class TestParseMentions:
    def test_basic(self):
        tokens = (BOS, A, tok(19), A, tok(0), EOS)  # "a dog a cup"
        assert set(parse_mentions(tokens)) == {19, 0}

    def test_no_objects(self):
        assert parse_mentions((BOS, A, EOS)) == []

    def test_multiset_vs_set(self):
        tokens = (BOS, A, tok(3), A, tok(3), EOS)
        mentions = parse_mentions(tokens)
        assert mentions == [3, 3]
        assert set(mentions) == {3}


class TestGenMetrics:
    def test_all_grounded(self):
        s = sample_for((0, 1, 2))
        resp = (BOS, A, tok(0), A, tok(1), EOS)
        m = gen_metrics([s], [resp])
        assert m.chair_s == m.chair_i == m.hal == m.cog == 0.0

    def test_worked_example(self):
        # scene {0,1,2} (kitchen); mentions {0,1,x=3,y=6}; 3 is in the prior
        # set (same cluster), 6 (street) is not
        s = sample_for((0, 1, 2))
        resp = (BOS, A, tok(0), A, tok(1), A, tok(3), A, tok(6), EOS)
        prior = gen_prior(0)
        m = gen_metrics([s], [resp], prior=prior)
        assert m.chair_i == 2 / 4
        assert m.cover == 2 / 3
        assert m.chair_s == 1.0
        assert m.cog == 1 / 4

    def test_duplication_invariance(self):
        s = sample_for((0, 1, 2))
        resp = (BOS, A, tok(0), A, tok(5), EOS)
        one = gen_metrics([s], [resp])
        two = gen_metrics([s, s], [resp, resp])
        assert one == type(one)(**{**one.__dict__,
                                   "n_responses": 1, "n_mentions": 2})
        assert two.chair_i == one.chair_i
        assert two.chair_s == one.chair_s
        assert two.cover == one.cover
        assert two.cog == one.cog

    def test_cog_bounded_by_chair_i(self):
        s = sample_for((0, 1, 2))
        resp = (BOS, A, tok(3), A, tok(6), EOS)
        m = gen_metrics([s], [resp])
        assert 0 <= m.cog <= m.chair_i <= 1

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            gen_metrics([], [])

    def test_length_mismatch_rejected(self):
        s = sample_for((0, 1, 2))
        with pytest.raises(InvalidArgumentError):
            gen_metrics([s], [])


class TestDiscMetrics:
    def test_perfect(self):
        m = disc_metrics(["yes", "no"], ["yes", "no"])
        assert m.accuracy == 1.0 and m.f1 == 1.0

    def test_all_no_on_balanced(self):
        m = disc_metrics(["yes", "no", "yes", "no"], ["no"] * 4)
        assert m.accuracy == 0.5
        assert m.f1 == 0.0

    def test_confusion_example(self):
        gold = ["yes", "yes", "no", "yes", "no", "no"]
        pred = ["yes", "yes", "yes", "no", "no", "no"]
        m = disc_metrics(gold, pred)  # TP=2 FP=1 FN=1 TN=2
        assert m.precision == pytest.approx(2 / 3)
        assert m.recall == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(2 / 3)
        assert m.accuracy == pytest.approx(4 / 6)

    def test_bad_label_rejected(self):
        with pytest.raises(InvalidArgumentError):
            disc_metrics(["yes"], ["maybe"])

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            disc_metrics([], [])
