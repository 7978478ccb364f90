import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clozeverb.prompting import parse_template, render
from clozeverb.scoring import (
    OracleError,
    ScoringError,
    VocabDistribution,
    class_score,
    classify,
    format_prediction,
    prediction_header,
)
from clozeverb.toy_oracle import ToyOracle
from clozeverb.verbalizer import Verbalizer

from .conftest import AGNEWS_TEMPLATES, FORD_SENTENCE, TOY_VOCAB


def dist_with(oracle, masses, filler="the"):
    """Distribution with the given word masses; leftover mass goes to ``filler``."""
    p = np.zeros(len(oracle.vocab))
    for w, mass in masses.items():
        p[oracle.vocab[w]] = mass
    p[oracle.vocab[filler]] += 1.0 - p.sum()
    return VocabDistribution(p)


class FixedOracle(ToyOracle):
    """ToyOracle whose predict returns a preset distribution."""

    def __init__(self, dist=None, **kw):
        super().__init__({}, vocab=TOY_VOCAB, **kw)
        self.dist = dist
        self.calls = 0

    def predict(self, prompt):
        self.calls += 1
        return self.dist


@pytest.fixture
def oracle():
    return FixedOracle()


def test_class_score_singleton(oracle):
    d = dist_with(oracle, {"business": 0.4})
    assert class_score(d, ["business"], oracle) == 0.4


def test_class_score_two_point_mean(oracle):
    d = dist_with(oracle, {"company": 0.2, "industry": 0.4})
    assert class_score(d, ["company", "industry"], oracle) == pytest.approx(0.3, abs=1e-15)


def test_class_score_uniform(oracle):
    n_vocab = len(oracle.vocab)  # 4 specials + fixture words
    assert n_vocab == 4 + len(set(TOY_VOCAB))
    d = VocabDistribution(np.full(n_vocab, 1.0 / n_vocab))
    assert class_score(d, ["company", "sports", "game"], oracle) == pytest.approx(1 / n_vocab, abs=1e-15)


def test_class_score_unknown_word_is_error(oracle):
    d = dist_with(oracle, {})
    with pytest.raises(ScoringError, match="not a single token"):
        class_score(d, ["fortune 500 company"], oracle)
    with pytest.raises(ScoringError):
        class_score(d, [], oracle)


def test_class_score_matches_reverse_order_sum(oracle):
    rng = np.random.default_rng(0)
    words = sorted(set(TOY_VOCAB))
    for _ in range(50):
        p = rng.dirichlet(np.ones(len(oracle.vocab)))
        d = VocabDistribution(p)
        chosen = list(rng.choice(words, size=rng.integers(1, 12), replace=False))
        brute = 0.0
        for w in reversed(chosen):
            brute += p[oracle.vocab[w]]
        assert abs(class_score(d, chosen, oracle) - brute / len(chosen)) <= 1e-12


def test_vocab_distribution_validation():
    with pytest.raises(ValueError):
        VocabDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        VocabDistribution(np.array([1.5, -0.5]))
    d = VocabDistribution.from_logits([0.0, 0.0, np.log(2.0)])
    assert d[2] == pytest.approx(0.5)


VERB2 = Verbalizer({"BUSINESS": ["business", "company", "manufacturer"], "SPORTS": ["sports", "game"]})


def test_classify_ford_sentence_is_business(toy, template2):
    pred = classify(toy, template2, VERB2, FORD_SENTENCE)
    assert pred.label == "BUSINESS"
    # ford trigger: company .8, business .1, manufacturer .1 -> mean 1/3
    assert pred.class_scores["BUSINESS"] == pytest.approx(1.0 / 3, abs=1e-12)
    assert pred.class_scores["SPORTS"] == 0.0
    assert pred.per_word["BUSINESS"][1] == ("company", pytest.approx(0.8))


def test_classify_tie_goes_to_first_class(toy, template2):
    verb = Verbalizer({"SPORTS": ["company", "game"], "BUSINESS": ["company", "game"]})
    pred = classify(toy, template2, verb, FORD_SENTENCE)
    assert pred.class_scores["SPORTS"] == pred.class_scores["BUSINESS"]
    assert pred.label == "SPORTS"


def test_classify_planted_sports(oracle, template2):
    oracle.dist = dist_with(oracle, {"sports": 0.9, "business": 0.05})
    verb = Verbalizer({"BUSINESS": ["business"], "SPORTS": ["sports"]})
    pred = classify(oracle, template2, verb, "the nba wins")
    assert pred.label == "SPORTS" and pred.class_scores["SPORTS"] == 0.9
    assert oracle.calls == 1


def test_classify_needs_two_classes(toy, template2):
    with pytest.raises(ScoringError):
        classify(toy, template2, Verbalizer({"A": ["business"]}), "x")


def test_classify_wraps_oracle_failure(template2):
    class Broken(FixedOracle):
        def predict(self, prompt):
            raise RuntimeError("boom")

    with pytest.raises(OracleError) as err:
        classify(Broken(), template2, VERB2, FORD_SENTENCE)
    assert err.value.prompt.source_text == FORD_SENTENCE


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.05, 1.0))
def test_argmax_invariant_to_common_scaling(seed, scale):
    o = FixedOracle()
    rng = random.Random(seed)
    words = [w for w in sorted(set(TOY_VOCAB)) if w != "the"]
    rng.shuffle(words)
    verb = Verbalizer({"A": words[:3], "B": words[3:5], "C": words[5:9]})
    label_words = words[:9]
    raw = {w: rng.random() for w in label_words}
    total = sum(raw.values()) * 1.01
    masses = {w: v / total for w, v in raw.items()}
    o.dist = dist_with(o, masses)
    base = classify(o, parse_template("X is [mask]"), verb, "ford")
    o.dist = dist_with(o, {w: v * scale for w, v in masses.items()})
    scaled = classify(o, parse_template("X is [mask]"), verb, "ford")
    assert scaled.label == base.label


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_adding_word_moves_mean_in_its_direction(seed):
    o = FixedOracle()
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(len(o.vocab)))
    d = VocabDistribution(p)
    words = sorted(set(TOY_VOCAB))
    chosen = list(rng.choice(words, size=4, replace=False))
    extra = [w for w in words if w not in chosen][0]
    before = class_score(d, chosen, o)
    after = class_score(d, chosen + [extra], o)
    w_p = d[o.vocab[extra]]
    if w_p > before:
        assert after > before
    elif w_p < before:
        assert after < before


def test_plain_verbalizer_reproduces_class_name_probability(toy, template2):
    verb = Verbalizer({"BUSINESS": ["business"], "SPORTS": ["sports"]}, mode="plain")
    for text in [FORD_SENTENCE, "nba title", "nothing here"]:
        pred = classify(toy, template2, verb, text)
        dist = toy.predict(render(template2, text, toy))
        assert pred.class_scores == {"BUSINESS": dist[toy.vocab["business"]], "SPORTS": dist[toy.vocab["sports"]]}


def test_format_prediction(oracle):
    from clozeverb.scoring import Prediction

    p = Prediction("SPORTS", {"BUSINESS": 0.05, "SPORTS": 0.9})
    assert format_prediction(3, p, ["BUSINESS", "SPORTS"]) == "3\tSPORTS\t0.050000\t0.900000"
    assert format_prediction(3, p, ["BUSINESS", "SPORTS"], gold="BUSINESS") == "3\tBUSINESS\tSPORTS\t0.050000\t0.900000"
    assert prediction_header(["BUSINESS", "SPORTS"], with_gold=True) == "id\tgold\tpredicted\tBUSINESS\tSPORTS"


class TestToyOracle:
    def test_rejects_bad_distribution(self):
        with pytest.raises(ValueError, match="sums to"):
            ToyOracle({"ford": {"company": 0.8}})

    def test_uniform_without_triggers(self, toy, template2):
        d = toy.predict(render(template2, "cuts production", toy))
        assert np.allclose(d.probs, 1.0 / len(toy.vocab))

    def test_deterministic(self, toy, template2):
        r = render(template2, FORD_SENTENCE, toy)
        assert np.array_equal(toy.predict(r).probs, toy.predict(r).probs)

    def test_template_words_do_not_trigger(self, template2):
        o = ToyOracle({"topic": {"sports": 1.0}}, vocab=TOY_VOCAB)
        d = o.predict(render(template2, "ford cuts", o))
        assert d[o.vocab["sports"]] == pytest.approx(1.0 / len(o.vocab))

    def test_mixture_hand_evaluated(self, toy, template2):
        # ford and nba each once -> equal-weight mixture
        d = toy.predict(render(template2, "Ford buys the NBA", toy))
        assert d[toy.vocab["company"]] == pytest.approx(0.4)
        assert d[toy.vocab["sports"]] == pytest.approx(0.25)
        assert d[toy.vocab["business"]] == pytest.approx(0.05)
        assert d[toy.vocab["basketball"]] == pytest.approx(0.15)

    def test_mass_sums_to_one_on_random_prompts(self, toy):
        rng = random.Random(5)
        words = sorted(set(TOY_VOCAB)) + ["unknownword"]
        for i in range(100):
            t = parse_template(AGNEWS_TEMPLATES[i % 4])
            text = " ".join(rng.choice(words) for _ in range(rng.randint(1, 30)))
            d = toy.predict(render(t, text, toy))
            assert abs(d.probs.sum() - 1.0) <= 1e-6

    def test_seeded_embeddings(self):
        a = ToyOracle({}, vocab=TOY_VOCAB, seed=3)
        b = ToyOracle({}, vocab=TOY_VOCAB, seed=3)
        c = ToyOracle({}, vocab=TOY_VOCAB, seed=4)
        assert np.array_equal(a.word_vector("company"), b.word_vector("company"))
        assert not np.array_equal(a.word_vector("company"), c.word_vector("company"))

    def test_word_to_id(self, toy):
        assert toy.word_to_id("Company") == toy.vocab["company"]
        assert toy.word_to_id("fortune 500 company") is None
        assert toy.word_to_id("[MASK]") is None

    def test_from_file(self, tmp_path):
        import json

        spec = {"planted": {"ford": {"company": 1.0}}, "vocab": ["business"], "seed": 1, "dim": 4}
        path = tmp_path / "toy.json"
        path.write_text(json.dumps(spec))
        o = ToyOracle.from_file(path)
        assert o.word_vector("business").shape == (4,)
