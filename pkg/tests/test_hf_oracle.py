import numpy as np
import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from clozeverb.hf_oracle import HFMaskedLMOracle  # noqa: E402
from clozeverb.prompting import parse_template, render  # noqa: E402
from clozeverb.scoring import classify  # noqa: E402
from clozeverb.verbalizer import Verbalizer  # noqa: E402

from .conftest import AGNEWS_TEMPLATES, TOY_VOCAB  # noqa: E402

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


@pytest.fixture(scope="module")
def oracle(tmp_path_factory):
    """Tiny randomly initialised BERT with a local WordPiece vocabulary."""
    path = tmp_path_factory.mktemp("bert") / "vocab.txt"
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ":", "."] + sorted(set(TOY_VOCAB)) + ["##s"]
    path.write_text("\n".join(words) + "\n", encoding="utf-8")
    tok = transformers.BertTokenizer(str(path), model_max_length=32)
    torch.manual_seed(0)
    cfg = transformers.BertConfig(vocab_size=len(words), hidden_size=16, num_hidden_layers=1,
                                  num_attention_heads=2, intermediate_size=32, max_position_embeddings=64)
    return HFMaskedLMOracle(transformers.BertForMaskedLM(cfg), tok)


def test_max_length_from_tokenizer(oracle):
    assert oracle.max_length == 32


def test_distribution_sums_to_one(oracle):
    for t in AGNEWS_TEMPLATES:
        d = oracle.predict(render(parse_template(t), "ford cuts production", oracle))
        assert len(d) == len(oracle.vocab)
        assert abs(d.probs.sum() - 1.0) <= 1e-6


def test_word_to_id(oracle):
    assert oracle.word_to_id("company") == oracle.vocab["company"]
    assert oracle.word_to_id("Company") == oracle.vocab["company"]
    assert oracle.word_to_id("companies") is None
    assert oracle.word_to_id("[MASK]") is None
    assert oracle.word_vector("company").shape == (16,)


def test_render_places_single_mask(oracle):
    r = render(parse_template(AGNEWS_TEMPLATES[1]), " ".join(["sales"] * 100), oracle)
    assert len(r.tokens) == 32 and r.truncated
    assert r.tokens.count(oracle.mask_token_id) == 1
    assert r.tokens[0] == oracle.tokenizer.cls_token_id and r.tokens[-1] == oracle.tokenizer.sep_token_id


def test_classify_matches_direct_probabilities(oracle):
    t = parse_template(AGNEWS_TEMPLATES[1])
    verb = Verbalizer({"BUSINESS": ["business", "company"], "SPORTS": ["sports"]})
    pred = classify(oracle, t, verb, "ford cuts production")
    d = oracle.predict(render(t, "ford cuts production", oracle))
    expected = (d[oracle.vocab["business"]] + d[oracle.vocab["company"]]) / 2
    assert pred.class_scores["BUSINESS"] == pytest.approx(expected, abs=1e-12)
    assert pred.label == max(pred.class_scores, key=pred.class_scores.get)


def test_embedding_matches_model(oracle):
    weight = oracle.model.get_input_embeddings().weight.detach().numpy()
    tid = oracle.vocab["nba"]
    assert np.allclose(oracle.embed(tid), weight[tid])
