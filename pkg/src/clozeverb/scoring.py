"""Masked-LM oracle contract and mean-of-label-words classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Protocol, Sequence

import numpy as np

from .prompting import PromptTemplate, RenderedPrompt, render

if TYPE_CHECKING:
    from .verbalizer import Verbalizer


class ScoringError(RuntimeError):
    pass


class OracleError(ScoringError):
    """The oracle failed on a prompt; the prompt is attached."""

    def __init__(self, prompt: RenderedPrompt, cause: BaseException):
        super().__init__(f"oracle failed on {prompt.source_text!r}: {cause}")
        self.prompt = prompt


class ScoringOracle(Protocol):
    """A masked language model seen through the operations this package needs.

    ``predict`` returns the softmax distribution over the whole vocabulary at
    ``prompt.mask_index`` and must be deterministic. ``word_to_id`` returns a
    token id only when ``word`` is a single vocabulary token in the form the
    model would predict at the mask, matching case-insensitively and
    preferring the lowercase entry. Oracles that cannot take concurrent
    ``predict`` calls set ``concurrent_safe = False``.
    """

    vocab: Mapping[str, int]
    mask_token_id: int
    max_length: int
    concurrent_safe: bool

    def tokenize(self, text: str) -> list[int]: ...

    def add_special_tokens(self, ids: list[int]) -> list[int]: ...

    def num_special_tokens(self) -> int: ...

    def predict(self, prompt: RenderedPrompt) -> "VocabDistribution": ...

    def embed(self, token_id: int) -> np.ndarray: ...

    def word_to_id(self, word: str) -> int | None: ...


@dataclass(frozen=True)
class VocabDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 1:
            raise ValueError("distribution must be a vector")
        if (p < 0).any() or (p > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        total = float(p.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"distribution mass is {total}, expected 1")

    @classmethod
    def from_logits(cls, logits) -> "VocabDistribution":
        z = np.asarray(logits, dtype=np.float64)
        z = np.exp(z - z.max())
        return cls(z / z.sum())

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, token_id: int) -> float:
        return float(self.probs[token_id])


@dataclass
class Prediction:
    label: str
    class_scores: dict[str, float]
    per_word: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    truncated: bool = False


def class_score(dist: VocabDistribution, words: Sequence[str], oracle: ScoringOracle) -> float:
    """Unweighted mean of the mask probabilities of ``words``."""
    if not words:
        raise ScoringError("label-word list is empty")
    return math.fsum(_word_probs(dist, words, oracle).values()) / len(words)


def _word_probs(dist: VocabDistribution, words: Sequence[str], oracle: ScoringOracle) -> dict[str, float]:
    probs = {}
    for w in words:
        tid = oracle.word_to_id(w)
        if tid is None:
            raise ScoringError(f"label word {w!r} is not a single token in the oracle vocabulary")
        probs[w] = dist[tid]
    return probs


def classify(
    oracle: ScoringOracle, template: PromptTemplate, verbalizer: "Verbalizer", text: str
) -> Prediction:
    """Render once, predict once, and take the class with the highest mean word probability.

    Ties go to the class declared first in the verbalizer.
    """
    if len(verbalizer.classes) < 2:
        raise ScoringError("need at least two classes to classify")
    prompt = render(template, text, oracle)
    try:
        dist = oracle.predict(prompt)
    except Exception as err:
        raise OracleError(prompt, err) from err

    scores: dict[str, float] = {}
    per_word: dict[str, list[tuple[str, float]]] = {}
    for label in verbalizer.classes:
        words = verbalizer.words(label)
        probs = _word_probs(dist, words, oracle)
        per_word[label] = list(probs.items())
        scores[label] = math.fsum(probs.values()) / len(words)

    best = verbalizer.classes[0]
    for label in verbalizer.classes[1:]:
        if scores[label] > scores[best]:
            best = label
    return Prediction(best, scores, per_word, truncated=prompt.truncated)


def prediction_header(classes: Sequence[str], with_gold: bool = False) -> str:
    cols = ["id"] + (["gold"] if with_gold else []) + ["predicted", *classes]
    return "\t".join(cols)


def format_prediction(text_id, prediction: Prediction, classes: Sequence[str], gold: str | None = None) -> str:
    """``id<TAB>[gold<TAB>]predicted<TAB>score...`` with 6-decimal scores in class order."""
    cols = [str(text_id)]
    if gold is not None:
        cols.append(gold)
    cols.append(prediction.label)
    cols.extend(f"{prediction.class_scores[c]:.6f}" for c in classes)
    return "\t".join(cols)
