"""Deterministic stand-in for a masked LM, used for model-free tests and demos."""

from __future__ import annotations

import json
import math
import string
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .prompting import RenderedPrompt
from .scoring import VocabDistribution

CLS, SEP, MASK, UNK = "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIALS = (CLS, SEP, MASK, UNK)


class ToyOracle:
    """Planted-distribution oracle.

    ``planted`` maps a trigger word to a distribution over words. The mask
    distribution for a prompt is the equal-weight mixture of the planted
    distributions of every trigger occurrence in the prompt's text slot
    (template words never trigger), or uniform over the vocabulary when no
    trigger occurs. Tokenization is lowercase whitespace splitting with
    surrounding punctuation stripped. Embeddings are seeded Gaussian vectors,
    optionally overridden per word.
    """

    concurrent_safe = True

    def __init__(
        self,
        planted: Mapping[str, Mapping[str, float]],
        vocab: Iterable[str] = (),
        embeddings: Mapping[str, Iterable[float]] | None = None,
        dim: int = 16,
        seed: int = 0,
        max_length: int = 128,
    ):
        for trigger, dist in planted.items():
            total = math.fsum(dist.values())
            if abs(total - 1.0) > 1e-9 or any(p < 0 for p in dist.values()):
                raise ValueError(f"planted distribution for {trigger!r} sums to {total}, expected 1")
        words = set(w.lower() for w in vocab)
        words.update(t.lower() for t in planted)
        for dist in planted.values():
            words.update(w.lower() for w in dist)
        if embeddings:
            words.update(w.lower() for w in embeddings)
        words -= set(SPECIALS)
        self.vocab: dict[str, int] = {tok: i for i, tok in enumerate([*SPECIALS, *sorted(words)])}
        self.id_to_token = list(self.vocab)
        self.mask_token_id = self.vocab[MASK]
        self.max_length = max_length
        self.seed = seed

        n = len(self.vocab)
        self._planted: dict[int, np.ndarray] = {}
        for trigger, dist in planted.items():
            p = np.zeros(n)
            for w, mass in dist.items():
                p[self.vocab[w.lower()]] += mass
            self._planted[self.vocab[trigger.lower()]] = p
        self._uniform = np.full(n, 1.0 / n)

        rng = np.random.default_rng(seed)
        self._emb = rng.standard_normal((n, dim))
        for w, vec in (embeddings or {}).items():
            vec = np.asarray(list(vec), dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"embedding for {w!r} has shape {vec.shape}, expected ({dim},)")
            self._emb[self.vocab[w.lower()]] = vec

    @classmethod
    def from_file(cls, path: str | Path) -> "ToyOracle":
        """Build from a JSON document with keys ``planted``, ``vocab``, ``embeddings``, ``dim``, ``seed``, ``max_length``."""
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            planted=spec.get("planted", {}),
            vocab=spec.get("vocab", ()),
            embeddings=spec.get("embeddings"),
            dim=spec.get("dim", 16),
            seed=spec.get("seed", 0),
            max_length=spec.get("max_length", 128),
        )

    def _words(self, text: str) -> list[str]:
        out = []
        for raw in text.split():
            tok = raw.lower().strip(string.punctuation)
            if tok:
                out.append(tok)
        return out

    def tokenize(self, text: str) -> list[int]:
        unk = self.vocab[UNK]
        return [self.vocab.get(w, unk) for w in self._words(text)]

    def add_special_tokens(self, ids: list[int]) -> list[int]:
        return [self.vocab[CLS], *ids, self.vocab[SEP]]

    def num_special_tokens(self) -> int:
        return 2

    def predict(self, prompt: RenderedPrompt) -> VocabDistribution:
        hits = [self._planted[t] for t in prompt.text_tokens() if t in self._planted]
        if not hits:
            return VocabDistribution(self._uniform.copy())
        p = np.sum(hits, axis=0) / len(hits)
        return VocabDistribution(p)

    def embed(self, token_id: int) -> np.ndarray:
        return self._emb[token_id]

    def word_to_id(self, word: str) -> int | None:
        tid = self.vocab.get(word.lower())
        if tid is None or self.id_to_token[tid] in SPECIALS:
            return None
        return tid

    def word_vector(self, word: str) -> np.ndarray | None:
        tid = self.word_to_id(word)
        return None if tid is None else self._emb[tid]
