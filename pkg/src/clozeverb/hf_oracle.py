"""Scoring oracle backed by a Hugging Face masked language model.

``transformers`` and ``torch`` are imported lazily so the rest of the
package works without them.
"""

from __future__ import annotations

import os
import threading

import numpy as np

from .prompting import RenderedPrompt
from .scoring import VocabDistribution

DEFAULT_MODEL = "distilroberta-base"
# larger model, needs a GPU for full test sets
LARGE_MODEL = "roberta-large"

MODEL_ENV = "CLOZEVERB_MODEL"
CACHE_ENV = "CLOZEVERB_CACHE"


class HFMaskedLMOracle:
    """Wraps a tokenizer + ``AutoModelForMaskedLM``.

    Label words are looked up in the form the model predicts after a space
    (``"Ġcompany"`` for byte-level BPE, plain ``"company"`` for WordPiece).
    Template literal pieces are tokenized without trailing whitespace so the
    mask is not preceded by a bare space token.
    """

    concurrent_safe = False

    def __init__(self, model, tokenizer, max_length: int | None = None, device: str = "cpu"):
        import torch

        self._torch = torch
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        limit = getattr(tokenizer, "model_max_length", 512)
        if not limit or limit > 100_000:
            limit = 512
        self.max_length = min(max_length or limit, limit)
        self.vocab = tokenizer.get_vocab()
        self.mask_token_id = tokenizer.mask_token_id
        if self.mask_token_id is None:
            raise ValueError("tokenizer has no mask token")
        self._emb = model.get_input_embeddings().weight.detach().cpu().numpy().astype(np.float64)
        self._lock = threading.Lock()
        self._word_cache: dict[str, int | None] = {}
        self._prefix, self._suffix = self._special_frame()

    def _special_frame(self) -> tuple[list[int], list[int]]:
        # wrap a lone mask token and see what the tokenizer puts around it
        full = self.tokenizer(self.tokenizer.mask_token, add_special_tokens=True)["input_ids"]
        if full.count(self.mask_token_id) != 1:
            raise ValueError("cannot locate special tokens around the mask token")
        i = full.index(self.mask_token_id)
        return list(full[:i]), list(full[i + 1:])

    @classmethod
    def from_pretrained(cls, name: str | None = None, cache_dir: str | None = None, **kwargs) -> "HFMaskedLMOracle":
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        name = name or os.environ.get(MODEL_ENV, DEFAULT_MODEL)
        cache_dir = cache_dir or os.environ.get(CACHE_ENV)
        tokenizer = AutoTokenizer.from_pretrained(name, cache_dir=cache_dir)
        model = AutoModelForMaskedLM.from_pretrained(name, cache_dir=cache_dir)
        return cls(model, tokenizer, **kwargs)

    def tokenize(self, text: str) -> list[int]:
        return self.tokenizer.encode(text.rstrip(), add_special_tokens=False)

    def add_special_tokens(self, ids: list[int]) -> list[int]:
        return self._prefix + list(ids) + self._suffix

    def num_special_tokens(self) -> int:
        return len(self._prefix) + len(self._suffix)

    def predict(self, prompt: RenderedPrompt) -> VocabDistribution:
        torch = self._torch
        ids = torch.tensor([prompt.tokens], device=self.device)
        with self._lock, torch.no_grad():
            logits = self.model(input_ids=ids, attention_mask=torch.ones_like(ids)).logits
        return VocabDistribution.from_logits(logits[0, prompt.mask_index].cpu().numpy())

    def embed(self, token_id: int) -> np.ndarray:
        return self._emb[token_id]

    def word_to_id(self, word: str) -> int | None:
        if word not in self._word_cache:
            self._word_cache[word] = self._lookup(word)
        return self._word_cache[word]

    def _lookup(self, word: str) -> int | None:
        forms = [word.lower()]
        if word != word.lower():
            forms.append(word)
        specials = set(self.tokenizer.all_special_ids)
        for form in forms:
            for text in (" " + form, form):
                ids = self.tokenizer.encode(text, add_special_tokens=False)
                if len(ids) == 1 and ids[0] not in specials:
                    return ids[0]
        return None

    def word_vector(self, word: str) -> np.ndarray | None:
        tid = self.word_to_id(word)
        return None if tid is None else self._emb[tid]
