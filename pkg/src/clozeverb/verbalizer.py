"""Label-word sets: KB expansion from class names and k-shot texts, then distance refinement."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from nltk.stem import PorterStemmer

from .concept_kb import ConceptKB, detect_entities, top_n_concepts

logger = logging.getLogger(__name__)

CLASS_ANCHOR = "class-anchor"
TEXT_ENTITY = "text-entity"

PLAIN = "plain"
ANCHOR_ONLY = "anchor-only"
FULL = "full"
MODES = (PLAIN, ANCHOR_ONLY, FULL)

_SPLIT = re.compile(r"[^0-9a-z]+")
_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


class VerbalizerError(ValueError):
    pass


class Embedder(Protocol):
    def word_vector(self, word: str) -> np.ndarray | None: ...


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word.lower())


def label_words(label: str) -> list[str]:
    """Lowercase anchor words for a class name; ``"Sci/Tech"`` gives ``["sci", "tech"]``."""
    words = [w for w in _SPLIT.split(label.lower()) if w]
    if not words:
        raise VerbalizerError(f"class name {label!r} has no alphanumeric content")
    return list(dict.fromkeys(words))


def is_derivation(word: str, label_name: str) -> bool:
    """True when ``word`` shares a Porter stem with the class name but is not one of its words."""
    anchors = label_words(label_name)
    word = word.lower()
    if word in anchors:
        return False
    stems = {stem(a) for a in anchors}
    if len(anchors) > 1:
        stems.add(stem("".join(anchors)))
    return stem(word) in stems


@dataclass(frozen=True)
class Candidate:
    word: str
    probability: float
    provenance: str


@dataclass
class CandidateSet:
    label: str
    candidates: dict[str, Candidate] = field(default_factory=dict)
    dropped_multi_token: int = 0

    def __contains__(self, word: str) -> bool:
        return word in self.candidates

    def __len__(self) -> int:
        return len(self.candidates)

    def words(self) -> set[str]:
        return set(self.candidates)

    def add(self, cand: Candidate) -> None:
        """Insert ``cand``; a repeated word keeps its first provenance and the higher probability."""
        prev = self.candidates.get(cand.word)
        if prev is None:
            self.candidates[cand.word] = cand
        elif cand.probability > prev.probability:
            self.candidates[cand.word] = Candidate(cand.word, cand.probability, prev.provenance)

    def union(self, other: "CandidateSet") -> "CandidateSet":
        out = CandidateSet(self.label or other.label, dict(self.candidates),
                           self.dropped_multi_token + other.dropped_multi_token)
        for cand in other.candidates.values():
            out.add(cand)
        return out


def _accept(word: str, vocab_filter: Callable[[str], bool] | None) -> bool:
    return vocab_filter is None or vocab_filter(word)


def _add_concepts(out: CandidateSet, kb: ConceptKB, instance: str, n: int, provenance: str,
                  vocab_filter: Callable[[str], bool] | None) -> None:
    for concept, prob in top_n_concepts(kb, instance, n):
        if _accept(concept, vocab_filter):
            out.add(Candidate(concept, prob, provenance))
        else:
            out.dropped_multi_token += 1


def expand_anchor(kb: ConceptKB, label_name: str, n: int,
                  vocab_filter: Callable[[str], bool] | None = None) -> CandidateSet:
    """Class name plus the top-``n`` KB concepts of each of its words.

    ``vocab_filter`` rejects concepts the scoring model cannot predict as
    one token (e.g. "fortune 500 company"); rejections are counted in
    ``dropped_multi_token``. The class-name words themselves always stay.
    """
    if not label_name.strip():
        raise VerbalizerError("label name is empty")
    out = CandidateSet(label_name)
    for anchor in label_words(label_name):
        out.add(Candidate(anchor, 1.0, CLASS_ANCHOR))
    for anchor in label_words(label_name):
        _add_concepts(out, kb, anchor, n, CLASS_ANCHOR, vocab_filter)
    return out


def expand_from_texts(kb: ConceptKB, texts: Sequence[str], n: int,
                      vocab_filter: Callable[[str], bool] | None = None,
                      label: str = "") -> CandidateSet:
    """Union of the top-``n`` concepts of every KB entity mentioned in ``texts``."""
    if not texts:
        raise VerbalizerError("no texts to expand from")
    out = CandidateSet(label)
    seen: set[str] = set()
    for text in texts:
        for mention in detect_entities(kb, text):
            if mention.surface in seen:
                continue
            seen.add(mention.surface)
            _add_concepts(out, kb, mention.surface, n, TEXT_ENTITY, vocab_filter)
    return out


def _cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


def label_vector(label_name: str, embedder: Embedder) -> np.ndarray:
    vecs = []
    for w in label_words(label_name):
        v = embedder.word_vector(w)
        if v is None:
            raise VerbalizerError(f"embedder has no vector for class word {w!r}")
        vecs.append(np.asarray(v, dtype=np.float64))
    return np.mean(vecs, axis=0)


def rank_candidates(candidates: CandidateSet | Iterable[str], label_name: str, embedder: Embedder
                    ) -> tuple[list[tuple[str, float]], int, int]:
    """Expansion words sorted by cosine distance to the class name, ties by word.

    Returns ``(ranked, n_missing, n_derivations)``; class-name words and their
    morphological derivations are excluded from ``ranked``.
    """
    target = label_vector(label_name, embedder)
    anchors = set(label_words(label_name))
    words = candidates.words() if isinstance(candidates, CandidateSet) else set(candidates)
    ranked = []
    missing = derived = 0
    for w in words:
        if w in anchors:
            continue
        if is_derivation(w, label_name):
            derived += 1
            continue
        vec = embedder.word_vector(w)
        if vec is None:
            missing += 1
            continue
        ranked.append((w, _cosine_distance(np.asarray(vec, dtype=np.float64), target)))
    ranked.sort(key=lambda wd: (wd[1], wd[0]))
    return ranked, missing, derived


def refine(candidates: CandidateSet | Iterable[str], label_name: str, embedder: Embedder, m: int) -> list[str]:
    """Class-name words followed by the ``m`` candidates nearest to the class name."""
    if m < 1:
        raise VerbalizerError(f"m must be >= 1, got {m}")
    ranked, missing, _ = rank_candidates(candidates, label_name, embedder)
    if missing:
        logger.warning("%s: dropped %d candidate(s) with no embedding", label_name, missing)
    return label_words(label_name) + [w for w, _ in ranked[:m]]


@dataclass
class Verbalizer:
    """Ordered class -> label-word mapping; class order is the argmax tie-break order."""

    entries: dict[str, list[str]]
    mode: str = FULL
    n: int | None = None
    m: int | None = None
    template_id: int | None = None
    created: str | None = None
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise VerbalizerError("verbalizer has no classes")
        for label, words in self.entries.items():
            if not words:
                raise VerbalizerError(f"class {label!r} has no label words")
            if len(set(words)) != len(words):
                raise VerbalizerError(f"class {label!r} has duplicate label words")

    @property
    def classes(self) -> list[str]:
        return list(self.entries)

    def words(self, label: str) -> list[str]:
        return self.entries[label]

    def to_dict(self) -> dict:
        meta = {"mode": self.mode, "n": self.n, "m": self.m, "template_id": self.template_id}
        if self.created is not None:
            meta["created"] = self.created
        return {
            "metadata": meta,
            "classes": [{"label": label, "words": list(words)} for label, words in self.entries.items()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Verbalizer":
        doc = json.loads(text)
        meta = doc.get("metadata", {})
        entries = {}
        for row in doc["classes"]:
            if row["label"] in entries:
                raise VerbalizerError(f"duplicate class {row['label']!r}")
            entries[row["label"]] = list(row["words"])
        return cls(entries, mode=meta.get("mode", FULL), n=meta.get("n"), m=meta.get("m"),
                   template_id=meta.get("template_id"), created=meta.get("created"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "Verbalizer":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_verbalizer(
    kb: ConceptKB | None,
    class_labels: Sequence[str],
    kshot_texts_by_class: Mapping[str, Sequence[str]] | None,
    embedder,
    n: int = 5,
    m: int = 50,
    mode: str = FULL,
    template_id: int | None = None,
    created: str | None = None,
) -> Verbalizer:
    """Compose expansion and refinement for every class.

    ``plain`` keeps only the class name, ``anchor-only`` expands from the
    class name, ``full`` also pools concepts of entities in the class's
    k-shot texts. ``embedder`` is normally the scoring oracle: its vocabulary
    decides which candidates are single tokens and its input embeddings
    drive the distance ranking.
    """
    if mode not in MODES:
        raise VerbalizerError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(set(class_labels)) != len(class_labels):
        raise VerbalizerError("class labels must be distinct")
    if n < 1 or m < 1:
        raise VerbalizerError(f"n and m must be >= 1, got n={n}, m={m}")
    if mode != PLAIN and kb is None:
        raise VerbalizerError(f"mode {mode!r} needs a knowledge base")
    if mode == FULL:
        missing = [c for c in class_labels if not (kshot_texts_by_class or {}).get(c)]
        if missing:
            raise VerbalizerError(f"mode full needs k-shot texts for every class; missing {missing}")

    vocab_filter = getattr(embedder, "word_to_id", None)
    single_token = (lambda w: vocab_filter(w) is not None) if vocab_filter else None

    entries: dict[str, list[str]] = {}
    stats: dict[str, dict[str, int]] = {}
    for label in class_labels:
        anchors = label_words(label)
        if single_token:
            bad = [a for a in anchors if not single_token(a)]
            if bad:
                raise VerbalizerError(f"class word(s) {bad} of {label!r} are not single tokens for the oracle")
        if mode == PLAIN:
            entries[label] = anchors
            stats[label] = {"candidates": len(anchors), "dropped_multi_token": 0,
                            "dropped_no_embedding": 0, "dropped_derivation": 0}
            continue
        pool = expand_anchor(kb, label, n, single_token)
        if mode == FULL:
            pool = pool.union(expand_from_texts(kb, kshot_texts_by_class[label], n, single_token, label))
        ranked, n_missing, n_derived = rank_candidates(pool, label, embedder)
        if n_missing:
            logger.warning("%s: dropped %d candidate(s) with no embedding", label, n_missing)
        entries[label] = anchors + [w for w, _ in ranked[:m]]
        stats[label] = {"candidates": len(pool), "dropped_multi_token": pool.dropped_multi_token,
                        "dropped_no_embedding": n_missing, "dropped_derivation": n_derived}

    labels = list(entries)
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            shared = set(entries[a]) & set(entries[b])
            if shared:
                logger.info("classes %s and %s share %d label word(s)", a, b, len(shared))

    return Verbalizer(entries, mode=mode, n=n, m=m, template_id=template_id, created=created, stats=stats)

