"""IsA concept store: ingest Probase-style triples, ranked retrieval, entity spotting."""

from __future__ import annotations

import math
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

_WS = re.compile(r"\s+")
_WORD = re.compile(r"\w+")


class KBFormatError(ValueError):
    """A triple could not be parsed; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def normalize_term(term: str) -> str:
    return _WS.sub(" ", term.strip()).lower()


@dataclass(frozen=True)
class ConceptEntry:
    instance: str
    concept: str
    weight: float

    def __post_init__(self):
        if not self.instance or not self.concept:
            raise ValueError("instance and concept must be non-empty")
        if not self.weight >= 0:
            raise ValueError(f"weight must be non-negative, got {self.weight!r}")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class ConceptKB:
    """Immutable instance -> ranked concept distribution map.

    Each instance's concepts are stored pre-sorted by probability descending,
    ties by concept string ascending, so retrieval is a slice.
    """

    concepts: dict[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)
    n_records: int = 0

    def __contains__(self, instance: str) -> bool:
        return instance in self.concepts

    def __len__(self) -> int:
        return len(self.concepts)

    @property
    def n_entries(self) -> int:
        return sum(len(v) for v in self.concepts.values())

    @property
    def concept_vocabulary(self) -> set[str]:
        return {c for ranked in self.concepts.values() for c, _ in ranked}

    def distribution(self, instance: str) -> dict[str, float]:
        return dict(self.concepts.get(instance, ()))

    def entries(self) -> Iterator[ConceptEntry]:
        for instance in sorted(self.concepts):
            for concept, prob in self.concepts[instance]:
                yield ConceptEntry(instance, concept, prob)

    # Lazily built longest-match index; not part of equality.
    def _matcher(self) -> tuple[frozenset[str], int]:
        cached = self.__dict__.get("_match_index")
        if cached is None:
            instances = frozenset(self.concepts)
            max_words = max((len(_WORD.findall(i)) for i in instances), default=0)
            cached = (instances, max_words)
            object.__setattr__(self, "_match_index", cached)
        return cached


def _parse_weight(raw, lineno: int) -> float:
    try:
        weight = float(raw)
    except (TypeError, ValueError):
        raise KBFormatError(lineno, f"weight {raw!r} is not a number") from None
    if not math.isfinite(weight) or weight < 0:
        raise KBFormatError(lineno, f"weight {raw!r} must be a finite non-negative number")
    return weight


def ingest_kb(records: Iterable[tuple]) -> ConceptKB:
    """Build a :class:`ConceptKB` from ``(instance, concept, weight)`` records.

    Terms are whitespace-normalized and lowercased. Duplicate pairs are merged
    by summing their weights, then each instance is normalized to a
    probability distribution. Sums use :func:`math.fsum`, so the result does
    not depend on record order. An instance whose weights are all zero gets a
    uniform distribution over its concepts.
    """
    return _ingest(enumerate(records, start=1))


def _ingest(numbered: Iterable[tuple[int, tuple]]) -> ConceptKB:
    raw: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    n = 0
    for lineno, record in numbered:
        try:
            instance, concept, weight = record
        except (TypeError, ValueError):
            raise KBFormatError(lineno, f"expected 3 fields, got {record!r}") from None
        instance = normalize_term(str(instance))
        concept = normalize_term(str(concept))
        if not instance:
            raise KBFormatError(lineno, "empty instance")
        if not concept:
            raise KBFormatError(lineno, "empty concept")
        raw[instance][concept].append(_parse_weight(weight, lineno))
        n += 1

    concepts = {}
    for instance, by_concept in raw.items():
        merged = {c: math.fsum(ws) for c, ws in by_concept.items()}
        total = math.fsum(w for ws in by_concept.values() for w in ws)
        if total > 0:
            probs = {c: w / total for c, w in merged.items()}
        else:
            probs = {c: 1.0 / len(merged) for c in merged}
        ranked = sorted(probs.items(), key=lambda cp: (-cp[1], cp[0]))
        concepts[instance] = tuple(ranked)
    return ConceptKB(concepts=dict(sorted(concepts.items())), n_records=n)


def iter_kb_lines(lines: Iterable[str], concept_first: bool = False) -> Iterator[tuple[int, tuple[str, str, str]]]:
    """Yield ``(lineno, (instance, concept, weight))`` for each data line."""
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise KBFormatError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        if concept_first:
            parts = [parts[1], parts[0], parts[2]]
        yield lineno, tuple(parts)


def read_kb(path: str | Path, concept_first: bool = False) -> ConceptKB:
    """Load a KB file: ``instance<TAB>concept<TAB>weight`` per line, ``#`` comments.

    The raw Microsoft Concept Graph dump lists the concept first; pass
    ``concept_first=True`` for that layout.
    """
    with open(path, encoding="utf-8") as f:
        return _ingest(iter_kb_lines(f, concept_first=concept_first))


def write_kb(kb: ConceptKB, path: str | Path) -> None:
    """Write the normalized KB, one ``instance, concept, probability`` row per entry."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# instance\tconcept\tprobability\n")
        for e in kb.entries():
            f.write(f"{e.instance}\t{e.concept}\t{e.weight!r}\n")


def audit_kb_file(path: str | Path, fraction: float = 0.01, seed: int = 0, tol: float = 1e-9) -> tuple[int, list[str]]:
    """Re-read a written KB artifact and check per-instance sums on a sample.

    Returns ``(n_checked, failing_instances)``. Works from the raw file, not a
    :class:`ConceptKB`, so it audits what was actually written.
    """
    sums: dict[str, list[float]] = defaultdict(list)
    with open(path, encoding="utf-8") as f:
        for _, (instance, _concept, weight) in iter_kb_lines(f):
            sums[instance].append(float(weight))
    instances = sorted(sums)
    if not instances:
        return 0, []
    n = max(1, math.ceil(len(instances) * fraction))
    sample = random.Random(seed).sample(instances, min(n, len(instances)))
    bad = [i for i in sample if abs(math.fsum(sums[i]) - 1.0) > tol]
    return len(sample), bad


def top_n_concepts(kb: ConceptKB, instance: str, n: int) -> list[tuple[str, float]]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return list(kb.concepts.get(normalize_term(instance), ())[:n])


def _fold(text: str) -> str:
    # lower() per char only when it keeps the length, so offsets stay valid
    return "".join(lc if len(lc := c.lower()) == 1 else c for c in text)


def detect_entities(kb: ConceptKB, text: str) -> list[EntityMention]:
    """Greedy left-to-right longest match of KB instances at word boundaries.

    A match must start at the beginning of a word and end at the end of a
    word, so "art" is never found inside "start". Matching is on the
    case-folded text.
    """
    instances, max_words = kb._matcher()
    if not text or not max_words:
        return []
    folded = _fold(text)
    words = [(m.start(), m.end()) for m in _WORD.finditer(folded)]
    mentions = []
    i = 0
    while i < len(words):
        start = words[i][0]
        for j in range(min(len(words), i + max_words) - 1, i - 1, -1):
            surface = folded[start : words[j][1]]
            if surface in instances:
                mentions.append(EntityMention(surface, start, words[j][1]))
                i = j + 1
                break
        else:
            i += 1
    return mentions
