"""Manual cloze templates: parse ``X``/``[mask]`` strings and render token inputs."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

TEXT = "TEXT"
MASK = "MASK"
LITERAL = "LITERAL"

_MARKERS = re.compile(r"(?P<mask>(?i:\[mask\]))|(?P<text>(?<![\w\[])X(?![\w\]]))")


class TemplateError(ValueError):
    pass


class RenderError(ValueError):
    pass


class Tokenization(Protocol):
    """What rendering needs from a scoring oracle."""

    mask_token_id: int
    max_length: int

    def tokenize(self, text: str) -> list[int]:
        """Token ids for ``text`` without any special tokens."""

    def add_special_tokens(self, ids: list[int]) -> list[int]:
        """Wrap a sequence with the model's start/end tokens."""

    def num_special_tokens(self) -> int: ...


@dataclass(frozen=True)
class Segment:
    kind: str
    text: str = ""


@dataclass(frozen=True)
class PromptTemplate:
    segments: tuple[Segment, ...]
    source: str

    def serialize(self) -> str:
        return "".join(seg.text for seg in self.segments)

    def __str__(self) -> str:
        return self.source


@dataclass(frozen=True)
class RenderedPrompt:
    tokens: tuple[int, ...]
    mask_index: int
    source_text: str
    # [text_start, text_end) token span of the inserted text
    text_start: int
    text_end: int
    truncated: bool = False

    def text_tokens(self) -> tuple[int, ...]:
        return self.tokens[self.text_start : self.text_end]


def parse_template(template_string: str) -> PromptTemplate:
    """Split a template like ``"X This topic is about [mask]"`` into segments.

    ``X`` must appear as a standalone token (it is not matched inside words
    such as "Xbox"); ``[mask]`` is matched case-insensitively. Each marker
    segment keeps its original spelling so the template re-serializes
    byte-for-byte.
    """
    segments: list[Segment] = []
    pos = 0
    for m in _MARKERS.finditer(template_string):
        if m.start() > pos:
            segments.append(Segment(LITERAL, template_string[pos : m.start()]))
        segments.append(Segment(MASK if m.group("mask") else TEXT, m.group(0)))
        pos = m.end()
    if pos < len(template_string):
        segments.append(Segment(LITERAL, template_string[pos:]))

    for kind, marker in ((TEXT, "X"), (MASK, "[mask]")):
        count = sum(seg.kind == kind for seg in segments)
        if count == 0:
            raise TemplateError(f"template {template_string!r} is missing the {marker} marker")
        if count > 1:
            raise TemplateError(f"template {template_string!r} has {count} {marker} markers, expected one")
    return PromptTemplate(tuple(segments), template_string)


def load_templates(path: str | Path) -> dict[int, PromptTemplate]:
    """One template per line; ids are 1-based line numbers."""
    templates = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                templates[lineno] = parse_template(line)
            except TemplateError as err:
                raise TemplateError(f"{path}:{lineno}: {err}") from None
    return templates


def render(template: PromptTemplate, text: str, tokenizer: Tokenization) -> RenderedPrompt:
    """Fill the template with ``text`` and tokenize it for the oracle.

    If the result would exceed ``tokenizer.max_length``, tokens are dropped
    from the end of the inserted text only; template literals and the mask
    always survive.
    """
    if not text.strip():
        raise RenderError("text is empty")
    pieces: list[tuple[str, list[int]]] = []
    for seg in template.segments:
        if seg.kind == LITERAL:
            pieces.append((LITERAL, tokenizer.tokenize(seg.text)))
        elif seg.kind == MASK:
            pieces.append((MASK, [tokenizer.mask_token_id]))
        else:
            pieces.append((TEXT, tokenizer.tokenize(text)))

    fixed = tokenizer.num_special_tokens() + sum(len(ids) for kind, ids in pieces if kind != TEXT)
    budget = tokenizer.max_length - fixed
    truncated = False
    for i, (kind, ids) in enumerate(pieces):
        if kind == TEXT and len(ids) > budget:
            ids = ids[: max(budget, 0)]
            pieces[i] = (kind, ids)
            truncated = True
        if kind == TEXT and not ids:
            raise RenderError(
                f"text {text[:40]!r} is empty after tokenization/truncation "
                f"(template uses {fixed} of {tokenizer.max_length} tokens)"
            )

    body: list[int] = []
    text_start = text_end = mask_at = -1
    for kind, ids in pieces:
        if kind == TEXT:
            text_start = len(body)
            text_end = text_start + len(ids)
        elif kind == MASK:
            mask_at = len(body)
        body.extend(ids)

    tokens = tokenizer.add_special_tokens(body)
    offset = _prefix_length(body, tokens)
    mask_index = mask_at + offset
    if tokens.count(tokenizer.mask_token_id) != 1:
        raise RenderError("rendered prompt must contain exactly one mask token")
    return RenderedPrompt(
        tokens=tuple(tokens),
        mask_index=mask_index,
        source_text=text,
        text_start=text_start + offset,
        text_end=text_end + offset,
        truncated=truncated,
    )


def _prefix_length(body: Sequence[int], wrapped: Sequence[int]) -> int:
    # number of start tokens the oracle prepended
    for offset in range(len(wrapped) - len(body) + 1):
        if list(wrapped[offset : offset + len(body)]) == list(body):
            return offset
    raise RenderError("oracle special-token wrapping altered the body tokens")
