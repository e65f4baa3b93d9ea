"""Prompt tokenization with caller-supplied content annotations.

The extractor does not detect objects; the caller says which prompt
words name segmentation targets and which class id each gets. This
module turns a prompt plus those annotations into the token list a
bundle needs: word-level tokens wrapped in start/end markers, padded to
the profile's window, each categorized as

- ``special``: sentence-level markers whose attention columns distort
  per-token statistics (always the start token; the end token too when
  the profile says so),
- ``content``: words covered by an annotation, carrying its class id —
  every occurrence of an annotated word is flagged, and all words of a
  multi-word annotation share one class id so the engine averages their
  columns,
- ``stop``: everything else — articles, unannotated words, the end
  marker under the ``sos`` rule, and padding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PromptError

SOS_TEXT = "<sos>"
EOS_TEXT = "<eos>"
PAD_TEXT = "<pad>"

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class PromptToken:
    index: int
    text: str
    category: str
    class_id: int | None = None


@dataclass(frozen=True)
class ClassAnnotation:
    """One segmentation target: a prompt phrase and its class id."""

    phrase: str
    class_id: int
    is_background: bool = False

    def words(self) -> tuple[str, ...]:
        words = tuple(_WORD_RE.findall(self.phrase.lower()))
        if not words:
            raise PromptError(f"annotation {self.phrase!r} has no words")
        return words


def split_words(prompt: str) -> list[str]:
    """Lowercased word tokens; punctuation separates, never survives."""
    return _WORD_RE.findall(prompt.lower())


def _validate(annotations: list[ClassAnnotation]) -> None:
    seen_ids: dict[int, str] = {}
    for ann in annotations:
        if ann.class_id < 1:
            raise PromptError(
                f"annotation {ann.phrase!r}: class_id must be >= 1 "
                "(0 is the implicit background)"
            )
        if ann.class_id in seen_ids:
            raise PromptError(
                f"class_id {ann.class_id} used by both "
                f"{seen_ids[ann.class_id]!r} and {ann.phrase!r}"
            )
        seen_ids[ann.class_id] = ann.phrase


def _mark_content(
    words: list[str], annotations: list[ClassAnnotation]
) -> list[int | None]:
    """class id per word, matching every occurrence of every annotation.

    Longer phrases are matched first so "fire hydrant" wins over a
    separate "fire" annotation at the same position; within one phrase
    all words take its class id.
    """
    marks: list[int | None] = [None] * len(words)
    ordered = sorted(annotations, key=lambda a: -len(a.words()))
    for ann in ordered:
        target = ann.words()
        span = len(target)
        found = False
        for start in range(0, len(words) - span + 1):
            if tuple(words[start:start + span]) != target:
                continue
            if any(marks[i] is not None for i in range(start, start + span)):
                continue  # already claimed by a longer phrase
            for i in range(start, start + span):
                marks[i] = ann.class_id
            found = True
        if not found:
            raise PromptError(
                f"annotation {ann.phrase!r} does not occur in the prompt"
            )
    return marks


def tokenize(
    prompt: str,
    annotations: list[ClassAnnotation],
    special_token_rule: str,
    pad_to_length: int,
) -> list[PromptToken]:
    """Token list for a bundle: <sos> + words + <eos> + padding."""
    if not annotations:
        raise PromptError("at least one content annotation is required")
    _validate(annotations)
    words = split_words(prompt)
    if not words:
        raise PromptError("prompt contains no words")
    if len(words) + 2 > pad_to_length:
        raise PromptError(
            f"prompt has {len(words)} words; at most {pad_to_length - 2} fit "
            f"in the {pad_to_length}-token window"
        )
    marks = _mark_content(words, annotations)

    eos_category = "special" if special_token_rule == "sos_eos" else "stop"
    tokens = [PromptToken(index=0, text=SOS_TEXT, category="special")]
    for word, mark in zip(words, marks):
        category = "content" if mark is not None else "stop"
        tokens.append(
            PromptToken(
                index=len(tokens), text=word, category=category, class_id=mark
            )
        )
    tokens.append(
        PromptToken(index=len(tokens), text=EOS_TEXT, category=eos_category)
    )
    while len(tokens) < pad_to_length:
        tokens.append(
            PromptToken(index=len(tokens), text=PAD_TEXT, category="stop")
        )
    return tokens
