"""Word categories, prompt templates, and cartesian caption composition.

A vocabulary is a set of named word lists. Canonical category names are
Noun, Verb, NumeralQuantifier, and Adjective; anything else must be spelled
"Custom:<name>". A template is a sequence of slots, each either a category
reference or a literal token run; rendering substitutes one word per
category slot, in order, and joins everything with single spaces.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import FeatureMatrix
from .errors import (
    ArityMismatchError,
    EmptyCategoryError,
    MalformedJsonError,
    MissingCategoryError,
)

NOUN = "Noun"
VERB = "Verb"
NUMERAL_QUANTIFIER = "NumeralQuantifier"
ADJECTIVE = "Adjective"
CUSTOM_PREFIX = "Custom:"

CANONICAL_CATEGORIES = (NOUN, VERB, NUMERAL_QUANTIFIER, ADJECTIVE)


def _valid_category(name: str) -> bool:
    return name in CANONICAL_CATEGORIES or (
        name.startswith(CUSTOM_PREFIX) and len(name) > len(CUSTOM_PREFIX)
    )


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    """One template position: a category reference or a fixed literal."""

    category: str | None = None
    literal: str | None = None

    def __post_init__(self) -> None:
        if (self.category is None) == (self.literal is None):
            raise MalformedJsonError("slot needs exactly one of category/literal")
        if self.category is not None and not _valid_category(self.category):
            raise MalformedJsonError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class PromptTemplate:
    slots: tuple[Slot, ...]

    @property
    def category_slots(self) -> tuple[int, ...]:
        """Indices of the fillable slots, in template order."""
        return tuple(i for i, s in enumerate(self.slots) if s.category is not None)

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.slots[i].category for i in self.category_slots)


def _cat(name: str) -> Slot:
    return Slot(category=name)


# The six-slot caption shape mined from MS-COCO, and the reduced three-slot
# shape used to pre-select subject-relation-object triples.
MSCOCO_TEMPLATE = PromptTemplate(
    slots=(
        _cat(NUMERAL_QUANTIFIER),
        _cat(ADJECTIVE),
        _cat(NOUN),
        _cat(VERB),
        _cat(ADJECTIVE),
        _cat(NOUN),
    )
)

REDUCED_TEMPLATE = PromptTemplate(slots=(_cat(NOUN), _cat(VERB), _cat(NOUN)))


def default_templates() -> list[PromptTemplate]:
    return [MSCOCO_TEMPLATE, REDUCED_TEMPLATE]


def load_templates(path: str | Path) -> list[PromptTemplate]:
    """Parse a template file: a JSON list of slot arrays.

    Each slot is a category name string or {"lit": "<text>"}.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(f"{path}: {exc}")
    if not isinstance(raw, list) or not raw:
        raise MalformedJsonError(f"{path}: expected a non-empty list of templates")
    templates = []
    for entry in raw:
        if not isinstance(entry, list) or not entry:
            raise MalformedJsonError(f"{path}: template must be a non-empty array")
        slots = []
        for slot in entry:
            if isinstance(slot, str):
                slots.append(Slot(category=slot))
            elif isinstance(slot, dict) and set(slot) == {"lit"} and isinstance(slot["lit"], str):
                slots.append(Slot(literal=slot["lit"]))
            else:
                raise MalformedJsonError(f"{path}: bad slot {slot!r}")
        templates.append(PromptTemplate(slots=tuple(slots)))
    return templates


def render(template: PromptTemplate, slot_words: tuple[str, ...] | list[str]) -> str:
    """Substitute words into category slots positionally; single-space join."""
    need = len(template.category_slots)
    if len(slot_words) != need:
        raise ArityMismatchError(f"{len(slot_words)} words for {need} slots")
    words = iter(slot_words)
    parts = []
    for slot in template.slots:
        parts.append(slot.literal if slot.literal is not None else next(words))
    return " ".join(parts)


def parse_slot_words(template: PromptTemplate, text: str) -> tuple[str, ...]:
    """Invert render() for single-token category words.

    Literal slots consume exactly their own tokens; every category slot
    consumes one token. Raises ArityMismatchError when the text does not
    fit the template shape.
    """
    tokens = text.split(" ")
    pos = 0
    out = []
    for slot in template.slots:
        if slot.literal is not None:
            lit_tokens = slot.literal.split(" ")
            if tokens[pos : pos + len(lit_tokens)] != lit_tokens:
                raise ArityMismatchError(f"literal {slot.literal!r} not found in {text!r}")
            pos += len(lit_tokens)
        else:
            if pos >= len(tokens):
                raise ArityMismatchError(f"{text!r} too short for template")
            out.append(tokens[pos])
            pos += 1
    if pos != len(tokens):
        raise ArityMismatchError(f"{text!r} has trailing tokens")
    return tuple(out)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


@dataclass
class Vocabulary:
    """Category name -> ordered, deduplicated word list.

    Word embeddings are attached lazily (one FeatureMatrix per category,
    rows aligned with the word order) once an encoder is available.
    """

    categories: dict[str, list[str]]
    embeddings: dict[str, FeatureMatrix] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, words in self.categories.items():
            if not _valid_category(name):
                raise MalformedJsonError(f"unknown category {name!r}")
            if not words:
                raise EmptyCategoryError(f"category {name!r} is empty")

    def attach_embeddings(self, provider) -> None:
        """Encode every word with `provider` (anything with encode_texts)."""
        for name, words in self.categories.items():
            rows = provider.encode_texts(words)
            self.embeddings[name] = FeatureMatrix(
                rows=rows, ids=list(words), unit_normalized=True
            )

    def words_encoded(self) -> int:
        return sum(len(w) for w in self.categories.values())


def load_vocabulary(
    path: str | Path,
    allow: dict[str, list[str]] | None = None,
    deny: dict[str, list[str]] | None = None,
) -> Vocabulary:
    """Load a JSON object of category -> word array, with optional filters.

    Words are stripped, blanks dropped, duplicates removed keeping first
    occurrence. `allow`/`deny` are per-category word lists applied after
    cleaning. A category left empty raises EmptyCategoryError.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(f"{path}: {exc}")
    if not isinstance(raw, dict) or not raw:
        raise MalformedJsonError(f"{path}: expected an object of word arrays")

    categories: dict[str, list[str]] = {}
    for name, words in raw.items():
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise MalformedJsonError(f"{path}: category {name!r} must be a string array")
        cleaned = []
        seen = set()
        allowed = set(allow[name]) if allow and name in allow else None
        denied = set(deny[name]) if deny and name in deny else set()
        for word in words:
            word = word.strip()
            if not word or word in seen or word in denied:
                continue
            if allowed is not None and word not in allowed:
                continue
            seen.add(word)
            cleaned.append(word)
        if not cleaned:
            raise EmptyCategoryError(f"{path}: category {name!r} empty after filtering")
        categories[name] = cleaned
    return Vocabulary(categories=categories)


def save_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab.categories, fh, ensure_ascii=False, indent=2)


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------


@dataclass
class PseudoCaption:
    """A rendered caption, optionally carrying its text feature and score."""

    text: str
    slot_words: tuple[str, ...]
    embedding: np.ndarray | None = None
    score: float | None = None

    def __post_init__(self) -> None:
        if self.score is not None and self.embedding is None:
            raise ValueError("caption with a score must carry its embedding")


def compose_prompts(
    template: PromptTemplate,
    candidates: dict[str, list[str]],
    dedupe: bool = False,
) -> list[PseudoCaption]:
    """Render the full cartesian product of candidate words over the slots.

    Every category slot draws independently from candidates[category], so a
    template with two Noun slots and K nouns contributes K*K combinations.
    Output order is lexicographic in the per-slot candidate indices. With
    dedupe=True, captions with previously seen text are dropped afterwards
    (the product count contract applies to the pre-dedup stream).
    """
    per_slot: list[list[str]] = []
    for cat in (template.slots[i].category for i in template.category_slots):
        words = candidates.get(cat)
        if not words:
            raise MissingCategoryError(f"no candidates for category {cat!r}")
        per_slot.append(list(words))

    captions = []
    seen: set[str] = set()
    for combo in itertools.product(*per_slot):
        text = render(template, combo)
        if dedupe:
            if text in seen:
                continue
            seen.add(text)
        captions.append(PseudoCaption(text=text, slot_words=tuple(combo)))
    return captions
