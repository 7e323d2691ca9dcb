"""Image-to-word and image-to-prompt retrieval in the joint space.

Caption synthesis for one image runs in up to four steps: retrieve top-K
words per vocabulary category, compose candidate captions from a template,
encode them, and keep the best-aligned ones. The two-stage variant first
ranks subject-relation-object triples with the reduced template and only
then expands the full template around the surviving triples, which costs
K^3 + K*K^3 = (K+1)*K^3 encoder passes instead of K^6.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np

from .embeddings import top_k
from .errors import ArityMismatchError, MOutOfRangeError
from .providers import EncoderProvider
from .vocab import (
    MSCOCO_TEMPLATE,
    REDUCED_TEMPLATE,
    PromptTemplate,
    PseudoCaption,
    Vocabulary,
    compose_prompts,
    render,
)


@dataclass
class RetrievalConfig:
    """Knobs for caption synthesis.

    k: words kept per category and triples kept after stage one.
    m: captions kept per image after final scoring.
    iterative: two-stage synthesis (True) or the full cartesian product.
    score_floor: optional absolute cosine floor applied after top-M.
    batch_size: encoder batch size used by the batching wrapper.
    """

    k: int = 2
    m: int = 20
    iterative: bool = True
    score_floor: float | None = None
    batch_size: int = 256

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def image_to_words(
    image_feat: np.ndarray, vocab: Vocabulary, k: int
) -> dict[str, list[str]]:
    """Top-k words of every vocabulary category, by cosine to the image."""
    if not vocab.embeddings:
        raise ValueError("vocabulary has no embeddings; call attach_embeddings first")
    out: dict[str, list[str]] = {}
    for name in vocab.categories:
        bank = vocab.embeddings.get(name)
        if bank is None:
            raise ValueError(f"category {name!r} has no embeddings attached")
        hit = top_k(image_feat, bank, k)
        out[name] = list(hit.ids)
    return out


def score_captions(
    image_feat: np.ndarray,
    captions: list[PseudoCaption],
    provider: EncoderProvider,
) -> list[PseudoCaption]:
    """Encode caption texts and attach cosine-to-image scores."""
    if not captions:
        return []
    rows = np.asarray(provider.encode_texts([c.text for c in captions]), dtype=np.float32)
    q = np.asarray(image_feat, dtype=np.float64)
    q = q / np.linalg.norm(q)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    sims = (rows.astype(np.float64) @ q) / norms
    return [
        dataclasses.replace(c, embedding=rows[i], score=float(sims[i]))
        for i, c in enumerate(captions)
    ]


def _select_top(scored: list[PseudoCaption], m: int) -> list[PseudoCaption]:
    # stable sort on the original order, so score ties keep earlier captions
    scores = np.array([c.score for c in scored], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")[:m]
    return [scored[i] for i in order]


def image_to_prompts(
    image_feat: np.ndarray,
    captions: list[PseudoCaption],
    provider: EncoderProvider,
    m: int,
    score_floor: float | None = None,
) -> list[PseudoCaption]:
    """Encode all candidate captions and keep the top-m by cosine.

    Ties break toward the caption appearing earlier in `captions`. With a
    score_floor, captions below it are dropped afterwards, so fewer than m
    may come back.
    """
    if m < 1 or m > len(captions):
        raise MOutOfRangeError(f"m={m} outside [1, {len(captions)}]")
    scored = score_captions(image_feat, captions, provider)
    kept = _select_top(scored, m)
    if score_floor is not None:
        kept = [c for c in kept if c.score >= score_floor]
    return kept


def exhaustive_synthesis(
    image_feat: np.ndarray,
    vocab: Vocabulary,
    provider: EncoderProvider,
    cfg: RetrievalConfig,
    template: PromptTemplate = MSCOCO_TEMPLATE,
) -> list[PseudoCaption]:
    """Single-stage synthesis: encode the full K^s cartesian product.

    m is clamped to the candidate count so small K stays usable.
    """
    words = image_to_words(image_feat, vocab, cfg.k)
    captions = compose_prompts(template, words)
    return image_to_prompts(
        image_feat, captions, provider, min(cfg.m, len(captions)), cfg.score_floor
    )


def _bind_reduced_slots(
    full: PromptTemplate, reduced: PromptTemplate
) -> tuple[list[int], list[int]]:
    """Match reduced-template slots to full-template slots by category,
    occurrence-wise (first Noun to first Noun slot, and so on).

    Returns (bound, free): positions into the full template's category
    slot list that the triple occupies, and the remaining free positions.
    """
    full_cats = list(full.categories)
    taken = [False] * len(full_cats)
    bound: list[int] = []
    for cat in reduced.categories:
        for pos, fc in enumerate(full_cats):
            if fc == cat and not taken[pos]:
                taken[pos] = True
                bound.append(pos)
                break
        else:
            raise ArityMismatchError(
                f"reduced template does not embed into full template at {cat!r}"
            )
    free = [p for p in range(len(full_cats)) if not taken[p]]
    return bound, free


def two_stage_synthesis(
    image_feat: np.ndarray,
    vocab: Vocabulary,
    provider: EncoderProvider,
    cfg: RetrievalConfig,
    full_template: PromptTemplate = MSCOCO_TEMPLATE,
    reduced_template: PromptTemplate = REDUCED_TEMPLATE,
) -> list[PseudoCaption]:
    """Two-stage synthesis around retained triples.

    Stage one scores the reduced template's K^3 compositions and keeps the
    top-K triples. Stage two rebuilds the full template with each retained
    triple pinned into its matching slots and the remaining slots swept,
    giving K * K^3 more captions; only those are candidates for the final
    top-m. Exactly (K+1) * K^3 caption encodes total for the canonical
    3-slot/6-slot pair.
    """
    words = image_to_words(image_feat, vocab, cfg.k)

    stage1 = compose_prompts(reduced_template, words)
    scored1 = score_captions(image_feat, stage1, provider)
    triples = _select_top(scored1, min(cfg.k, len(scored1)))

    bound, free = _bind_reduced_slots(full_template, reduced_template)
    full_cats = list(full_template.categories)
    free_candidates = [words[full_cats[p]] for p in free]

    stage2: list[PseudoCaption] = []
    n_cat = len(full_cats)
    for triple in triples:
        for combo in itertools.product(*free_candidates):
            slot_words: list[str | None] = [None] * n_cat
            for pos, word in zip(bound, triple.slot_words):
                slot_words[pos] = word
            for pos, word in zip(free, combo):
                slot_words[pos] = word
            filled = tuple(slot_words)  # type: ignore[arg-type]
            stage2.append(
                PseudoCaption(text=render(full_template, filled), slot_words=filled)
            )

    scored2 = score_captions(image_feat, stage2, provider)
    kept = _select_top(scored2, min(cfg.m, len(scored2)))
    if cfg.score_floor is not None:
        kept = [c for c in kept if c.score >= cfg.score_floor]
    return kept


def synthesize_captions(
    image_feat: np.ndarray,
    vocab: Vocabulary,
    provider: EncoderProvider,
    cfg: RetrievalConfig,
    full_template: PromptTemplate = MSCOCO_TEMPLATE,
    reduced_template: PromptTemplate = REDUCED_TEMPLATE,
) -> list[PseudoCaption]:
    """Dispatch on cfg.iterative."""
    if cfg.iterative:
        return two_stage_synthesis(
            image_feat, vocab, provider, cfg, full_template, reduced_template
        )
    return exhaustive_synthesis(image_feat, vocab, provider, cfg, full_template)
