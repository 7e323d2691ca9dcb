"""End-to-end synthesis pipeline: images in, pseudo pairs out.

For every image (processed in id order): retrieve per-category words,
synthesize and score candidate captions, keep the top-M, then refine the
kept caption features by contrastive latent optimization against the image
features of the surrounding chunk of n images. Results land in a JSONL
pair file, a companion EMB1 bank, and a manifest with full accounting.

Provider encode accounting in the manifest is exact: the memo cache is
scoped to one image's synthesis, so with the two-stage scheme each image
requests exactly K^3 + K*K^3 caption encodes (vocabulary encoding is
counted separately, once per run).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clo import CloConfig, alignment, clo_refine
from .embeddings import FeatureMatrix, load_embeddings, save_embeddings
from .errors import MalformedJsonError, ProviderFailureError
from .perturb import (
    MixingSchedule,
    PerturbConfig,
    PseudoPair,
    gaussian_pseudo_feature,
    pair_to_json_line,
    pairs_to_matrix,
)
from .providers import BatchedEncoder, resolve_provider
from .retrieval import RetrievalConfig, synthesize_captions
from .vocab import (
    MSCOCO_TEMPLATE,
    REDUCED_TEMPLATE,
    PromptTemplate,
    Vocabulary,
    load_templates,
    load_vocabulary,
)


@dataclass
class PipelineConfig:
    embeddings: str
    vocab: str
    out_dir: str
    templates: str | None = None
    provider: str = "synthetic"
    seed: int = 0
    batch_n: int = 64
    gaussian_draws: int = 0
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    clo: CloConfig = field(default_factory=CloConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    schedule: MixingSchedule | None = None

    def __post_init__(self) -> None:
        if self.batch_n < 1:
            raise ValueError("batch_n must be >= 1")
        if self.gaussian_draws < 0:
            raise ValueError("gaussian_draws must be >= 0")


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a PipelineConfig from a TOML-shaped dict.

    Top-level keys: embeddings, vocab, templates, out_dir, provider, seed,
    batch_n, gaussian_draws. Sections: [retrieval] k/m/iterative/
    score_floor/batch_size, [clo] t/lambda/tau/renormalize, [perturb] xi,
    [schedule] kind/total_iters/floor/switch_point.
    """
    raw = dict(raw)

    def section(name: str) -> dict:
        sec = raw.pop(name, {})
        if not isinstance(sec, dict):
            raise MalformedJsonError(f"config section [{name}] must be a table")
        return dict(sec)

    ret = section("retrieval")
    clo_sec = section("clo")
    pert = section("perturb")
    sched = section("schedule")

    retrieval = RetrievalConfig(
        k=int(ret.pop("k", 2)),
        m=int(ret.pop("m", 20)),
        iterative=bool(ret.pop("iterative", True)),
        score_floor=ret.pop("score_floor", None),
        batch_size=int(ret.pop("batch_size", 256)),
    )
    clo = CloConfig(
        steps=int(clo_sec.pop("t", 10)),
        step_size=float(clo_sec.pop("lambda", 0.01)),
        tau=float(clo_sec.pop("tau", 0.5)),
        renormalize=bool(clo_sec.pop("renormalize", True)),
    )
    seed = int(raw.pop("seed", 0))
    perturb = PerturbConfig(xi=float(pert.pop("xi", 3.0)), seed=int(pert.pop("seed", seed)))
    schedule = None
    if sched:
        schedule = MixingSchedule(
            kind=str(sched.pop("kind", "linear")),
            total_iters=int(sched.pop("total_iters", 1)),
            floor=float(sched.pop("floor", 0.0)),
            switch_point=sched.pop("switch_point", None),
        )

    for name, leftover in (("retrieval", ret), ("clo", clo_sec), ("perturb", pert), ("schedule", sched)):
        if leftover:
            raise MalformedJsonError(f"unknown keys in [{name}]: {sorted(leftover)}")

    cfg = PipelineConfig(
        embeddings=str(raw.pop("embeddings", "")),
        vocab=str(raw.pop("vocab", "")),
        out_dir=str(raw.pop("out_dir", "")),
        templates=raw.pop("templates", None),
        provider=str(raw.pop("provider", "synthetic")),
        seed=seed,
        batch_n=int(raw.pop("batch_n", 64)),
        gaussian_draws=int(raw.pop("gaussian_draws", 0)),
        retrieval=retrieval,
        clo=clo,
        perturb=perturb,
        schedule=schedule,
    )
    if raw:
        raise MalformedJsonError(f"unknown config keys: {sorted(raw)}")
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = {
        "embeddings": cfg.embeddings,
        "vocab": cfg.vocab,
        "templates": cfg.templates,
        "out_dir": cfg.out_dir,
        "provider": cfg.provider,
        "seed": cfg.seed,
        "batch_n": cfg.batch_n,
        "gaussian_draws": cfg.gaussian_draws,
        "retrieval": dataclasses.asdict(cfg.retrieval),
        "clo": dataclasses.asdict(cfg.clo),
        "perturb": dataclasses.asdict(cfg.perturb),
    }
    out["schedule"] = None if cfg.schedule is None else dataclasses.asdict(cfg.schedule)
    return out


def _pick_templates(cfg: PipelineConfig) -> tuple[PromptTemplate, PromptTemplate]:
    """(full, reduced). A template file lists the full template first; the
    reduced one is optional unless the iterative path needs it."""
    if cfg.templates is None:
        return MSCOCO_TEMPLATE, REDUCED_TEMPLATE
    templates = load_templates(cfg.templates)
    full = templates[0]
    if len(templates) > 1:
        return full, templates[1]
    if cfg.retrieval.iterative:
        raise MalformedJsonError(
            f"{cfg.templates}: iterative synthesis needs a second, reduced template"
        )
    return full, REDUCED_TEMPLATE


def _sorted_by_id(images: FeatureMatrix) -> FeatureMatrix:
    order = sorted(range(images.count), key=lambda r: images.ids[r])
    return FeatureMatrix(
        rows=images.rows[order],
        ids=[images.ids[r] for r in order],
        unit_normalized=images.unit_normalized,
    )


def _refine_chunk(
    chunk_images: FeatureMatrix,
    chunk_captions: list[list],
    cfg: PipelineConfig,
) -> list[list[np.ndarray]]:
    """CLO-refine caption features for one chunk of images.

    Caption rank r of every image in the chunk forms one batch: H holds
    each member's r-th caption feature, F the members' image features.
    Images with fewer than r+1 captions sit the round out. Returns per
    image a list of refined float32 features aligned with its captions.
    """
    refined: list[list[np.ndarray]] = [[None] * len(caps) for caps in chunk_captions]
    max_rank = max((len(caps) for caps in chunk_captions), default=0)
    for rank in range(max_rank):
        members = [ci for ci, caps in enumerate(chunk_captions) if len(caps) > rank]
        H0 = np.stack([chunk_captions[ci][rank].embedding for ci in members])
        F = chunk_images.rows[members]
        out = clo_refine(H0, F, cfg.clo)
        for row, ci in enumerate(members):
            refined[ci][rank] = out[row]
    return refined


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run synthesis end to end; returns the manifest (also written to
    out_dir/manifest.json beside pairs.jsonl and pairs.emb1).

    On a provider failure the pairs of every fully completed chunk are
    flushed, the manifest is written with partial=true, and the error is
    re-raised.
    """
    t_start = time.monotonic()
    if not cfg.clo.renormalize:
        # emitted features must be unit-norm; raw-trajectory refinement is
        # only for the standalone clo-refine command
        raise ValueError("run_pipeline requires clo.renormalize = true")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = _sorted_by_id(load_embeddings(cfg.embeddings))
    vocab = load_vocabulary(cfg.vocab)
    full_template, reduced_template = _pick_templates(cfg)

    provider = resolve_provider(cfg.provider, dim=images.dim, seed=cfg.seed)
    encoder = BatchedEncoder(provider, batch_size=cfg.retrieval.batch_size)

    vocab.attach_embeddings(encoder)
    vocab_texts = encoder.encoded_texts
    encoder.reset_cache()

    pairs: list[PseudoPair] = []
    caption_texts_per_image: dict[str, int] = {}
    diag_before: list[float] = []
    diag_after: list[float] = []
    failure: ProviderFailureError | None = None
    images_completed = 0

    try:
        for start in range(0, images.count, cfg.batch_n):
            chunk = FeatureMatrix(
                rows=images.rows[start : start + cfg.batch_n],
                ids=images.ids[start : start + cfg.batch_n],
                unit_normalized=images.unit_normalized,
            )
            chunk_captions = []
            for ci in range(chunk.count):
                encoder.reset_cache()
                before = encoder.encoded_texts
                caps = synthesize_captions(
                    chunk.rows[ci],
                    vocab,
                    encoder,
                    cfg.retrieval,
                    full_template,
                    reduced_template,
                )
                caption_texts_per_image[chunk.ids[ci]] = encoder.encoded_texts - before
                chunk_captions.append(caps)

            refined = _refine_chunk(chunk, chunk_captions, cfg)

            if any(chunk_captions):
                rows0 = [
                    (ci, r)
                    for ci, caps in enumerate(chunk_captions)
                    for r in range(len(caps))
                ]
                if rows0:
                    H0 = np.stack([chunk_captions[ci][r].embedding for ci, r in rows0])
                    H1 = np.stack([refined[ci][r] for ci, r in rows0])
                    F = np.stack([chunk.rows[ci] for ci, _ in rows0])
                    diag_before.append(_mean_diag_cos(F, H0))
                    diag_after.append(_mean_diag_cos(F, H1))

            source = "clo" if cfg.clo.steps > 0 else "retrieval"
            for ci in range(chunk.count):
                image_id = chunk.ids[ci]
                for r, cap in enumerate(chunk_captions[ci]):
                    pairs.append(
                        PseudoPair(
                            image_id=image_id,
                            feature=refined[ci][r],
                            source=source,
                            score=cap.score,
                            caption=cap.text,
                        )
                    )
                for j in range(cfg.gaussian_draws):
                    pairs.append(
                        PseudoPair(
                            image_id=image_id,
                            feature=gaussian_pseudo_feature(
                                chunk.rows[ci], cfg.perturb, image_id, j
                            ),
                            source="gaussian",
                        )
                    )
            images_completed += chunk.count
    except ProviderFailureError as exc:
        failure = exc

    for pair in pairs:
        norm = float(np.linalg.norm(pair.feature.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise AssertionError(f"non-unit pair feature for {pair.image_id}: {norm}")

    jsonl_path = out_dir / "pairs.jsonl"
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(pair_to_json_line(pair) + "\n")

    bank = pairs_to_matrix(pairs)
    if bank.count == 0 and images.dim > 0:
        bank = FeatureMatrix(
            rows=np.empty((0, images.dim), dtype=np.float32), ids=[], unit_normalized=True
        )
    save_embeddings(out_dir / "pairs.emb1", bank)

    manifest = {
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "images_total": images.count,
        "images_completed": images_completed,
        "pairs_emitted": len(pairs),
        "vocab_texts_encoded": vocab_texts,
        "caption_texts_per_image": caption_texts_per_image,
        "caption_texts_total": sum(caption_texts_per_image.values()),
        "provider_calls": encoder.call_count,
        "requested_texts": encoder.requested_texts,
        "mean_diag_cos_before_clo": _mean_or_none(diag_before),
        "mean_diag_cos_after_clo": _mean_or_none(diag_after),
        "partial": failure is not None,
        "error": None if failure is None else str(failure),
        "wall_time_s": time.monotonic() - t_start,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2)

    if failure is not None:
        raise failure
    return manifest


def _mean_diag_cos(F: np.ndarray, H: np.ndarray) -> float:
    F64 = np.asarray(F, dtype=np.float64)
    H64 = np.asarray(H, dtype=np.float64)
    F64 = F64 / np.linalg.norm(F64, axis=1, keepdims=True)
    H64 = H64 / np.linalg.norm(H64, axis=1, keepdims=True)
    return float(np.einsum("ij,ij->i", F64, H64).mean())


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def clo_diagnostics(
    images: FeatureMatrix, texts: FeatureMatrix, tau: float
) -> dict[str, float]:
    """Alignment health of paired banks (row r of texts belongs to row r
    of images): diagonal alignment mean and in-batch retrieval accuracy."""
    a = alignment(images.rows, texts.rows, tau)
    n = a.c.shape[0]
    sims = _unit_rows_for_diag(images.rows) @ _unit_rows_for_diag(texts.rows).T
    acc = float((sims.argmax(axis=0) == np.arange(n)).mean())
    return {
        "mean_diag_alignment": float(np.diagonal(a.c).mean()),
        "objective": a.objective,
        "in_batch_accuracy": acc,
    }


def _unit_rows_for_diag(mat: np.ndarray) -> np.ndarray:
    m64 = np.asarray(mat, dtype=np.float64)
    return m64 / np.linalg.norm(m64, axis=1, keepdims=True)
