"""End-to-end pipeline runs on synthetic clustered corpora."""

import json
from pathlib import Path

import numpy as np
import pytest

from pseudopair.clo import CloConfig
from pseudopair.embeddings import FeatureMatrix, load_embeddings, save_embeddings
from pseudopair.errors import MalformedJsonError, ProviderFailureError
from pseudopair.perturb import PerturbConfig, read_pairs_jsonl
from pseudopair.pipeline import (
    PipelineConfig,
    clo_diagnostics,
    config_from_dict,
    config_to_dict,
    run_pipeline,
)
from pseudopair.providers import SyntheticEncoder
from pseudopair.retrieval import RetrievalConfig
from pseudopair.synthetic import build_cluster_corpus


def _materialize(tmp_path: Path, corpus, name="corpus"):
    emb = tmp_path / f"{name}.emb1"
    vocab = tmp_path / f"{name}_vocab.json"
    save_embeddings(emb, corpus.images)
    vocab.write_text(json.dumps(corpus.vocab.categories))
    return emb, vocab


def _config(tmp_path: Path, emb, vocab, out_name="run", **kw) -> PipelineConfig:
    defaults = dict(
        embeddings=str(emb),
        vocab=str(vocab),
        out_dir=str(tmp_path / out_name),
        provider="synthetic",
        seed=11,
        batch_n=8,
        retrieval=RetrievalConfig(k=2, m=3),
        clo=CloConfig(steps=4, step_size=0.01, tau=0.5),
        perturb=PerturbConfig(xi=3.0, seed=11),
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


def test_small_run_outputs_and_accounting(tmp_path):
    corpus = build_cluster_corpus(12, 4, 64, seed=11)
    emb, vocab = _materialize(tmp_path, corpus)
    cfg = _config(tmp_path, emb, vocab, gaussian_draws=2)
    manifest = run_pipeline(cfg)

    assert manifest["images_total"] == 12
    assert manifest["images_completed"] == 12
    assert manifest["partial"] is False
    # two-stage at K=2: 8 + 16 encodes per image, memo scoped per image
    assert all(v == 24 for v in manifest["caption_texts_per_image"].values())
    assert manifest["caption_texts_total"] == 12 * 24
    assert manifest["vocab_texts_encoded"] == corpus.vocab.words_encoded()
    assert manifest["pairs_emitted"] == 12 * (3 + 2)

    out = Path(cfg.out_dir)
    pairs = read_pairs_jsonl(out / "pairs.jsonl")
    assert len(pairs) == manifest["pairs_emitted"]
    assert {p.source for p in pairs} == {"clo", "gaussian"}
    for p in pairs:
        assert abs(float(np.linalg.norm(p.feature.astype(np.float64))) - 1.0) <= 1e-6

    bank = load_embeddings(out / "pairs.emb1")
    assert bank.count == len(pairs)
    assert bank.unit_normalized is True
    assert bank.ids[0] == f"{pairs[0].image_id}#0"

    assert manifest["mean_diag_cos_after_clo"] > manifest["mean_diag_cos_before_clo"]


def test_empty_image_set(tmp_path):
    empty = FeatureMatrix(rows=np.empty((0, 32), dtype=np.float32), ids=[], unit_normalized=True)
    emb = tmp_path / "empty.emb1"
    save_embeddings(emb, empty)
    vocab = tmp_path / "v.json"
    vocab.write_text(json.dumps({"Noun": ["dog"], "Verb": ["runs"],
                                 "NumeralQuantifier": ["one"], "Adjective": ["red"]}))
    cfg = _config(tmp_path, emb, vocab)
    manifest = run_pipeline(cfg)
    assert manifest["images_total"] == 0
    assert manifest["pairs_emitted"] == 0
    assert manifest["partial"] is False
    out = Path(cfg.out_dir)
    assert (out / "pairs.jsonl").read_bytes() == b""
    assert load_embeddings(out / "pairs.emb1").count == 0
    assert json.loads((out / "manifest.json").read_text())["images_completed"] == 0


def test_t0_vs_t10_same_captions_better_alignment(tmp_path):
    corpus = build_cluster_corpus(16, 4, 64, seed=19)
    emb, vocab = _materialize(tmp_path, corpus)

    cfg0 = _config(tmp_path, emb, vocab, out_name="t0", seed=19,
                   clo=CloConfig(steps=0, step_size=0.01, tau=0.5))
    cfg10 = _config(tmp_path, emb, vocab, out_name="t10", seed=19,
                    clo=CloConfig(steps=10, step_size=0.01, tau=0.5))
    m0 = run_pipeline(cfg0)
    m10 = run_pipeline(cfg10)

    p0 = read_pairs_jsonl(Path(cfg0.out_dir) / "pairs.jsonl")
    p10 = read_pairs_jsonl(Path(cfg10.out_dir) / "pairs.jsonl")
    assert [p.caption for p in p0] == [p.caption for p in p10]
    assert [p.image_id for p in p0] == [p.image_id for p in p10]
    assert {p.source for p in p0} == {"retrieval"}
    assert {p.source for p in p10} == {"clo"}
    # same captions, different feature values
    assert any(
        not np.array_equal(a.feature, b.feature) for a, b in zip(p0, p10)
    )
    assert m10["mean_diag_cos_after_clo"] > m0["mean_diag_cos_after_clo"]


def test_top_caption_names_cluster_noun(tmp_path):
    # 200 images, 4 clusters: the best caption should name the cluster's
    # anchor noun for at least 90% of images
    corpus = build_cluster_corpus(200, 4, 64, seed=23)
    emb, vocab = _materialize(tmp_path, corpus)
    cfg = _config(tmp_path, emb, vocab, seed=23, batch_n=64,
                  clo=CloConfig(steps=10, step_size=0.01, tau=0.5))
    run_pipeline(cfg)

    pairs = read_pairs_jsonl(Path(cfg.out_dir) / "pairs.jsonl")
    top = {}
    for p in pairs:
        top.setdefault(p.image_id, p.caption)  # first pair per image = best
    noun_of = {
        corpus.images.ids[i]: corpus.cluster_nouns[corpus.labels[i]]
        for i in range(corpus.images.count)
    }
    hits = sum(noun_of[img] in caption.split() for img, caption in top.items())
    assert len(top) == 200
    assert hits / len(top) >= 0.9


def test_provider_failure_flushes_completed_chunks(tmp_path, monkeypatch):
    corpus = build_cluster_corpus(8, 2, 32, seed=5)
    emb, vocab = _materialize(tmp_path, corpus)

    class Flaky:
        """Healthy through the vocabulary and the first chunk, then dies."""

        def __init__(self, inner, fail_after_texts):
            self._inner = inner
            self._left = fail_after_texts

        def encode_texts(self, texts):
            self._left -= len(texts)
            if self._left < 0:
                raise ProviderFailureError("endpoint went away")
            return self._inner.encode_texts(texts)

        def dim(self):
            return self._inner.dim()

    vocab_words = corpus.vocab.words_encoded()
    budget = vocab_words + 4 * 24 + 10  # vocab + chunk one, dies in chunk two

    import pseudopair.pipeline as pipe

    monkeypatch.setattr(
        pipe, "resolve_provider",
        lambda spec, dim, seed=0: Flaky(SyntheticEncoder(dim=dim, seed=seed), budget),
    )

    cfg = _config(tmp_path, emb, vocab, seed=5, batch_n=4)
    with pytest.raises(ProviderFailureError):
        run_pipeline(cfg)

    out = Path(cfg.out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["partial"] is True
    assert manifest["error"]
    assert manifest["images_completed"] == 4
    pairs = read_pairs_jsonl(out / "pairs.jsonl")
    assert {p.image_id for p in pairs} == set(corpus.images.ids[:4])


def test_pipeline_rejects_raw_trajectories(tmp_path):
    corpus = build_cluster_corpus(4, 2, 32, seed=2)
    emb, vocab = _materialize(tmp_path, corpus)
    cfg = _config(tmp_path, emb, vocab,
                  clo=CloConfig(steps=2, step_size=0.01, tau=0.5, renormalize=False))
    with pytest.raises(ValueError):
        run_pipeline(cfg)


def test_images_processed_in_id_order(tmp_path):
    corpus = build_cluster_corpus(6, 2, 32, seed=3)
    # scramble row order on disk; the pipeline must sort by id
    perm = [3, 0, 5, 1, 4, 2]
    scrambled = FeatureMatrix(
        rows=corpus.images.rows[perm],
        ids=[corpus.images.ids[i] for i in perm],
        unit_normalized=True,
    )
    emb = tmp_path / "scrambled.emb1"
    save_embeddings(emb, scrambled)
    vocab = tmp_path / "v.json"
    vocab.write_text(json.dumps(corpus.vocab.categories))
    cfg = _config(tmp_path, emb, vocab, seed=3)
    run_pipeline(cfg)
    pairs = read_pairs_jsonl(Path(cfg.out_dir) / "pairs.jsonl")
    seen = list(dict.fromkeys(p.image_id for p in pairs))
    assert seen == sorted(corpus.images.ids)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def test_config_round_trip():
    cfg = PipelineConfig(
        embeddings="e.emb1", vocab="v.json", out_dir="out", seed=3,
        batch_n=16, gaussian_draws=2,
        retrieval=RetrievalConfig(k=3, m=5, iterative=False),
        clo=CloConfig(steps=7, step_size=0.02, tau=0.3),
        perturb=PerturbConfig(xi=1.5, seed=3),
    )
    raw = config_to_dict(cfg)
    # the dict uses the file-facing key names for the latent section
    raw["clo"] = {"t": raw["clo"]["steps"], "lambda": raw["clo"]["step_size"],
                  "tau": raw["clo"]["tau"], "renormalize": raw["clo"]["renormalize"]}
    raw.pop("schedule")
    back = config_from_dict(raw)
    assert back == cfg


def test_config_unknown_key_rejected():
    with pytest.raises(MalformedJsonError):
        config_from_dict({"embeddings": "e", "vocab": "v", "out_dir": "o", "typo": 1})
    with pytest.raises(MalformedJsonError):
        config_from_dict({"clo": {"t": 5, "stepsize": 0.1}})


def test_config_perturb_seed_defaults_to_run_seed():
    cfg = config_from_dict({"embeddings": "e", "vocab": "v", "out_dir": "o", "seed": 42})
    assert cfg.perturb.seed == 42


def test_clo_diagnostics_keys():
    corpus = build_cluster_corpus(8, 2, 32, seed=4)
    texts = FeatureMatrix(
        rows=corpus.images.rows.copy(),
        ids=[f"t{i}" for i in range(8)],
        unit_normalized=True,
    )
    diag = clo_diagnostics(corpus.images, texts, tau=0.5)
    assert diag["in_batch_accuracy"] == 1.0
    assert 0.0 < diag["mean_diag_alignment"] <= 1.0
    assert diag["objective"] <= 0.0
