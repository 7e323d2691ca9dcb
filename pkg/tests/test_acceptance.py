"""Acceptance gate: ten numbered criteria, one pass/fail line each.

Run as `pytest -v tests/test_acceptance.py`; every criterion is a single
test whose PASSED/FAILED line is its verdict. Each test also prints an
explicit `criterion NN ... PASS|FAIL` line (visible with -s or -rA).
Stated runtime budgets are asserted alongside the numerical checks.
"""

import json
import time
from pathlib import Path

import numpy as np

from pseudopair.clo import CloConfig, clo_gradient, clo_refine
from pseudopair.embeddings import FeatureMatrix, normalize, save_embeddings, top_k_batch
from pseudopair.perturb import PerturbConfig, gaussian_pseudo_feature
from pseudopair.pipeline import PipelineConfig, clo_diagnostics, run_pipeline
from pseudopair.providers import BatchedEncoder, SyntheticEncoder
from pseudopair.retrieval import (
    RetrievalConfig,
    exhaustive_synthesis,
    two_stage_synthesis,
)
from pseudopair.synthetic import build_cluster_corpus
from pseudopair.theory import (
    degenerate_instance,
    proof_identity_check,
    random_instance,
    theorem_check,
)


def _verdict(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {num:2d} {name:<52} {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. gradient vs central finite differences
# ---------------------------------------------------------------------------


def _log_cii(h: np.ndarray, F_unit: np.ndarray, i: int, tau: float) -> float:
    # independent transcription of the objective, shifted logsumexp
    hhat = h / np.linalg.norm(h)
    logits = (F_unit @ hhat) / tau
    m = logits.max()
    return float(logits[i] - m - np.log(np.exp(logits - m).sum()))


def test_c01_gradient_matches_finite_differences():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    taus = [0.2, 0.5, 1.0]
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(2, 33))
        d = int(rng.integers(4, 129))
        tau = taus[trial % 3]
        F = rng.standard_normal((n, d))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        h = rng.standard_normal(d) * float(rng.uniform(0.5, 2.0))
        i = int(rng.integers(0, n))

        grad = clo_gradient(h, F, i, tau)
        step = 1e-4
        fd = np.empty(d)
        for p in range(d):
            up = h.copy()
            up[p] += step
            down = h.copy()
            down[p] -= step
            fd[p] = (_log_cii(up, F, i, tau) - _log_cii(down, F, i, tau)) / (2 * step)
        rel = float(np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-30))
        worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    ok = worst < 1e-4 and elapsed < 30.0
    _verdict(1, "latent gradient vs finite differences", ok,
             f"worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. gradient-norm bound on random toy instances
# ---------------------------------------------------------------------------


def test_c02_bound_holds_on_100_instances():
    t0 = time.monotonic()
    rng = np.random.default_rng(202)
    taus = [0.2, 0.5, 1.0]
    violations = 0
    worst_ratio = 0.0
    for trial in range(100):
        n = int(rng.choice([2, 4, 8]))
        gen, H, E = random_instance(n, dim=16, seed=int(rng.integers(0, 2**31)))
        rep = theorem_check(gen, H, E, tau=taus[trial % 3])
        violations += 0 if rep.holds else 1
        if rep.bound > 0:
            worst_ratio = max(worst_ratio, rep.grad_norm / rep.bound)
    elapsed = time.monotonic() - t0
    ok = violations == 0 and elapsed < 60.0
    _verdict(2, "gradient-norm bound, 100 toy instances", ok,
             f"violations {violations}, max grad/bound {worst_ratio:.3f}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. proof identity against finite differences
# ---------------------------------------------------------------------------


def test_c03_proof_identity_100_instances():
    t0 = time.monotonic()
    rng = np.random.default_rng(303)
    worst = 0.0
    for trial in range(95):
        n = int(rng.choice([1, 2, 4]))
        gen, H, E = random_instance(n, dim=6, seed=int(rng.integers(0, 2**31)))
        worst = max(worst, proof_identity_check(gen, H, E, tau=0.5))
    for trial in range(5):  # sigma = 0 equal-similarity construction
        gen, H, E = degenerate_instance(n=2 + trial, dim=6, seed=3000 + trial)
        worst = max(worst, proof_identity_check(gen, H, E, tau=0.5))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    _verdict(3, "proof identity residual, 100 instances", ok,
             f"worst residual {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. caption encode count identity
# ---------------------------------------------------------------------------


def test_c04_two_stage_encode_count_identity():
    t0 = time.monotonic()
    ok = True
    details = []
    for k in (1, 2, 3, 4):
        corpus = build_cluster_corpus(2, 2, 32, seed=40 + k)
        enc = BatchedEncoder(corpus.provider, batch_size=4096)
        corpus.vocab.attach_embeddings(enc)

        enc.reset_cache()
        before = enc.encoded_texts
        two_stage_synthesis(
            corpus.images.rows[0], corpus.vocab, enc, RetrievalConfig(k=k, m=1)
        )
        fast = enc.encoded_texts - before

        enc.reset_cache()
        before = enc.encoded_texts
        exhaustive_synthesis(
            corpus.images.rows[0], corpus.vocab, enc, RetrievalConfig(k=k, m=1)
        )
        full = enc.encoded_texts - before

        expected_fast = (k + 1) * k**3
        expected_full = k**6
        details.append(f"K={k}: {fast} vs {full}")
        ok = ok and fast == expected_fast and full == expected_full
    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 10.0
    _verdict(4, "(K+1)K^3 iterative vs K^6 exhaustive encodes", ok,
             "; ".join(details) + f", {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. exact top-k vs brute force at scale
# ---------------------------------------------------------------------------


def test_c05_top_k_matches_brute_force_at_scale():
    t0 = time.monotonic()
    rng = np.random.default_rng(505)
    n, d, q, k = 10_000, 512, 1000, 10
    rows = rng.standard_normal((n, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    corpus = FeatureMatrix(
        rows=rows.astype(np.float32), ids=[f"r{i}" for i in range(n)], unit_normalized=True
    )
    queries = rng.standard_normal((q, d)).astype(np.float32)

    hits = top_k_batch(queries, corpus, k)

    # oracle: full similarity matrix, stable descending argsort
    q64 = queries.astype(np.float64)
    q64 /= np.linalg.norm(q64, axis=1, keepdims=True)
    sims = q64 @ corpus.rows.astype(np.float64).T
    oracle = np.argsort(-sims, axis=1, kind="stable")[:, :k]

    mismatches = sum(
        not np.array_equal(hits[r].indices, oracle[r]) for r in range(q)
    )
    elapsed = time.monotonic() - t0
    ok = mismatches == 0 and elapsed < 30.0
    _verdict(5, "top-k equals brute-force sort, 1000 queries", ok,
             f"mismatches {mismatches}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. perturbation contract
# ---------------------------------------------------------------------------


def test_c06_perturbation_contract():
    rng = np.random.default_rng(606)
    base = rng.standard_normal(512).astype(np.float32) * 2.5

    exact = all(
        np.array_equal(
            gaussian_pseudo_feature(base, PerturbConfig(xi=0.0, seed=s), "img", j),
            normalize(base),
        )
        for s in range(3)
        for j in range(3)
    )

    draws = 10_000
    means = []
    unit_ok = True
    f_unit = normalize(base).astype(np.float64)
    for xi in (0.5, 1.0, 3.0):
        cfg = PerturbConfig(xi=xi, seed=66)
        cos = np.empty(draws)
        for j in range(draws):
            h = gaussian_pseudo_feature(base, cfg, "img", j)
            norm = float(np.linalg.norm(h.astype(np.float64)))
            if abs(norm - 1.0) > 1e-6:
                unit_ok = False
            cos[j] = float(h.astype(np.float64) @ f_unit)
        means.append(cos.mean())

    decreasing = means[0] > means[1] > means[2]
    ok = exact and unit_ok and decreasing
    _verdict(6, "perturbation: xi=0 exact, unit norm, spread", ok,
             f"mean cos {means[0]:.3f} > {means[1]:.3f} > {means[2]:.3f}")


# ---------------------------------------------------------------------------
# 7. latent optimization efficacy on clustered space
# ---------------------------------------------------------------------------


def test_c07_refinement_efficacy_20_trials():
    t0 = time.monotonic()
    cfg = CloConfig(steps=10, step_size=0.01, tau=0.5)
    ok = True
    details = []
    for trial in range(20):
        corpus = build_cluster_corpus(64, 4, 128, seed=700 + trial)
        g = np.random.default_rng(900 + trial)
        anchors = corpus.provider.encode_texts(corpus.cluster_nouns).astype(np.float64)
        H0 = np.stack(
            [anchors[corpus.labels[i]] + 0.35 * g.standard_normal(128) for i in range(64)]
        )
        H0 /= np.linalg.norm(H0, axis=1, keepdims=True)

        base = clo_refine(H0, corpus.images.rows, CloConfig(steps=0, tau=cfg.tau))
        H1 = clo_refine(H0, corpus.images.rows, cfg)

        banks = {}
        for tag, H in (("before", base), ("after", H1)):
            banks[tag] = clo_diagnostics(
                corpus.images,
                FeatureMatrix(rows=H, ids=[f"t{i}" for i in range(64)]),
                tau=cfg.tau,
            )
        if not banks["after"]["mean_diag_alignment"] > banks["before"]["mean_diag_alignment"]:
            ok = False
            details.append(f"trial {trial}: alignment did not increase")
        if banks["after"]["in_batch_accuracy"] < banks["before"]["in_batch_accuracy"]:
            ok = False
            details.append(f"trial {trial}: accuracy dropped")
    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 60.0
    _verdict(7, "T=10 refinement helps on 4-cluster space", ok,
             ("; ".join(details) if details else "20/20 trials") + f", {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 8. small-step ascent monotonicity
# ---------------------------------------------------------------------------


def test_c08_small_step_ascent_monotone():
    rng = np.random.default_rng(808)
    worst_drop = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 13))
        d = int(rng.integers(8, 65))
        F = rng.standard_normal((n, d))
        H = rng.standard_normal((n, d))
        trace: list = []
        clo_refine(H, F, CloConfig(steps=15, step_size=1e-3, tau=0.5), trace=trace)
        objectives = [obj for _, obj, _ in trace]
        for prev, cur in zip(objectives, objectives[1:]):
            worst_drop = min(worst_drop, cur - prev)
    ok = worst_drop >= -1e-8
    _verdict(8, "objective non-decreasing at lambda=1e-3", ok,
             f"worst step delta {worst_drop:.2e}")


# ---------------------------------------------------------------------------
# 9. end-to-end determinism and accounting
# ---------------------------------------------------------------------------


def test_c09_pipeline_determinism(tmp_path):
    corpus = build_cluster_corpus(16, 4, 64, seed=90)
    emb = tmp_path / "images.emb1"
    save_embeddings(emb, corpus.images)
    vocab = tmp_path / "vocab.json"
    vocab.write_text(json.dumps(corpus.vocab.categories))

    k = 2
    manifests = []
    blobs = []
    for run in ("a", "b"):
        cfg = PipelineConfig(
            embeddings=str(emb),
            vocab=str(vocab),
            out_dir=str(tmp_path / f"out_{run}"),
            provider="synthetic",
            seed=90,
            batch_n=8,
            gaussian_draws=2,
            retrieval=RetrievalConfig(k=k, m=3),
            clo=CloConfig(steps=4, step_size=0.01, tau=0.5),
            perturb=PerturbConfig(xi=3.0, seed=90),
        )
        manifests.append(run_pipeline(cfg))
        blobs.append((tmp_path / f"out_{run}" / "pairs.jsonl").read_bytes())

    identical = blobs[0] == blobs[1] and len(blobs[0]) > 0
    expected = (k + 1) * k**3
    counts_ok = all(
        v == expected for v in manifests[0]["caption_texts_per_image"].values()
    ) and manifests[0]["caption_texts_total"] == 16 * expected
    ok = identical and counts_ok
    _verdict(9, "byte-identical reruns, exact encode accounting", ok,
             f"{len(blobs[0])} bytes, {expected} texts/image")


# ---------------------------------------------------------------------------
# 10. retrieval features are tighter than Gaussian ones
# ---------------------------------------------------------------------------


def test_c10_retrieval_std_below_gaussian_std():
    wins = 0
    trials = 20
    for trial in range(trials):
        corpus = build_cluster_corpus(24, 4, 64, seed=1000 + trial)
        enc = BatchedEncoder(corpus.provider)
        corpus.vocab.attach_embeddings(enc)
        cfg = RetrievalConfig(k=2, m=2)
        clo_cfg = CloConfig(steps=10, step_size=0.01, tau=0.5)

        feats = []
        pairing = []
        for i in range(corpus.images.count):
            enc.reset_cache()
            caps = two_stage_synthesis(corpus.images.rows[i], corpus.vocab, enc, cfg)
            H0 = np.stack([c.embedding for c in caps])
            F = np.tile(corpus.images.rows[i], (len(caps), 1))
            H1 = clo_refine(H0, F, clo_cfg)
            feats.extend(H1)
            pairing.extend([corpus.images.ids[i]] * len(caps))
        retrieval_feats = np.stack(feats).astype(np.float64)

        pcfg = PerturbConfig(xi=3.0, seed=trial)
        gauss = np.stack(
            [
                gaussian_pseudo_feature(corpus.images.rows[i], pcfg, corpus.images.ids[i], j)
                for i in range(corpus.images.count)
                for j in range(2)
            ]
        ).astype(np.float64)

        def unpaired_std(T, pairs):
            ids = np.asarray(pairs)
            sims = T @ T.T
            mask = ids[:, None] != ids[None, :]
            return float(sims[mask].std())

        r_std = unpaired_std(retrieval_feats, pairing)
        g_std = unpaired_std(gauss, pairing)
        wins += r_std < g_std
    ok = wins == trials
    _verdict(10, "retrieval+refine std below Gaussian xi=3 std", ok,
             f"{wins}/{trials} trials")
