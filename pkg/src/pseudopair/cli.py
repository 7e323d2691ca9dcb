"""Command line front end.

Every subcommand is a thin wrapper over the library modules; `run` also
reads a TOML config file whose keys mirror the flags, with explicit flags
winning over the file.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import tomli

from . import analysis, dedup, perturb, pipeline, retrieval, theory
from .clo import CloConfig, clo_refine
from .embeddings import FeatureMatrix, load_embeddings, save_embeddings
from .errors import PseudoPairError
from .providers import BatchedEncoder, resolve_provider
from .vocab import load_vocabulary


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@click.group()
def main() -> None:
    """Pseudo image-text pair synthesis in a joint embedding space."""


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


@main.command()
@click.argument("embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--hashes", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON hash manifest for the corpus (id -> {md5, sha256}).")
@click.option("--downstream", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON hash manifest of the downstream set to scrub against.")
@click.option("--any-hash", is_flag=True, default=False,
              help="Drop on either hash matching (default: both must match).")
@click.option("--filtered-out", type=click.Path(dir_okay=False), default=None,
              help="Write the retained rows to this EMB1 path.")
@click.option("--report", type=click.Path(dir_okay=False), default=None,
              help="Write retained/dropped ids to this JSON path.")
def ingest(embeddings, hashes, downstream, any_hash, filtered_out, report):
    """Validate an EMB1 bank and optionally dedup it against a downstream set."""
    try:
        bank = load_embeddings(embeddings)
    except PseudoPairError as exc:
        _fail(exc)
    click.echo(f"{embeddings}: {bank.count} rows, dim {bank.dim}, unit={bank.unit_normalized}")
    rec: dict = {
        "path": embeddings,
        "count": bank.count,
        "dim": bank.dim,
        "unit": bank.unit_normalized,
    }

    if (hashes is None) != (downstream is None):
        _fail(ValueError("--hashes and --downstream must be given together"))
    if hashes is None:
        if report:
            Path(report).write_text(json.dumps(rec, indent=2), encoding="utf-8")
        return
    try:
        corpus_hashes = dedup.load_hash_manifest(hashes)
        down_hashes = dedup.load_hash_manifest(downstream)
        retained, dropped = dedup.dedup_corpus(
            corpus_hashes, down_hashes, require_both=not any_hash
        )
    except PseudoPairError as exc:
        _fail(exc)
    click.echo(f"dedup: {len(retained)} retained, {len(dropped)} dropped")
    if report:
        rec["retained"] = retained
        rec["dropped"] = dropped
        Path(report).write_text(json.dumps(rec, indent=2), encoding="utf-8")
    if filtered_out:
        dropped_set = set(dropped)
        keep = [r for r, item_id in enumerate(bank.ids) if item_id not in dropped_set]
        filtered = FeatureMatrix(
            rows=bank.rows[keep],
            ids=[bank.ids[r] for r in keep],
            unit_normalized=bank.unit_normalized,
        )
        save_embeddings(filtered_out, filtered)
        click.echo(f"wrote {filtered.count} rows to {filtered_out}")


# ---------------------------------------------------------------------------
# retrieval commands
# ---------------------------------------------------------------------------


def _make_encoder(provider_spec: str, dim: int, seed: int, batch_size: int = 256) -> BatchedEncoder:
    return BatchedEncoder(resolve_provider(provider_spec, dim=dim, seed=seed), batch_size)


@main.command("retrieve-words")
@click.argument("embeddings", type=click.Path(exists=True, dir_okay=False))
@click.argument("vocab_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=2, show_default=True, help="Words kept per category.")
@click.option("--provider", default="synthetic", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the word map to this JSON path (default: stdout).")
def retrieve_words(embeddings, vocab_path, k, provider, seed, out):
    """Top-k vocabulary words per category for every image."""
    try:
        images = load_embeddings(embeddings)
        vocab = load_vocabulary(vocab_path)
        encoder = _make_encoder(provider, images.dim, seed)
        vocab.attach_embeddings(encoder)
        result = {
            image_id: retrieval.image_to_words(images.rows[r], vocab, k)
            for r, image_id in enumerate(images.ids)
        }
    except PseudoPairError as exc:
        _fail(exc)
    text = json.dumps(result, ensure_ascii=False, indent=2)
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@main.command("synth-captions")
@click.argument("embeddings", type=click.Path(exists=True, dir_okay=False))
@click.argument("vocab_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=2, show_default=True)
@click.option("--m", default=20, show_default=True)
@click.option("--iterative/--exhaustive", "iterative", default=True, show_default=True)
@click.option("--provider", default="synthetic", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Caption JSONL output path.")
def synth_captions(embeddings, vocab_path, k, m, iterative, provider, seed, out):
    """Synthesize and score captions per image (no latent optimization)."""
    try:
        images = load_embeddings(embeddings)
        vocab = load_vocabulary(vocab_path)
        encoder = _make_encoder(provider, images.dim, seed)
        vocab.attach_embeddings(encoder)
        cfg = retrieval.RetrievalConfig(k=k, m=m, iterative=iterative)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for r, image_id in enumerate(images.ids):
                encoder.reset_cache()
                caps = retrieval.synthesize_captions(images.rows[r], vocab, encoder, cfg)
                for cap in caps:
                    fh.write(
                        json.dumps(
                            {
                                "image_id": image_id,
                                "caption": cap.text,
                                "score": cap.score,
                                "slot_words": list(cap.slot_words),
                            },
                            ensure_ascii=False,
                            separators=(",", ":"),
                        )
                        + "\n"
                    )
    except PseudoPairError as exc:
        _fail(exc)
    click.echo(f"wrote {out} ({encoder.encoded_texts} caption texts encoded)")


# ---------------------------------------------------------------------------
# latent optimization
# ---------------------------------------------------------------------------


@main.command("clo-refine")
@click.argument("texts", type=click.Path(exists=True, dir_okay=False))
@click.argument("images", type=click.Path(exists=True, dir_okay=False))
@click.option("--t", "steps", default=10, show_default=True, help="Update steps.")
@click.option("--lambda", "step_size", default=0.01, show_default=True, help="Step size.")
@click.option("--tau", default=0.5, show_default=True)
@click.option("--renormalize/--no-renormalize", default=True, show_default=True)
@click.option("--trace", type=click.Path(dir_okay=False), default=None,
              help="Write per-step (step, objective, mean_diag_cos) CSV here.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def clo_refine_cmd(texts, images, steps, step_size, tau, renormalize, trace, out):
    """Refine text features against image features (paired by row)."""
    try:
        text_bank = load_embeddings(texts)
        image_bank = load_embeddings(images)
        cfg = CloConfig(steps=steps, step_size=step_size, tau=tau, renormalize=renormalize)
        rows: list[tuple[int, float, float]] | None = [] if trace else None
        refined = clo_refine(text_bank.rows, image_bank.rows, cfg, trace=rows)
    except PseudoPairError as exc:
        _fail(exc)
    unit = renormalize
    save_embeddings(out, FeatureMatrix(rows=refined, ids=text_bank.ids, unit_normalized=unit))
    if trace:
        with open(trace, "w", encoding="utf-8", newline="") as fh:
            fh.write("step,objective,mean_diag_cos\n")
            for step, obj, diag in rows:
                fh.write(f"{step},{obj!r},{diag!r}\n")
        click.echo(f"wrote trace {trace}")
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _set_nested(cfg: dict, section: str | None, key: str, value) -> None:
    if value is None:
        return
    target = cfg.setdefault(section, {}) if section else cfg
    target[key] = value


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML config; flags below override it.")
@click.option("--embeddings", type=click.Path(), default=None)
@click.option("--vocab", "vocab_path", type=click.Path(), default=None)
@click.option("--templates", type=click.Path(), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--provider", default=None, help="synthetic or endpoint:<addr>.")
@click.option("--seed", type=int, default=None)
@click.option("--batch-n", type=int, default=None, help="Latent optimization batch size.")
@click.option("--gaussian-draws", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--m", type=int, default=None)
@click.option("--score-floor", type=float, default=None)
@click.option("--batch-size", type=int, default=None, help="Encoder batch size.")
@click.option("--iterative/--exhaustive", "iterative", default=None)
@click.option("--t", "steps", type=int, default=None)
@click.option("--lambda", "step_size", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--xi", type=float, default=None)
@click.option("--schedule", "schedule_kind", type=click.Choice(["linear", "step"]), default=None)
@click.option("--schedule-total", type=int, default=None)
@click.option("--schedule-floor", type=float, default=None)
@click.option("--schedule-switch", type=int, default=None)
def run(config_path, embeddings, vocab_path, templates, out_dir, provider, seed,
        batch_n, gaussian_draws, k, m, score_floor, batch_size, iterative,
        steps, step_size, tau, xi, schedule_kind, schedule_total, schedule_floor,
        schedule_switch):
    """Full pipeline: retrieve, synthesize, refine, and write pair files."""
    raw: dict = {}
    if config_path:
        with open(config_path, "rb") as fh:
            raw = tomli.load(fh)

    for key, value in [("embeddings", embeddings), ("vocab", vocab_path),
                       ("templates", templates), ("out_dir", out_dir),
                       ("provider", provider), ("seed", seed),
                       ("batch_n", batch_n), ("gaussian_draws", gaussian_draws)]:
        _set_nested(raw, None, key, value)
    for key, value in [("k", k), ("m", m), ("score_floor", score_floor),
                       ("batch_size", batch_size), ("iterative", iterative)]:
        _set_nested(raw, "retrieval", key, value)
    for key, value in [("t", steps), ("lambda", step_size), ("tau", tau)]:
        _set_nested(raw, "clo", key, value)
    _set_nested(raw, "perturb", "xi", xi)
    for key, value in [("kind", schedule_kind), ("total_iters", schedule_total),
                       ("floor", schedule_floor), ("switch_point", schedule_switch)]:
        _set_nested(raw, "schedule", key, value)

    try:
        cfg = pipeline.config_from_dict(raw)
        for field_name in ("embeddings", "vocab", "out_dir"):
            if not getattr(cfg, field_name):
                raise ValueError(f"missing required setting {field_name!r}")
        manifest = pipeline.run_pipeline(cfg)
    except PseudoPairError as exc:
        _fail(exc)
    except ValueError as exc:
        _fail(exc)
    click.echo(
        f"{manifest['pairs_emitted']} pairs for {manifest['images_completed']} images "
        f"-> {cfg.out_dir} ({manifest['caption_texts_total']} caption texts encoded)"
    )


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


@main.command("analyze-sim")
@click.argument("images", type=click.Path(exists=True, dir_okay=False))
@click.argument("texts", type=click.Path(exists=True, dir_okay=False))
@click.option("--pairing", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON object text_id -> image_id; default derives from "
                   "'<image>#<k>' text row ids.")
@click.option("--bins", default=100, show_default=True)
@click.option("--unpaired-samples", default=50_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def analyze_sim(images, texts, pairing, bins, unpaired_samples, seed, out_dir):
    """Histogram image-text and text-text cosine distributions."""
    try:
        image_bank = load_embeddings(images)
        text_bank = load_embeddings(texts)
        if pairing:
            mapping = json.loads(Path(pairing).read_text(encoding="utf-8"))
            pair_list = [mapping[t] for t in text_bank.ids]
        else:
            pair_list = [t.rsplit("#", 1)[0] for t in text_bank.ids]
        hists = analysis.similarity_histograms(
            image_bank, text_bank, pair_list,
            bins=bins, unpaired_samples=unpaired_samples, seed=seed,
        )
    except KeyError as exc:
        _fail(ValueError(f"pairing file missing text id {exc}"))
    except PseudoPairError as exc:
        _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, hist in hists.items():
        analysis.write_histogram_csv(out / f"{name}.csv", hist)
    summary = analysis.summarize(hists)
    (out / "summary.json").write_text(
        json.dumps(summary, ensure_ascii=False, indent=2), encoding="utf-8"
    )
    for name, stats in summary.items():
        click.echo(f"{name}: mean {stats['mean']:.4f} std {stats['std']:.4f} n {stats['count']}")


@main.command("verify-theorem")
@click.option("--trials", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-n", default=8, show_default=True, help="Batch sizes sampled in [2, max-n].")
@click.option("--dim", default=16, show_default=True)
@click.option("--tau", default=0.5, show_default=True)
@click.option("--identity/--no-identity", default=True, show_default=True,
              help="Also run the finite-difference proof identity check.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report array here.")
def verify_theorem(trials, seed, max_n, dim, tau, identity, out):
    """Check the gradient-norm bound on random toy-generator instances."""
    rng = np.random.default_rng(seed)
    reports = []
    violations = 0
    worst_ratio = 0.0
    worst_residual = 0.0
    for trial in range(trials):
        n = int(rng.integers(2, max_n + 1))
        inst_seed = int(rng.integers(0, 2**31))
        gen, H, E = theory.random_instance(n, dim, inst_seed)
        rep = theory.theorem_check(gen, H, E, tau)
        rec = {
            "trial": trial, "seed": inst_seed, "n": n, "dim": dim, "tau": tau,
            "grad_norm": rep.grad_norm, "a": rep.a, "sigma": rep.sigma,
            "bound": rep.bound, "holds": rep.holds,
            "decomposition_residual": rep.decomposition_residual,
        }
        if identity:
            rec["fd_identity_residual"] = theory.proof_identity_check(gen, H, E, tau)
            worst_residual = max(worst_residual, rec["fd_identity_residual"])
        reports.append(rec)
        violations += 0 if rep.holds else 1
        if rep.bound > 0:
            worst_ratio = max(worst_ratio, rep.grad_norm / rep.bound)
    if out:
        Path(out).write_text(json.dumps(reports, indent=2), encoding="utf-8")
    click.echo(
        f"bound held in {trials - violations}/{trials} trials; "
        f"max grad/bound {worst_ratio:.4f}"
        + (f"; max identity residual {worst_residual:.2e}" if identity else "")
    )
    if violations:
        sys.exit(1)


@main.command("perturb")
@click.argument("embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--xi", default=3.0, show_default=True)
@click.option("--draws", default=5, show_default=True, help="Pseudo features per image.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def perturb_cmd(embeddings, xi, draws, seed, out_dir):
    """Emit Gaussian pseudo features for every image."""
    try:
        images = load_embeddings(embeddings)
        cfg = perturb.PerturbConfig(xi=xi, seed=seed)
        pairs = []
        for image_id in sorted(images.ids):
            row = images.rows[images.index_of(image_id)]
            for j in range(draws):
                pairs.append(
                    perturb.PseudoPair(
                        image_id=image_id,
                        feature=perturb.gaussian_pseudo_feature(row, cfg, image_id, j),
                        source="gaussian",
                    )
                )
    except PseudoPairError as exc:
        _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perturb.write_pairs_jsonl(out / "pairs.jsonl", pairs)
    save_embeddings(out / "pairs.emb1", perturb.pairs_to_matrix(pairs))
    click.echo(f"wrote {len(pairs)} pairs to {out}")


if __name__ == "__main__":
    main()
