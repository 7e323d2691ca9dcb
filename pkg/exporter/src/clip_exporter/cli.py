"""Command line entry points: export-images, export-texts, serve.

MODEL is always explicit (clip:<name>, fixture:<path>, or hash:<dim>);
manifests are plain text, one image path or one caption per line.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .backends import load_backend
from .errors import ModelLoadFailure
from .export import ExportJob, export_image_embeddings, export_text_embeddings
from .server import ExporterServer


def _read_manifest(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _print_report(report) -> None:
    click.echo(f"wrote {report.written} rows (dim {report.dim}) -> {report.out_path}")
    for ident, reason in report.skipped:
        click.echo(f"skipped {ident}: {reason}", err=True)
    if report.skipped:
        click.echo(f"{len(report.skipped)} inputs skipped", err=True)


@click.group()
def main() -> None:
    """Export embeddings to EMB1 files or serve the encoder protocol."""


@main.command("export-images")
@click.argument("model")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--device", default="cpu", show_default=True)
def export_images_cmd(model, manifest, out, batch_size, device):
    """Encode every readable image in MANIFEST into OUT (.emb1)."""
    job = ExportJob(
        model=model,
        inputs=_read_manifest(manifest),
        out_path=out,
        device=device,
        batch_size=batch_size,
    )
    try:
        _print_report(export_image_embeddings(job))
    except ModelLoadFailure as exc:
        raise click.ClickException(str(exc))


@main.command("export-texts")
@click.argument("model")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--device", default="cpu", show_default=True)
def export_texts_cmd(model, manifest, out, batch_size, device):
    """Encode every line of MANIFEST as a text into OUT (.emb1)."""
    job = ExportJob(
        model=model,
        inputs=_read_manifest(manifest),
        out_path=out,
        device=device,
        batch_size=batch_size,
    )
    try:
        _print_report(export_text_embeddings(job))
    except ModelLoadFailure as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.argument("model")
@click.argument("address")
@click.option("--device", default="cpu", show_default=True)
def serve(model, address, device):
    """Serve MODEL over the wire protocol at ADDRESS (host:port or a unix
    socket path) until interrupted."""
    try:
        backend = load_backend(model, device=device)
    except ModelLoadFailure as exc:
        raise click.ClickException(str(exc))
    server = ExporterServer(backend, address)
    click.echo(f"serving {model} (dim {backend.dim}) at {server.address}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        sys.exit(0)


if __name__ == "__main__":
    main()
