"""Offline export of embeddings to EMB1 files.

An ExportJob names the model, the input manifest entries, and the output
path. Image exports read each file, skip anything unreadable (collecting
the reason), and encode the survivors in batches; text exports encode the
manifest lines directly. Ids are the input identifiers in order; a repeated
identifier keeps its row but gains a "#<n>" suffix because the EMB1 sidecar
requires unique ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import Backend, load_backend
from .emb1 import write_emb1
from .errors import UnreadableImage


@dataclass
class ExportJob:
    model: str
    inputs: list[str]
    out_path: str
    device: str = "cpu"
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExportReport:
    out_path: str
    dim: int
    written: int
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (ident, reason)


def _unique_ids(idents: list[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for ident in idents:
        candidate, n = ident, 0
        while candidate in seen:
            n += 1
            candidate = f"{ident}#{n}"
        seen.add(candidate)
        out.append(candidate)
    return out


def _batched(backend: Backend, items: list, encode, batch_size: int) -> np.ndarray:
    if not items:
        return np.empty((0, backend.dim), dtype=np.float32)
    chunks = [
        encode(items[i : i + batch_size]) for i in range(0, len(items), batch_size)
    ]
    rows = np.concatenate(chunks, axis=0).astype(np.float32)
    if rows.shape != (len(items), backend.dim):
        raise ValueError(f"backend returned shape {rows.shape} for {len(items)} items")
    return rows


def export_image_embeddings(job: ExportJob, backend: Backend | None = None) -> ExportReport:
    backend = backend or load_backend(job.model, device=job.device)
    prepared = []
    kept_ids = []
    skipped: list[tuple[str, str]] = []
    for ident in job.inputs:
        try:
            blob = Path(ident).read_bytes()
            prepared.append(backend.prepare_image(blob, ident))
        except (OSError, UnreadableImage) as exc:
            skipped.append((ident, str(exc)))
            continue
        kept_ids.append(ident)

    rows = _batched(backend, prepared, backend.encode_images, job.batch_size)
    write_emb1(job.out_path, rows, _unique_ids(kept_ids))
    return ExportReport(
        out_path=job.out_path, dim=backend.dim, written=len(kept_ids), skipped=skipped
    )


def export_text_embeddings(job: ExportJob, backend: Backend | None = None) -> ExportReport:
    backend = backend or load_backend(job.model, device=job.device)
    rows = _batched(backend, list(job.inputs), backend.encode_texts, job.batch_size)
    write_emb1(job.out_path, rows, _unique_ids(list(job.inputs)))
    return ExportReport(
        out_path=job.out_path, dim=backend.dim, written=len(job.inputs), skipped=[]
    )
