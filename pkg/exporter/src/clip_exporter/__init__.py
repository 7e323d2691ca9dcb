"""Embedding exporter: EMB1 files and the text-encoder wire protocol."""

from .backends import (
    Backend,
    ClipBackend,
    FixtureBackend,
    HashBackend,
    load_backend,
    record_fixture,
)
from .emb1 import write_emb1
from .errors import ModelLoadFailure, UnreadableImage
from .export import (
    ExportJob,
    ExportReport,
    export_image_embeddings,
    export_text_embeddings,
)
from .server import ExporterServer, handle_request_line

__all__ = [
    "Backend",
    "ClipBackend",
    "ExportJob",
    "ExportReport",
    "ExporterServer",
    "FixtureBackend",
    "HashBackend",
    "ModelLoadFailure",
    "UnreadableImage",
    "export_image_embeddings",
    "export_text_embeddings",
    "handle_request_line",
    "load_backend",
    "record_fixture",
    "write_emb1",
]
