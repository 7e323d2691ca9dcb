"""Encoder backends behind one tiny interface.

A backend encodes texts and prepared images to unit-norm float32 rows of a
fixed dimension. Three schemes are understood by load_backend:

  clip:<name>      real pretrained encoder (requires the optional clip
                   extra: torch + open_clip + pillow)
  fixture:<path>   recorded table of exact rows, for offline use and tests
  hash:<dim>       deterministic content-derived rows; no model at all

hash and fixture backends exist so export and serving stay fully
deterministic and testable on machines that cannot load the real stack.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ModelLoadFailure, UnreadableImage


class Backend(Protocol):
    dim: int

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray: ...

    def prepare_image(self, blob: bytes, ident: str) -> object: ...

    def encode_images(self, prepared: Sequence[object]) -> np.ndarray: ...


def _unit_from_key(key: bytes, dim: int) -> np.ndarray:
    # counter-based so rows never depend on call order or batch shape
    digest = hashlib.blake2b(key, digest_size=16).digest()
    words = np.frombuffer(digest, dtype="<u8")
    rng = np.random.Generator(np.random.Philox(key=words))
    v = rng.standard_normal(dim)
    norm = float(np.linalg.norm(v))
    while norm < 1e-12:  # astronomically unlikely, but keep the contract
        v = rng.standard_normal(dim)
        norm = float(np.linalg.norm(v))
    return (v / norm).astype(np.float32)


class HashBackend:
    """Rows derived from content digests. Identical inputs give identical
    rows across processes and batch sizes; there is nothing to load."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ModelLoadFailure(f"hash backend dim must be >= 1, got {dim}")
        self.dim = dim

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = [
            _unit_from_key(b"text\x00" + t.encode("utf-8"), self.dim) for t in texts
        ]
        return np.stack(rows) if rows else np.empty((0, self.dim), dtype=np.float32)

    def prepare_image(self, blob: bytes, ident: str) -> bytes:
        return hashlib.sha256(blob).digest()

    def encode_images(self, prepared: Sequence[bytes]) -> np.ndarray:
        rows = [_unit_from_key(b"image\x00" + d, self.dim) for d in prepared]
        return np.stack(rows) if rows else np.empty((0, self.dim), dtype=np.float32)


class FixtureBackend:
    """Exact recorded rows, keyed by text (or image content digest).

    The fixture is a JSON object {"dim": D, "texts": {text: row},
    "images": {sha256hex: row}}. Lookups outside the recording raise, so a
    fixture states precisely what it can encode.
    """

    def __init__(self, path: str | Path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelLoadFailure(f"fixture {path}: {exc}")
        dim = doc.get("dim")
        if not isinstance(dim, int) or dim < 1:
            raise ModelLoadFailure(f"fixture {path}: bad dim {dim!r}")
        self.dim = dim
        self._texts = self._table(doc.get("texts", {}), path, "texts")
        self._images = self._table(doc.get("images", {}), path, "images")

    def _table(self, raw: object, path: object, what: str) -> dict[str, np.ndarray]:
        if not isinstance(raw, dict):
            raise ModelLoadFailure(f"fixture {path}: {what} must be an object")
        out = {}
        for key, row in raw.items():
            arr = np.asarray(row, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise ModelLoadFailure(
                    f"fixture {path}: {what}[{key!r}] has shape {arr.shape}"
                )
            norm = float(np.linalg.norm(arr.astype(np.float64)))
            if not np.isfinite(arr).all() or abs(norm - 1.0) > 1e-5:
                raise ModelLoadFailure(
                    f"fixture {path}: {what}[{key!r}] is not a finite unit row"
                )
            out[key] = arr
        return out

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in texts if t not in self._texts]
        if missing:
            raise ValueError(f"fixture has no entry for text {missing[0]!r}")
        rows = [self._texts[t] for t in texts]
        return np.stack(rows) if rows else np.empty((0, self.dim), dtype=np.float32)

    def prepare_image(self, blob: bytes, ident: str) -> str:
        digest = hashlib.sha256(blob).hexdigest()
        if digest not in self._images:
            raise UnreadableImage(f"{ident}: content not in fixture")
        return digest

    def encode_images(self, prepared: Sequence[str]) -> np.ndarray:
        rows = [self._images[d] for d in prepared]
        return np.stack(rows) if rows else np.empty((0, self.dim), dtype=np.float32)


def record_fixture(
    path: str | Path,
    backend: Backend,
    texts: Sequence[str] = (),
    image_blobs: Sequence[bytes] = (),
) -> None:
    """Run inputs through a backend and write the rows as a fixture, so a
    one-time pass with the real model can stand in for it afterwards."""
    doc: dict = {"dim": backend.dim, "texts": {}, "images": {}}
    if texts:
        rows = np.asarray(backend.encode_texts(list(texts)), dtype=np.float32)
        for t, row in zip(texts, rows):
            doc["texts"][t] = [float(v) for v in row]
    for blob in image_blobs:
        prepared = backend.prepare_image(blob, "<record>")
        row = np.asarray(backend.encode_images([prepared])[0], dtype=np.float32)
        doc["images"][hashlib.sha256(blob).hexdigest()] = [float(v) for v in row]
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")


class ClipBackend:
    """Real pretrained encoder via open_clip. Import and weight load happen
    here so machines without the stack fail with ModelLoadFailure instead
    of an ImportError at startup."""

    def __init__(self, name: str, device: str = "cpu"):
        try:
            import open_clip
            import torch
            from PIL import Image
        except ImportError as exc:
            raise ModelLoadFailure(f"clip backend needs the clip extra: {exc}")
        try:
            model, _, preprocess = open_clip.create_model_and_transforms(
                name, pretrained="openai"
            )
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load clip model {name!r}: {exc}")
        self._torch = torch
        self._Image = Image
        self._model = model.eval().to(device)
        self._preprocess = preprocess
        self._tokenize = open_clip.get_tokenizer(name)
        self._device = device
        with torch.no_grad():
            probe = self._model.encode_text(self._tokenize([""]).to(device))
        self.dim = int(probe.shape[1])

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dim), dtype=np.float32)
        with self._torch.no_grad():
            out = self._model.encode_text(self._tokenize(list(texts)).to(self._device))
            out = out / out.norm(dim=-1, keepdim=True)
        return out.cpu().numpy().astype(np.float32)

    def prepare_image(self, blob: bytes, ident: str):
        import io

        try:
            img = self._Image.open(io.BytesIO(blob))
            img.load()
        except Exception as exc:
            raise UnreadableImage(f"{ident}: {exc}")
        return self._preprocess(img.convert("RGB"))

    def encode_images(self, prepared: Sequence[object]) -> np.ndarray:
        if not prepared:
            return np.empty((0, self.dim), dtype=np.float32)
        batch = self._torch.stack(list(prepared)).to(self._device)
        with self._torch.no_grad():
            out = self._model.encode_image(batch)
            out = out / out.norm(dim=-1, keepdim=True)
        return out.cpu().numpy().astype(np.float32)


def load_backend(spec: str, device: str = "cpu") -> Backend:
    """Build a backend from a model spec string (see module docstring)."""
    scheme, sep, rest = spec.partition(":")
    if not sep:
        raise ModelLoadFailure(
            f"model {spec!r} has no scheme; expected clip:, fixture:, or hash:"
        )
    if scheme == "hash":
        try:
            return HashBackend(int(rest))
        except ValueError:
            raise ModelLoadFailure(f"hash backend needs an integer dim, got {rest!r}")
    if scheme == "fixture":
        return FixtureBackend(rest)
    if scheme == "clip":
        return ClipBackend(rest, device=device)
    raise ModelLoadFailure(f"unknown model scheme {scheme!r}")
