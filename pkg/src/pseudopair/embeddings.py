"""Feature vectors, exact similarity search, and the EMB1 file format.

Conventions used throughout the package:

  * features are stored as float32, one row per item;
  * all dot products and norms accumulate in float64;
  * unit normalization divides by the float64 norm, then casts back;
  * top-k is exact, descending by score, ties broken by lower row index.

EMB1 layout (little-endian):

  magic   4 bytes  b"EMB1"
  dim     u32      feature dimension D >= 1
  count   u64      number of rows N
  unit    u8       1 if every row is unit-norm, else 0
  payload N*D*4    float32 row-major

Row ids live in a JSON sidecar at "<path>.ids.json" (array of N strings).
A missing sidecar is tolerated on load: synthetic ids "row_0".."row_{N-1}"
are assigned and a warning is emitted.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimMismatchError,
    KOutOfRangeError,
    NonFiniteValueError,
    TruncatedFileError,
    ZeroVectorError,
)

MAGIC = b"EMB1"
NORM_FLOOR = 1e-12
UNIT_ATOL = 1e-5

_HEADER = struct.Struct("<4sIQB")


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """A bank of row features with aligned string ids.

    rows: (N, D) float32. ids: N unique strings. unit_normalized marks a
    bank whose rows are all unit-norm within 1e-5; it is checked on
    construction so downstream code can rely on the flag.
    """

    rows: np.ndarray
    ids: list[str]
    unit_normalized: bool = False

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise DimMismatchError(f"rows must be 2-d, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise DimMismatchError("feature dimension must be >= 1")
        if len(self.ids) != rows.shape[0]:
            raise DimMismatchError(
                f"{len(self.ids)} ids for {rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DimMismatchError("ids must be unique")
        if not np.isfinite(rows).all():
            raise NonFiniteValueError("rows contain NaN or Inf")
        if self.unit_normalized:
            norms = np.linalg.norm(rows.astype(np.float64), axis=1)
            if not np.all(np.abs(norms - 1.0) <= UNIT_ATOL):
                worst = float(np.abs(norms - 1.0).max())
                raise DimMismatchError(
                    f"unit flag set but a row norm is off by {worst:.2e}"
                )
        self.rows = rows

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    def index_of(self, item_id: str) -> int:
        return self._id_index()[item_id]

    def _id_index(self) -> dict[str, int]:
        if not hasattr(self, "_idx"):
            self._idx = {s: i for i, s in enumerate(self.ids)}
        return self._idx


@dataclass
class TopKResult:
    """Exact top-k hits for one query: parallel index/score arrays."""

    indices: np.ndarray  # (k,) int64, descending score, ties by lower index
    scores: np.ndarray  # (k,) float64 cosine similarities
    ids: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# vector ops
# ---------------------------------------------------------------------------


def normalize(v: np.ndarray) -> np.ndarray:
    """Project v onto the unit sphere; float32 out, float64 norm inside."""
    v = np.asarray(v, dtype=np.float32)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm < NORM_FLOOR:
        raise ZeroVectorError(f"norm {norm:.3e} below {NORM_FLOOR}")
    return (v.astype(np.float64) / norm).astype(np.float32)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with float64 accumulation."""
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(a64 @ b64) / (na * nb)


def _similarities(queries: np.ndarray, corpus: FeatureMatrix) -> np.ndarray:
    """(Q, N) float64 cosine matrix; rows of `queries` need not be unit."""
    q64 = np.asarray(queries, dtype=np.float64)
    qnorms = np.linalg.norm(q64, axis=1, keepdims=True)
    if np.any(qnorms < NORM_FLOOR):
        raise ZeroVectorError("query with near-zero norm")
    c64 = corpus.rows.astype(np.float64)
    sims = (q64 / qnorms) @ c64.T
    if not corpus.unit_normalized:
        cnorms = np.linalg.norm(c64, axis=1)
        if np.any(cnorms < NORM_FLOOR):
            raise ZeroVectorError("corpus row with near-zero norm")
        sims /= cnorms
    return sims


def top_k(query: np.ndarray, corpus: FeatureMatrix, k: int) -> TopKResult:
    """Exact top-k rows of `corpus` by cosine similarity to `query`.

    Descending score; equal scores resolve to the lower row index (stable
    sort on the negated scores). Scale of the query does not affect the
    result beyond float rounding.
    """
    if k < 1 or k > corpus.count:
        raise KOutOfRangeError(f"k={k} outside [1, {corpus.count}]")
    sims = _similarities(np.asarray(query)[None, :], corpus)[0]
    order = np.argsort(-sims, kind="stable")[:k]
    return TopKResult(
        indices=order.astype(np.int64),
        scores=sims[order],
        ids=[corpus.ids[i] for i in order],
    )


def top_k_batch(queries: np.ndarray, corpus: FeatureMatrix, k: int) -> list[TopKResult]:
    """top_k for each row of `queries`, sharing one similarity matmul."""
    if k < 1 or k > corpus.count:
        raise KOutOfRangeError(f"k={k} outside [1, {corpus.count}]")
    sims = _similarities(queries, corpus)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    out = []
    for qi in range(sims.shape[0]):
        idx = order[qi]
        out.append(
            TopKResult(
                indices=idx.astype(np.int64),
                scores=sims[qi, idx],
                ids=[corpus.ids[i] for i in idx],
            )
        )
    return out


# ---------------------------------------------------------------------------
# EMB1 io
# ---------------------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".ids.json")


def save_embeddings(path: str | Path, matrix: FeatureMatrix) -> None:
    """Write EMB1 bytes plus the id sidecar; float32 payload is bit-exact."""
    path = Path(path)
    header = _HEADER.pack(
        MAGIC, matrix.dim, matrix.count, 1 if matrix.unit_normalized else 0
    )
    payload = np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(matrix.ids, fh, ensure_ascii=False)


def load_embeddings(path: str | Path) -> FeatureMatrix:
    """Read an EMB1 file back into a FeatureMatrix.

    Raises BadMagicError, DimMismatchError, TruncatedFileError, or
    NonFiniteValueError on the corresponding corruption.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        if blob[: len(MAGIC)] != MAGIC[: len(blob)]:
            raise BadMagicError(f"{path}: not an EMB1 file")
        raise TruncatedFileError(f"{path}: header cut short at {len(blob)} bytes")
    magic, dim, count, unit_flag = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if dim < 1:
        raise DimMismatchError(f"{path}: declared dim {dim}")
    expected = _HEADER.size + count * dim * 4
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: {len(blob)} bytes, need {expected} for {count}x{dim}"
        )
    if len(blob) > expected:
        raise DimMismatchError(
            f"{path}: {len(blob) - expected} trailing bytes after payload"
        )
    rows = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    if not np.isfinite(rows).all():
        raise NonFiniteValueError(f"{path}: payload contains NaN or Inf")

    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            with open(sidecar, encoding="utf-8") as fh:
                ids = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DimMismatchError(f"{sidecar}: unreadable id sidecar: {exc}")
        if not isinstance(ids, list) or not all(isinstance(s, str) for s in ids):
            raise DimMismatchError(f"{sidecar}: sidecar must be a JSON string array")
        if len(ids) != count:
            raise DimMismatchError(
                f"{sidecar}: {len(ids)} ids for {count} rows"
            )
    else:
        warnings.warn(
            f"{path}: no id sidecar, assigning synthetic row ids", stacklevel=2
        )
        ids = [f"row_{i}" for i in range(count)]

    return FeatureMatrix(rows=rows.copy(), ids=ids, unit_normalized=bool(unit_flag))
