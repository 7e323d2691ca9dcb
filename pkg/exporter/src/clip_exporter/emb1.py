"""Writer for the EMB1 embedding bank interchange format.

Layout (little-endian): magic b"EMB1", u32 dim, u64 count, u8 unit flag,
then count*dim float32 row-major. Row ids go to a JSON string array in a
sidecar at "<path>.ids.json". This mirrors the consuming pipeline's
on-disk contract; the exporter only ever writes unit-normalized rows, so
the unit flag is always 1.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
UNIT_ATOL = 1e-5

_HEADER = struct.Struct("<4sIQB")


def write_emb1(path: str | Path, rows: np.ndarray, ids: list[str]) -> None:
    """Write rows (N, D) float32 plus the id sidecar.

    Rows must already be unit-norm within 1e-5; N = 0 is legal and writes
    a header-only file (dim still comes from the array shape).
    """
    path = Path(path)
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2 or rows.shape[1] < 1:
        raise ValueError(f"rows must be (N, D>=1), got shape {rows.shape}")
    if len(ids) != rows.shape[0]:
        raise ValueError(f"{len(ids)} ids for {rows.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if not np.isfinite(rows).all():
        raise ValueError("rows contain NaN or Inf")
    if rows.shape[0]:
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_ATOL:
            raise ValueError(f"row norm off unit by {worst:.2e}")

    header = _HEADER.pack(MAGIC, rows.shape[1], rows.shape[0], 1)
    path.write_bytes(header + rows.tobytes())
    sidecar = path.with_name(path.name + ".ids.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(ids, fh, ensure_ascii=False)
