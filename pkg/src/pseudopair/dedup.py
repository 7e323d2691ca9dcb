"""Corpus overlap removal by content hash.

Pre-training corpora are scrubbed of downstream evaluation images by
comparing MD5 and SHA256 digests. The default rule drops an item only
when both digests appear in the downstream set (a double match is not a
coincidence); the disjunctive any-hash rule is available behind a flag.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

from .errors import MalformedHashError, MalformedJsonError

_MD5_RE = re.compile(r"[0-9a-fA-F]{32}")
_SHA256_RE = re.compile(r"[0-9a-fA-F]{64}")

HashPair = tuple[str, str]


def normalize_hashes(md5: str, sha256: str) -> HashPair:
    """Validate hex widths and lowercase both digests."""
    if not isinstance(md5, str) or not _MD5_RE.fullmatch(md5):
        raise MalformedHashError(f"bad md5 {md5!r}")
    if not isinstance(sha256, str) or not _SHA256_RE.fullmatch(sha256):
        raise MalformedHashError(f"bad sha256 {sha256!r}")
    return md5.lower(), sha256.lower()


def hash_file(path: str | Path) -> HashPair:
    md5 = hashlib.md5()
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            md5.update(chunk)
            sha.update(chunk)
    return md5.hexdigest(), sha.hexdigest()


def hash_files(paths: list[str | Path]) -> dict[str, HashPair]:
    return {str(p): hash_file(p) for p in paths}


def load_hash_manifest(path: str | Path) -> dict[str, HashPair]:
    """JSON object: id -> {"md5": ..., "sha256": ...}."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(f"{path}: {exc}")
    if not isinstance(raw, dict):
        raise MalformedJsonError(f"{path}: expected an object of hash records")
    out: dict[str, HashPair] = {}
    for item_id, rec in raw.items():
        if not isinstance(rec, dict) or "md5" not in rec or "sha256" not in rec:
            raise MalformedJsonError(f"{path}: {item_id!r} missing md5/sha256")
        out[item_id] = normalize_hashes(rec["md5"], rec["sha256"])
    return out


def dedup_corpus(
    corpus: dict[str, HashPair],
    downstream: dict[str, HashPair],
    require_both: bool = True,
) -> tuple[list[str], list[str]]:
    """Split corpus ids into (retained, dropped), preserving input order.

    Membership is checked per digest against the downstream sets; with
    require_both (default) an item is dropped only when its MD5 and its
    SHA256 both appear downstream, otherwise either match suffices.
    """
    down_md5 = set()
    down_sha = set()
    for md5, sha in downstream.values():
        m, s = normalize_hashes(md5, sha)
        down_md5.add(m)
        down_sha.add(s)
    retained: list[str] = []
    dropped: list[str] = []
    for item_id, (md5, sha) in corpus.items():
        m, s = normalize_hashes(md5, sha)
        md5_hit = m in down_md5
        sha_hit = s in down_sha
        hit = (md5_hit and sha_hit) if require_both else (md5_hit or sha_hit)
        (dropped if hit else retained).append(item_id)
    return retained, dropped
