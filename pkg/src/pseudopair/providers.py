"""Text encoder providers.

An encoder provider maps caption strings to unit-norm feature rows in the
joint embedding space. The contract (encode_texts / dim) is deliberately
tiny so the pipeline can run against an in-process synthetic encoder, a
remote endpoint speaking the wire protocol, or anything else shaped alike.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ProviderFailureError


@runtime_checkable
class EncoderProvider(Protocol):
    def encode_texts(self, texts: list[str]) -> np.ndarray:
        """(len(texts), dim) float32, unit rows, row order = input order."""
        ...

    def dim(self) -> int:
        ...


def _hash_seed(*parts: object) -> int:
    msg = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


class SyntheticEncoder:
    """Deterministic stand-in for a real text tower.

    Every whitespace token gets a fixed random unit vector derived from
    (seed, token) by hashing; a text embeds as the renormalized sum of a
    shared cone direction (weighted) and the mean of its token vectors.
    The cone term concentrates all outputs the way real text features
    concentrate, while token overlap still orders similarities sensibly,
    so word and caption retrieval behave qualitatively like the real thing.
    """

    def __init__(self, dim: int, seed: int = 0, cone_weight: float = 1.0):
        if dim < 2:
            raise ValueError("synthetic encoder needs dim >= 2")
        self._dim = dim
        self._seed = seed
        self._cone_weight = float(cone_weight)
        self._token_cache: dict[str, np.ndarray] = {}
        self._cone = self._fresh_vector("\x00cone\x00")

    def _fresh_vector(self, token: str) -> np.ndarray:
        rng = np.random.default_rng(_hash_seed(self._seed, "tok", token))
        v = rng.standard_normal(self._dim)
        return v / np.linalg.norm(v)

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            vec = self._fresh_vector(token)
            self._token_cache[token] = vec
        return vec

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = np.empty((len(texts), self._dim), dtype=np.float64)
        for r, text in enumerate(texts):
            tokens = text.split()
            acc = self._cone_weight * self._cone
            if tokens:
                acc = acc + sum(self._token_vector(t) for t in tokens) / len(tokens)
            rows[r] = acc / np.linalg.norm(acc)
        return rows.astype(np.float32)

    def dim(self) -> int:
        return self._dim


class BatchedEncoder:
    """Batching, memoizing, counting wrapper around any provider.

    encode_texts dedups its input against a text -> row cache, ships cache
    misses to the inner provider in chunks of batch_size, and reassembles
    rows in input order. Counters:

      requested_texts  total rows asked of this wrapper (cache hits included)
      encoded_texts    distinct texts actually sent to the inner provider
      call_count       number of inner encode_texts invocations

    reset_cache() clears the memo but keeps the counters running, so a
    caller can scope deduplication (say per image) while still accounting
    for the whole run.
    """

    def __init__(self, inner: EncoderProvider, batch_size: int = 256):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self._inner = inner
        self._batch_size = batch_size
        self._cache: dict[str, np.ndarray] = {}
        self.requested_texts = 0
        self.encoded_texts = 0
        self.call_count = 0

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        self.requested_texts += len(texts)
        missing: list[str] = []
        seen: set[str] = set()
        for t in texts:
            if t not in self._cache and t not in seen:
                seen.add(t)
                missing.append(t)
        for start in range(0, len(missing), self._batch_size):
            chunk = missing[start : start + self._batch_size]
            rows = np.asarray(self._inner.encode_texts(chunk), dtype=np.float32)
            if rows.shape != (len(chunk), self.dim()):
                raise ProviderFailureError(
                    f"provider returned shape {rows.shape} for {len(chunk)} texts"
                )
            self.call_count += 1
            self.encoded_texts += len(chunk)
            for t, row in zip(chunk, rows):
                self._cache[t] = row
        if not texts:
            return np.empty((0, self.dim()), dtype=np.float32)
        return np.stack([self._cache[t] for t in texts])

    def dim(self) -> int:
        return self._inner.dim()

    def reset_cache(self) -> None:
        self._cache.clear()

    def stats(self) -> dict[str, int]:
        return {
            "requested_texts": self.requested_texts,
            "encoded_texts": self.encoded_texts,
            "call_count": self.call_count,
        }


def resolve_provider(spec: str, dim: int, seed: int = 0) -> EncoderProvider:
    """Build a provider from a CLI-style spec string.

    "synthetic" gives the in-process encoder at the requested dim;
    "endpoint:<addr>" connects to a wire-protocol server (tcp host:port
    or a unix socket path).
    """
    if spec == "synthetic":
        return SyntheticEncoder(dim=dim, seed=seed)
    if spec.startswith("endpoint:"):
        from .protocol import EndpointProvider

        return EndpointProvider(spec[len("endpoint:") :])
    raise ValueError(f"unknown provider spec {spec!r}")
