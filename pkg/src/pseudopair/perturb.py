"""Gaussian pseudo text features, mixing schedules, and pair records.

A pseudo text feature for image feature f is

    h = normalize(f + xi * ||f|| * eps / ||eps||),   eps ~ N(0, I)

so xi directly controls the angular spread regardless of the scale of f.
Draws come from a counter-based RNG keyed by (seed, image_id, j): the j-th
draw for an image is the same no matter how many workers produced it or in
what order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import NORM_FLOOR, FeatureMatrix, normalize
from .errors import IterOutOfRangeError, NonFiniteValueError, ZeroVectorError

SOURCES = ("gaussian", "retrieval", "clo")


@dataclass
class PerturbConfig:
    xi: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.xi < 0:
            raise ValueError("xi must be >= 0")


def keyed_rng(seed: int, *parts: object) -> np.random.Generator:
    """Philox generator keyed by a hash of (seed, *parts).

    Counter-based, so streams for distinct keys are independent and a
    given key always yields the same stream, independent of call order.
    """
    msg = "\x1f".join([repr(seed), *[repr(p) for p in parts]]).encode("utf-8")
    key = int.from_bytes(hashlib.blake2b(msg, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_pseudo_feature(
    image_feat: np.ndarray, cfg: PerturbConfig, image_id: str, j: int
) -> np.ndarray:
    """The j-th Gaussian pseudo feature for one image. float32, unit-norm.

    xi = 0 degenerates to normalize(image_feat) exactly: the perturbation
    term is scaled by 0.0 before the same normalization path runs.
    """
    f32 = np.asarray(image_feat, dtype=np.float32)
    f = f32.astype(np.float64)
    norm_f = float(np.linalg.norm(f))
    if norm_f < NORM_FLOOR:
        raise ZeroVectorError("image feature has near-zero norm")
    rng = keyed_rng(cfg.seed, "gauss", image_id, j)
    eps = rng.standard_normal(f.shape[0])
    norm_eps = float(np.linalg.norm(eps))
    while norm_eps < NORM_FLOOR:  # vanishing draw; astronomically unlikely
        eps = rng.standard_normal(f.shape[0])
        norm_eps = float(np.linalg.norm(eps))
    perturbed = f + (cfg.xi * norm_f / norm_eps) * eps
    return normalize(perturbed.astype(np.float32))


@dataclass
class MixingSchedule:
    """Probability of drawing a Gaussian (rather than retrieval) feature.

    Starts at 1.0 and never increases. linear ramps affinely from 1 at
    t=0 to `floor` at t=total_iters; step stays at 1 before switch_point
    and at `floor` from switch_point on.
    """

    kind: str
    total_iters: int
    floor: float = 0.0
    switch_point: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "step"):
            raise ValueError(f"kind must be linear or step, got {self.kind!r}")
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must lie in [0, 1]")
        if self.kind == "step":
            if self.switch_point is None:
                raise ValueError("step schedule needs switch_point")
            if not 1 <= self.switch_point <= self.total_iters:
                raise ValueError("switch_point must lie in [1, total_iters]")

    def value(self, t: int) -> float:
        if not 0 <= t <= self.total_iters:
            raise IterOutOfRangeError(f"t={t} outside [0, {self.total_iters}]")
        if self.kind == "linear":
            return 1.0 + (self.floor - 1.0) * (t / self.total_iters)
        return 1.0 if t < self.switch_point else self.floor


@dataclass
class PseudoPair:
    """One (image, pseudo text feature) training pair."""

    image_id: str
    feature: np.ndarray
    source: str
    score: float | None = None
    caption: str | None = None

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        feat = np.asarray(self.feature, dtype=np.float32)
        if feat.ndim != 1:
            raise ValueError("feature must be 1-d")
        if not np.isfinite(feat).all():
            raise NonFiniteValueError("pair feature contains NaN or Inf")
        self.feature = feat


def sample_pair(
    image_id: str,
    image_feat: np.ndarray,
    pool: list[PseudoPair],
    schedule: MixingSchedule,
    t: int,
    rng: np.random.Generator,
    cfg: PerturbConfig,
) -> PseudoPair:
    """Draw one training pair at iteration t.

    With probability schedule.value(t) (or always, when the retrieval pool
    is empty) a fresh Gaussian feature is drawn; otherwise one pool entry
    is picked uniformly. All randomness flows through `rng` and the keyed
    Gaussian stream, so a fixed (seed, schedule, pool) replays exactly.
    """
    p = schedule.value(t)
    use_gaussian = (not pool) or (float(rng.random()) < p)
    if use_gaussian:
        j = int(rng.integers(0, 2**63))
        feat = gaussian_pseudo_feature(image_feat, cfg, image_id, j)
        return PseudoPair(image_id=image_id, feature=feat, source="gaussian")
    pick = pool[int(rng.integers(0, len(pool)))]
    return PseudoPair(
        image_id=image_id,
        feature=pick.feature,
        source=pick.source,
        score=pick.score,
        caption=pick.caption,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def pair_to_json_line(pair: PseudoPair) -> str:
    obj = {
        "image_id": pair.image_id,
        "source": pair.source,
        "score": None if pair.score is None else float(pair.score),
        "caption": pair.caption,
        "feature": [float(v) for v in pair.feature],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_pairs_jsonl(path: str | Path, pairs: list[PseudoPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(pair_to_json_line(pair) + "\n")


def read_pairs_jsonl(path: str | Path) -> list[PseudoPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            pairs.append(
                PseudoPair(
                    image_id=obj["image_id"],
                    feature=np.asarray(obj["feature"], dtype=np.float32),
                    source=obj["source"],
                    score=obj["score"],
                    caption=obj["caption"],
                )
            )
    return pairs


def pairs_to_matrix(pairs: list[PseudoPair]) -> FeatureMatrix:
    """Stack pair features into a bank with "<image_id>#<k>" row ids,
    k counting that image's pairs in emission order."""
    counter: dict[str, int] = {}
    ids = []
    for pair in pairs:
        k = counter.get(pair.image_id, 0)
        counter[pair.image_id] = k + 1
        ids.append(f"{pair.image_id}#{k}")
    if pairs:
        rows = np.stack([p.feature for p in pairs])
        unit = bool(
            np.all(np.abs(np.linalg.norm(rows.astype(np.float64), axis=1) - 1.0) <= 1e-5)
        )
    else:
        rows = np.empty((0, 1), dtype=np.float32)
        unit = True
    return FeatureMatrix(rows=rows, ids=ids, unit_normalized=unit)
