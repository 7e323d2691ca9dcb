"""Similarity distributions between image and text feature banks.

Reproduces the diagnostic that motivates feature synthesis: histograms of
(a) image-to-own-caption cosine, (b) caption-to-caption cosine within one
image, and (c) caption-to-caption cosine across different images. All bins
span [-1, 1]; counts, mean, and std are reported, plotting is out of scope.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import NORM_FLOOR, FeatureMatrix
from .errors import (
    DegeneratePairingError,
    ShapeMismatchError,
    UnknownImageIdError,
    ZeroVectorError,
)


@dataclass
class SimHistogram:
    bin_edges: np.ndarray  # (bins + 1,) over [-1, 1]
    counts: np.ndarray  # (bins,) int64
    mean: float
    std: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def make_histogram(values: np.ndarray, bins: int) -> SimHistogram:
    """Histogram cosine values into `bins` equal cells over [-1, 1].

    Values are clipped into the interval before binning (float rounding
    can push a cosine a hair past 1), so every sample lands in a cell.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.clip(values, -1.0, 1.0), bins=edges)
    mean = float(values.mean()) if values.size else 0.0
    std = float(values.std()) if values.size else 0.0
    return SimHistogram(bin_edges=edges, counts=counts.astype(np.int64), mean=mean, std=std)


def _unit_rows(mat: np.ndarray, what: str) -> np.ndarray:
    m64 = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(m64, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise ZeroVectorError(f"{what} contains a near-zero row")
    return m64 / norms


def unpaired_similarities(
    texts_unit: np.ndarray,
    pairing: list[str],
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Cosines of n_samples random text pairs drawn from different images.

    Seeded rejection sampling in fixed-size chunks, so a given generator
    state always yields the same pair sequence.
    """
    n = len(pairing)
    groups = set(pairing)
    if len(groups) < 2:
        raise DegeneratePairingError("unpaired sampling needs texts from >= 2 images")
    out = np.empty(n_samples, dtype=np.float64)
    filled = 0
    pair_ids = np.asarray(pairing)
    while filled < n_samples:
        chunk = max(4096, 2 * (n_samples - filled))
        a = rng.integers(0, n, size=chunk)
        b = rng.integers(0, n, size=chunk)
        keep = pair_ids[a] != pair_ids[b]
        a, b = a[keep], b[keep]
        take = min(len(a), n_samples - filled)
        if take:
            out[filled : filled + take] = np.einsum(
                "ij,ij->i", texts_unit[a[:take]], texts_unit[b[:take]]
            )
            filled += take
    return out


def similarity_histograms(
    images: FeatureMatrix,
    texts: FeatureMatrix,
    pairing: list[str],
    bins: int = 100,
    unpaired_samples: int = 50_000,
    seed: int = 0,
) -> dict[str, SimHistogram]:
    """The three diagnostic histograms, keyed image_text,
    text_text_paired, text_text_unpaired.

    pairing[t] names the image owning text row t. Paired text-text pairs
    are all within-image combinations; at least one image must own two or
    more texts. Unpaired pairs are sampled with the given seed.
    """
    if len(pairing) != texts.count:
        raise ShapeMismatchError(f"{len(pairing)} pairing entries for {texts.count} texts")
    img_index = {img_id: r for r, img_id in enumerate(images.ids)}
    rows = []
    for img_id in pairing:
        row = img_index.get(img_id)
        if row is None:
            raise UnknownImageIdError(f"pairing references unknown image {img_id!r}")
        rows.append(row)

    I = _unit_rows(images.rows, "images")
    T = _unit_rows(texts.rows, "texts")

    image_text = np.einsum("ij,ij->i", T, I[np.asarray(rows, dtype=np.intp)])

    by_image: dict[str, list[int]] = {}
    for t, img_id in enumerate(pairing):
        by_image.setdefault(img_id, []).append(t)
    paired_vals: list[float] = []
    for members in by_image.values():
        for a, b in itertools.combinations(members, 2):
            paired_vals.append(float(T[a] @ T[b]))
    if not paired_vals:
        raise DegeneratePairingError("no image owns two or more texts")

    rng = np.random.default_rng(seed)
    unpaired = unpaired_similarities(T, pairing, unpaired_samples, rng)

    return {
        "image_text": make_histogram(image_text, bins),
        "text_text_paired": make_histogram(np.asarray(paired_vals), bins),
        "text_text_unpaired": make_histogram(unpaired, bins),
    }


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def write_histogram_csv(path: str | Path, hist: SimHistogram) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for b in range(len(hist.counts)):
            writer.writerow(
                [repr(float(hist.bin_edges[b])), repr(float(hist.bin_edges[b + 1])), int(hist.counts[b])]
            )


def summarize(hists: dict[str, SimHistogram]) -> dict[str, dict[str, float | int]]:
    return {
        name: {"mean": h.mean, "std": h.std, "count": h.total}
        for name, h in hists.items()
    }
