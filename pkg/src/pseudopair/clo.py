"""Contrastive latent optimization of pseudo text features.

Given a batch of image features F (rows unit-norm) and text latents H,
the alignment matrix softmaxes cosine similarity over the image axis:

    c[j, i] = exp(cos(F_j, H_i) / tau) / sum_k exp(cos(F_k, H_i) / tau)

so each column is a distribution over images and c[i, i] is the odds the
i-th latent picks out its own image. Latents ascend the diagonal
log-alignment sum_i log c[i, i] for T steps of size lambda. Each column's
softmax runs over image rows only, so latent i's trajectory depends on
nothing but h_i and F: features refine independently, and batch refinement
is literally a loop of single-feature refinements. There is no
variance-maximizing term anywhere in the update.

Gradient of log c[i, i] in the raw h, with hhat = h/||h||,
p = softmax_k(cos(F_k, hhat)/tau), and
g_k = (F_k - (F_k . hhat) hhat) / (tau ||h||):

    grad = g_i - sum_k p_k g_k

which is tangent to hhat (every g_k is).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import NORM_FLOOR
from .errors import ShapeMismatchError, ZeroVectorError


@dataclass
class CloConfig:
    """steps=T, step_size=lambda, tau, and per-step renormalization."""

    steps: int = 10
    step_size: float = 0.01
    tau: float = 0.5
    renormalize: bool = True

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class AlignmentMatrix:
    """Column-stochastic image-text alignment and its diagonal objective."""

    c: np.ndarray  # (n, n) float64, c[j, i] = P(image j | text i)
    objective: float  # sum_i log c[i, i], always <= 0


def _unit_rows(mat: np.ndarray, what: str) -> np.ndarray:
    m64 = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(m64, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise ZeroVectorError(f"{what} contains a near-zero row")
    return m64 / norms


def _column_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def alignment(image_feats: np.ndarray, text_feats: np.ndarray, tau: float) -> AlignmentMatrix:
    """Alignment of n image rows against n text rows at temperature tau."""
    F = np.asarray(image_feats)
    H = np.asarray(text_feats)
    if F.ndim != 2 or F.shape != H.shape:
        raise ShapeMismatchError(f"image {F.shape} vs text {H.shape}")
    sims = _unit_rows(F, "image_feats") @ _unit_rows(H, "text_feats").T
    c = _column_softmax(sims / tau)
    objective = float(np.log(np.diagonal(c)).sum())
    return AlignmentMatrix(c=c, objective=objective)


def clo_gradient(h: np.ndarray, image_feats: np.ndarray, i: int, tau: float) -> np.ndarray:
    """Gradient of log c[i, i] with respect to the raw (unnormalized) h.

    Returns float64. Tangent to h; the zero vector when n == 1.
    """
    F = _unit_rows(image_feats, "image_feats")
    n = F.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"i={i} outside [0, {n})")
    h64 = np.asarray(h, dtype=np.float64)
    norm_h = float(np.linalg.norm(h64))
    if norm_h < NORM_FLOOR:
        raise ZeroVectorError("latent has near-zero norm")
    hhat = h64 / norm_h
    cos = F @ hhat
    p = _column_softmax((cos / tau)[:, None])[:, 0]
    # g_k = (F_k - cos_k * hhat) / (tau * ||h||), row-stacked
    g = (F - np.outer(cos, hhat)) / (tau * norm_h)
    return g[i] - p @ g


def _ascend(h64: np.ndarray, Fu: np.ndarray, i: int, cfg: CloConfig) -> np.ndarray:
    h64 = h64 + cfg.step_size * clo_gradient(h64, Fu, i, cfg.tau)
    if cfg.renormalize:
        norm = float(np.linalg.norm(h64))
        if norm < NORM_FLOOR:
            raise ZeroVectorError(f"latent {i} collapsed to zero")
        h64 = h64 / norm
    return h64


def _finalize(h64: np.ndarray, cfg: CloConfig) -> np.ndarray:
    if cfg.renormalize:
        norm = float(np.linalg.norm(h64))
        if norm < NORM_FLOOR:
            raise ZeroVectorError("latent collapsed to zero")
        h64 = h64 / norm
    return h64.astype(np.float32)


def refine_latent(
    h: np.ndarray, image_feats: np.ndarray, i: int, cfg: CloConfig
) -> np.ndarray:
    """Refine a single latent against the image batch. float32 out."""
    Fu = _unit_rows(image_feats, "image_feats")
    h64 = np.asarray(h, dtype=np.float64).copy()
    for _ in range(cfg.steps):
        h64 = _ascend(h64, Fu, i, cfg)
    return _finalize(h64, cfg)


def clo_refine(
    text_feats: np.ndarray,
    image_feats: np.ndarray,
    cfg: CloConfig,
    trace: list[tuple[int, float, float]] | None = None,
) -> np.ndarray:
    """Run T ascent steps on every latent row. float32 out, (n, D).

    T=0 returns the input rows, renormalized when the flag is on. When a
    trace list is passed, (step, objective, mean diagonal cosine) is
    appended for step 0 (initial state) through T.
    """
    H = np.asarray(text_feats, dtype=np.float64)
    F = np.asarray(image_feats)
    if H.ndim != 2 or H.shape != F.shape:
        raise ShapeMismatchError(f"text {H.shape} vs image {F.shape}")
    n = H.shape[0]
    if n == 0:
        return H.astype(np.float32)
    Fu = _unit_rows(F, "image_feats")
    rows = [H[i].copy() for i in range(n)]

    def record(step: int) -> None:
        if trace is None:
            return
        current = np.stack(rows)
        a = alignment(Fu, current, cfg.tau)
        diag = np.einsum("ij,ij->i", Fu, _unit_rows(current, "latents"))
        trace.append((step, a.objective, float(diag.mean())))

    record(0)
    for step in range(1, cfg.steps + 1):
        for i in range(n):
            rows[i] = _ascend(rows[i], Fu, i, cfg)
        record(step)
    return np.stack([_finalize(r, cfg) for r in rows])
