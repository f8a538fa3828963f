"""View grouping loss with hardness-aware attention.

For an anchor ``q`` with positive set ``P`` (other views of its group) and
negative set ``M`` (views of other groups)::

    A_i  = sum_{j in M} sig(c_qj - c_qi)
    G_i  = sum_{j in P, j != i} sig(c_qj - c_qi)       gamma_i = 1 / G_i
    L_q  = 1 - mean_{i in P} 1 / (gamma_i * A_i + 1)

with ``sig(x) = 1 / (1 + exp(-x / tau))``. The batch loss is the sum of
``L_q`` over every view. Gradients are closed form; see ``kernels.py`` for the
inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyPositiveSet, InvalidTemperature, NotAPositivePair, ShapeMismatch, ZeroNormVector

NORM_FLOOR = 1e-12


@dataclass
class EmbeddingBatch:
    """Feature vectors, one row per view, with the group id of each view."""

    vectors: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ShapeMismatch(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if self.groups.shape != (self.vectors.shape[0],):
            raise ShapeMismatch(
                f"groups length {self.groups.shape} does not match {self.vectors.shape[0]} vectors"
            )
        if np.any(self.groups < 0):
            raise ValueError("group ids must be non-negative")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class VglConfig:
    tau: float = 0.2
    attention_enabled: bool = True
    # gamma used when an anchor has exactly one positive (its defining sum is empty)
    singleton_gamma: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidTemperature(f"tau must be > 0, got {self.tau}")


@dataclass
class LossOutput:
    total: float
    per_anchor: np.ndarray
    grad_sims: np.ndarray | None = None
    grad_embeddings: np.ndarray | None = None


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_FLOOR:
        raise ZeroNormVector(index=0)
    if nv < NORM_FLOOR:
        raise ZeroNormVector(index=1)
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def tempered_sigmoid(x: float, tau: float) -> float:
    """``1 / (1 + exp(-x / tau))``, evaluated without overflow."""
    if not tau > 0:
        raise InvalidTemperature(f"tau must be > 0, got {tau}")
    z = x / tau
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _normalize(vectors):
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        raise ZeroNormVector(index=int(bad[0]))
    return v / norms[:, None], norms


def similarity_matrix(batch) -> np.ndarray:
    """Pairwise cosine similarities of a batch (or a raw ``(n, D)`` array)."""
    vectors = batch.vectors if isinstance(batch, EmbeddingBatch) else batch
    u, _ = _normalize(vectors)
    c = u @ u.T
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def _check_positives(groups):
    _, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    lonely = np.flatnonzero(counts[inverse] < 2)
    if lonely.size:
        raise EmptyPositiveSet(index=int(lonely[0]))


def _partition(q, groups):
    groups = np.asarray(groups)
    same = groups == groups[q]
    same[q] = False
    return np.flatnonzero(same), np.flatnonzero(groups != groups[q])


def _row(sims, q):
    sims = np.asarray(sims, dtype=np.float64)
    return sims[q] if sims.ndim == 2 else sims


def hardness_attention(q: int, i: int, sims, groups, cfg: VglConfig) -> float:
    """Attention weight of positive ``i`` for anchor ``q``.

    Large when ``c_qi`` sits above the anchor's other positive similarities,
    small when it sits below them.
    """
    pos, _ = _partition(q, groups)
    if i not in pos:
        raise NotAPositivePair(f"view {i} is not a positive of anchor {q}")
    s = _row(sims, q)
    others = [j for j in pos if j != i]
    if not others:
        return float(cfg.singleton_gamma)
    total = 0.0
    for j in others:
        total += tempered_sigmoid(s[j] - s[i], cfg.tau)
    return 1.0 / total


def vgl_anchor(q: int, sims, groups, cfg: VglConfig) -> float:
    """Loss of a single anchor, evaluated term by term.

    ``sims`` may be the full matrix or just the anchor's row. This is the
    readable scalar route; :func:`vgl_batch` uses the vectorised kernels.
    """
    pos, neg = _partition(q, groups)
    if pos.size == 0:
        raise EmptyPositiveSet(index=q)
    s = _row(sims, q)
    acc = 0.0
    for i in pos:
        gamma = hardness_attention(q, i, s, groups, cfg) if cfg.attention_enabled else 1.0
        a = 0.0
        for j in neg:
            a += tempered_sigmoid(s[j] - s[i], cfg.tau)
        # 1 - 1/(gamma*a + 1), written to stay exact when gamma*a is tiny
        acc += gamma * a / (gamma * a + 1.0)
    return acc / pos.size


def vgl_grad_sims(q: int, sims, groups, cfg: VglConfig) -> dict[int, float]:
    """``dL_q / dc_qk`` for every ``k != q``, including the attention path."""
    pos, neg = _partition(q, groups)
    if pos.size == 0:
        raise EmptyPositiveSet(index=q)
    s = _row(sims, q)
    _, grad = kernels.anchor_numpy(s, pos, neg, cfg.tau, cfg.attention_enabled, cfg.singleton_gamma, True)
    return {int(k): float(grad[k]) for k in range(s.shape[0]) if k != q}


def loss_and_grad_sims(sims, groups, cfg: VglConfig, want_grad: bool = True):
    """All anchors at once: ``(per_anchor, grad)`` with ``grad[q, k] = dL_q/dc_qk``."""
    groups = np.asarray(groups, dtype=np.int64)
    _check_positives(groups)
    return kernels.vgl_rows(sims, groups, cfg.tau, cfg.attention_enabled, cfg.singleton_gamma, want_grad)


def embedding_grad_from_sims(vectors, row_grad) -> np.ndarray:
    """Chain ``dL/dc`` (row-local, as returned by the kernels) through cosine similarity."""
    u, norms = _normalize(vectors)
    sym = row_grad + row_grad.T
    du = sym @ u
    radial = np.sum(du * u, axis=1, keepdims=True)
    return (du - radial * u) / norms[:, None]


def vgl_batch(batch: EmbeddingBatch, cfg: VglConfig, with_grad: bool = False) -> LossOutput:
    """Summed view grouping loss with every view acting as the anchor once."""
    _check_positives(batch.groups)
    sims = similarity_matrix(batch)
    per_anchor, grad = kernels.vgl_rows(
        sims, batch.groups, cfg.tau, cfg.attention_enabled, cfg.singleton_gamma, with_grad
    )
    total = 0.0
    for value in per_anchor:
        total += value
    out = LossOutput(total=float(total), per_anchor=per_anchor)
    if with_grad:
        out.grad_sims = grad
        out.grad_embeddings = embedding_grad_from_sims(batch.vectors, grad)
    return out


def vgl_grad_embeddings(batch: EmbeddingBatch, cfg: VglConfig) -> np.ndarray:
    return vgl_batch(batch, cfg, with_grad=True).grad_embeddings
