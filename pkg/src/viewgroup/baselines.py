"""Reference losses: the archetypical triplet loss and a single-positive NCE.

Both come with closed-form gradients so the training loop can swap them in
for the view grouping loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyNegativeSet, EmptyPositiveSet, InvalidTemperature, ZeroNormVector
from .vgl import NORM_FLOOR, LossOutput, _check_positives, embedding_grad_from_sims, similarity_matrix

DISTANCES = ("euclidean", "one_minus_cosine")


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.5
    distance: str = "one_minus_cosine"

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")


@dataclass(frozen=True)
class NceConfig:
    temperature: float = 0.2

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidTemperature(f"temperature must be > 0, got {self.temperature}")


def triplet_hinge(d_pos: float, d_neg: float, margin: float) -> float:
    return max(0.0, margin + d_pos - d_neg)


def _distance_and_grad(a, b, kind):
    """Distance between ``a`` and ``b`` and its gradients w.r.t. each."""
    if kind == "euclidean":
        diff = a - b
        d = float(np.linalg.norm(diff))
        if d == 0.0:
            zero = np.zeros_like(a)
            return 0.0, zero, zero
        return d, diff / d, -diff / d
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroNormVector()
    ua = a / na
    ub = b / nb
    cos = float(np.clip(ua @ ub, -1.0, 1.0))
    ga = -(ub - cos * ua) / na
    gb = -(ua - cos * ub) / nb
    return 1.0 - cos, ga, gb


def triplet_loss(q, ps, ns, cfg: TripletConfig = TripletConfig(), with_grad: bool = False):
    """``max(0, m + d(q, ps) - d(q, ns))``.

    With ``with_grad`` returns ``(loss, (dq, dps, dns))``; at the hinge point
    the zero subgradient is used.
    """
    q, ps, ns = (np.asarray(x, dtype=np.float64) for x in (q, ps, ns))
    d_pos, gq_pos, g_ps = _distance_and_grad(q, ps, cfg.distance)
    d_neg, gq_neg, g_ns = _distance_and_grad(q, ns, cfg.distance)
    loss = triplet_hinge(d_pos, d_neg, cfg.margin)
    if not with_grad:
        return loss
    if loss > 0.0:
        return loss, (gq_pos - gq_neg, g_ps, -g_ns)
    zero = np.zeros_like(q)
    return loss, (zero, zero.copy(), zero.copy())


def _designated_positive(q, groups):
    groups = np.asarray(groups)
    same = np.flatnonzero(groups == groups[q])
    same = same[same != q]
    if same.size == 0:
        raise EmptyPositiveSet(index=q)
    return int(same[0])


def _nce_terms(q, s, groups, t):
    groups = np.asarray(groups)
    p = _designated_positive(q, groups)
    neg = np.flatnonzero(groups != groups[q])
    if neg.size == 0:
        raise EmptyNegativeSet(f"anchor {q} has no negative view")
    idx = np.concatenate(([p], neg))
    logits = np.asarray(s, dtype=np.float64)[idx] / t
    shift = logits.max()
    e = np.exp(logits - shift)
    z = e.sum()
    loss = float(np.log(z) + shift - logits[0])
    return loss, idx, e / z


def nce_loss(q: int, sims, groups, cfg: NceConfig = NceConfig()) -> float:
    """Softmax cross-entropy of anchor ``q`` against its first positive."""
    s = np.asarray(sims, dtype=np.float64)
    row = s[q] if s.ndim == 2 else s
    return _nce_terms(q, row, groups, cfg.temperature)[0]


def nce_grad_sims(q: int, sims, groups, cfg: NceConfig = NceConfig()) -> np.ndarray:
    s = np.asarray(sims, dtype=np.float64)
    row = s[q] if s.ndim == 2 else s
    _, idx, prob = _nce_terms(q, row, groups, cfg.temperature)
    grad = np.zeros(row.shape[0])
    grad[idx] = prob / cfg.temperature
    grad[idx[0]] -= 1.0 / cfg.temperature
    return grad


def nce_batch(vectors, groups, cfg: NceConfig = NceConfig(), with_grad: bool = False) -> LossOutput:
    groups = np.asarray(groups, dtype=np.int64)
    _check_positives(groups)
    sims = similarity_matrix(vectors)
    n = sims.shape[0]
    per_anchor = np.zeros(n)
    grad = np.zeros((n, n))
    for q in range(n):
        per_anchor[q] = nce_loss(q, sims, groups, cfg)
        if with_grad:
            grad[q] = nce_grad_sims(q, sims, groups, cfg)
    out = LossOutput(total=float(sum(per_anchor)), per_anchor=per_anchor)
    if with_grad:
        out.grad_sims = grad
        out.grad_embeddings = embedding_grad_from_sims(vectors, grad)
    return out


def triplet_indices(groups) -> list[tuple[int, int, int]]:
    """One ``(anchor, positive, negative)`` triple per view.

    The positive is the first other view of the anchor's group; the negative
    is the first view of another group found scanning forward (cyclically)
    from the anchor. No mining.
    """
    groups = np.asarray(groups)
    n = groups.shape[0]
    triples = []
    for q in range(n):
        p = _designated_positive(q, groups)
        for step in range(1, n):
            k = (q + step) % n
            if groups[k] != groups[q]:
                triples.append((q, p, k))
                break
        else:
            raise EmptyNegativeSet(f"anchor {q} has no negative view")
    return triples


def triplet_batch(vectors, groups, cfg: TripletConfig = TripletConfig(), with_grad: bool = False) -> LossOutput:
    v = np.asarray(vectors, dtype=np.float64)
    _check_positives(np.asarray(groups))
    per_anchor = np.zeros(v.shape[0])
    grad = np.zeros_like(v)
    for q, p, k in triplet_indices(groups):
        if with_grad:
            per_anchor[q], (gq, gp, gk) = triplet_loss(v[q], v[p], v[k], cfg, with_grad=True)
            grad[q] += gq
            grad[p] += gp
            grad[k] += gk
        else:
            per_anchor[q] = triplet_loss(v[q], v[p], v[k], cfg)
    out = LossOutput(total=float(sum(per_anchor)), per_anchor=per_anchor)
    if with_grad:
        out.grad_embeddings = grad
    return out
