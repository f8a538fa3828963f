"""Representation quality at desk scale: view retrieval and linear probing."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .augment import AugmentationSpec, build_enlarged_batch
from .encoder import forward
from .errors import EmptyPositiveSet, KTooLarge, LabelMismatch
from .vgl import EmbeddingBatch, _check_positives, similarity_matrix


@dataclass
class RetrievalReport:
    k: int
    precision_at_k: float
    chance_level: float
    num_queries: int

    def to_dict(self) -> dict:
        return asdict(self)


def knn_view_retrieval(batch: EmbeddingBatch, k: int = 1) -> RetrievalReport:
    """Precision@k of cosine nearest neighbours sharing the query's group.

    Every view is a query and is excluded from its own neighbour list. Ties
    go to the lower index.
    """
    n = len(batch)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n - 1:
        raise KTooLarge(f"k={k} but only {n - 1} candidates per query")
    try:
        _check_positives(batch.groups)
    except EmptyPositiveSet:
        raise
    sims = similarity_matrix(batch)
    np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = batch.groups[order] == batch.groups[:, None]
    _, inverse, counts = np.unique(batch.groups, return_inverse=True, return_counts=True)
    precision = float(np.mean(hits.sum(axis=1) / k))
    chance = float(np.mean((counts[inverse] - 1) / (n - 1)))
    return RetrievalReport(k=k, precision_at_k=precision, chance_level=chance, num_queries=n)


def embed(params, views, chunk: int = 256) -> np.ndarray:
    views = np.asarray(views)
    parts = [forward(params, views[i : i + chunk])[0] for i in range(0, views.shape[0], chunk)]
    return np.concatenate(parts, axis=0).astype(np.float64)


def view_retrieval(params, images, n_aug: int, spec: AugmentationSpec, seed: int, k: int = 1) -> RetrievalReport:
    """Augment ``images`` ``n_aug`` times each, embed, and score retrieval."""
    batch = build_enlarged_batch(images, n_aug, spec, seed)
    return knn_view_retrieval(EmbeddingBatch(embed(params, batch.views), batch.groups), k)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(train_x, train_y, test_x, test_y, steps: int = 500, lr: float = 0.5) -> float:
    """Test accuracy of a softmax-regression layer trained on frozen features.

    Features are standardised with training statistics; weights start at zero
    and are fitted by full-batch gradient descent.
    """
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    classes = np.unique(train_y)
    if not np.array_equal(classes, np.unique(test_y)):
        raise LabelMismatch(f"train labels {classes.tolist()} != test labels {np.unique(test_y).tolist()}")
    x = np.asarray(train_x, dtype=np.float64)
    xt = np.asarray(test_x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-12)
    x = (x - mean) / std
    xt = (xt - mean) / std
    y = np.searchsorted(classes, train_y)
    onehot = np.eye(classes.size)[y]
    w = np.zeros((x.shape[1], classes.size))
    b = np.zeros(classes.size)
    for _ in range(steps):
        residual = (_softmax(x @ w + b) - onehot) / x.shape[0]
        w -= lr * (x.T @ residual)
        b -= lr * residual.sum(axis=0)
    pred = np.argmax(xt @ w + b, axis=1)
    return float(np.mean(classes[pred] == test_y))
