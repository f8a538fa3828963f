"""View grouping loss toolkit: loss, baselines, augmentation, a small encoder,
pretraining, loss-geometry analysis and evaluation."""

from .vgl import (
    EmbeddingBatch,
    LossOutput,
    VglConfig,
    cosine_similarity,
    hardness_attention,
    similarity_matrix,
    tempered_sigmoid,
    vgl_anchor,
    vgl_batch,
    vgl_grad_embeddings,
    vgl_grad_sims,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingBatch",
    "LossOutput",
    "VglConfig",
    "cosine_similarity",
    "hardness_attention",
    "similarity_matrix",
    "tempered_sigmoid",
    "vgl_anchor",
    "vgl_batch",
    "vgl_grad_embeddings",
    "vgl_grad_sims",
]
