"""Scene-graph embeddings trained for image-similarity ranking."""

from ._core import (
    Dataset,
    Error,
    Model,
    generate,
    kendall_tau,
    pearson_r,
    spearman_rho,
    train,
)

__all__ = [
    "Dataset",
    "Error",
    "Model",
    "generate",
    "kendall_tau",
    "pearson_r",
    "spearman_rho",
    "train",
]
