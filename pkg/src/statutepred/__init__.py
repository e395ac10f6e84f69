"""Statute prediction for legal case descriptions.

A supervised label-wise attention classifier over sentence embeddings
predicts which statutes apply to a case and points at the sentences that
drove each prediction; counterfactual necessity/sufficiency scores check
those explanations.  A zero-shot LLM prompting pipeline (standard and
chain-of-thought) covers the unsupervised route, gated to the attention
model's top-k statutes per case.
"""

__version__ = "0.1.0"

from .corpus import CaseDescription, Dataset, Statute, mask_numerics, truncate_sentences
from .embeddings import (
    EmbeddedCase,
    EmbeddingCache,
    HashingProvider,
    HttpEmbeddingProvider,
    PrecomputedProvider,
    embed_texts,
    random_statute_embeddings,
)
from .model import ModelConfig, ModelParams, forward, init_params, predict, top_k
from .training import TrainerOptions, train

__all__ = [
    "CaseDescription",
    "Dataset",
    "EmbeddedCase",
    "EmbeddingCache",
    "HashingProvider",
    "HttpEmbeddingProvider",
    "ModelConfig",
    "ModelParams",
    "PrecomputedProvider",
    "Statute",
    "TrainerOptions",
    "embed_texts",
    "forward",
    "init_params",
    "mask_numerics",
    "predict",
    "random_statute_embeddings",
    "top_k",
    "train",
    "truncate_sentences",
    "__version__",
]
