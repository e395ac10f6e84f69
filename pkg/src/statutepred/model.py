"""Per-statute multi-head attention classifier over sentence embeddings.

Every statute is scored independently.  For statute ``i`` and head ``h``,
the statute-content embedding is projected to a query, each case-sentence
embedding to a key, and scaled dot products softmax-normalized over the
sentences weight a convex combination of the sentence embeddings (the head
context).  Head contexts are concatenated, pushed through one ReLU hidden
layer shared by all statutes, and a per-statute linear head emits a 2-way
softmax over absent/present.

All math is float64 numpy.  :func:`backward` returns analytic gradients for
every parameter tensor; sentence and statute embeddings are fixed inputs
and receive no gradient.  Sentence order carries no signal: permuting the
rows of the case matrix permutes attention weights and nothing else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Iterable

import numpy as np

NEGATIVE_CLASS = 0
POSITIVE_CLASS = 1
LOG_FLOOR = 1e-12
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ModelConfig:
    num_statutes: int
    heads: int = 3
    embed_dim: int = 768
    attn_dim: int = 100
    hidden_dim: int = 1536
    dropout: float = 0.1
    positive_class_weight: float = 3.0
    negative_class_weight: float = 1.0
    max_sentences: int = 150

    def __post_init__(self) -> None:
        for name in ("num_statutes", "heads", "embed_dim", "attn_dim", "hidden_dim", "max_sentences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.positive_class_weight <= 0 or self.negative_class_weight <= 0:
            raise ValueError("class weights must be positive")


@dataclass
class ModelParams:
    """All trainable tensors.

    Shapes for N statutes, H heads, attention dim A, input dim D, hidden
    dim R: W_q, W_k are (N, H, A, D) with biases (N, H, A); the shared
    hidden layer W_h is (R, H*D) with bias (R,); the per-statute output
    heads W_o are (N, 2, R) with biases (N, 2).
    """

    W_q: np.ndarray
    b_q: np.ndarray
    W_k: np.ndarray
    b_k: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray

    TENSOR_NAMES: ClassVar[tuple[str, ...]] = (
        "W_q", "b_q", "W_k", "b_k", "W_h", "b_h", "W_o", "b_o",
    )

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: t.copy() for name, t in self.tensors().items()})

    def check_finite(self) -> None:
        for name, tensor in self.tensors().items():
            if not np.isfinite(tensor).all():
                raise ValueError(f"parameter tensor {name} contains non-finite values")


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, h = config.num_statutes, config.heads
    a, d, r = config.attn_dim, config.embed_dim, config.hidden_dim
    return {
        "W_q": (n, h, a, d),
        "b_q": (n, h, a),
        "W_k": (n, h, a, d),
        "b_k": (n, h, a),
        "W_h": (r, h * d),
        "b_h": (r,),
        "W_o": (n, 2, r),
        "b_o": (n, 2),
    }


def check_shapes(params: ModelParams, config: ModelConfig) -> None:
    for name, want in expected_shapes(config).items():
        got = getattr(params, name).shape
        if tuple(got) != want:
            raise ValueError(f"tensor {name} has shape {tuple(got)}, config requires {want}")


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(**{name: np.zeros_like(t) for name, t in params.tensors().items()})


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weight matrices, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def glorot(shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    shapes = expected_shapes(config)
    d, a, r = config.embed_dim, config.attn_dim, config.hidden_dim
    return ModelParams(
        W_q=glorot(shapes["W_q"], d, a),
        b_q=np.zeros(shapes["b_q"]),
        W_k=glorot(shapes["W_k"], d, a),
        b_k=np.zeros(shapes["b_k"]),
        W_h=glorot(shapes["W_h"], config.heads * d, r),
        b_h=np.zeros(shapes["b_h"]),
        W_o=glorot(shapes["W_o"], r, 2),
        b_o=np.zeros(shapes["b_o"]),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class AttentionDetail:
    """One (statute, head) attention computation, kept for inspection."""

    query: np.ndarray     # (A,)
    keys: np.ndarray      # (|C|, A)
    logits: np.ndarray    # (|C|,)
    weights: np.ndarray   # (|C|,), sums to 1


def attention_weights(
    params: ModelParams,
    config: ModelConfig,
    statute: int,
    head: int,
    X: np.ndarray,
    y: np.ndarray,
) -> AttentionDetail:
    """Attention of one (statute, head) pair over the case sentences."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not 0 <= statute < config.num_statutes:
        raise ValueError(f"statute index {statute} outside [0, {config.num_statutes})")
    if not 0 <= head < config.heads:
        raise ValueError(f"head index {head} outside [0, {config.heads})")
    if X.ndim != 2 or X.shape[1] != config.embed_dim or X.shape[0] < 1:
        raise ValueError(f"case matrix shape {X.shape} incompatible with embed_dim {config.embed_dim}")
    if y.shape != (config.embed_dim,):
        raise ValueError(f"statute embedding shape {y.shape}, expected ({config.embed_dim},)")
    query = params.W_q[statute, head] @ y + params.b_q[statute, head]
    keys = X @ params.W_k[statute, head].T + params.b_k[statute, head]
    logits = keys @ query / math.sqrt(config.attn_dim)
    return AttentionDetail(query=query, keys=keys, logits=logits, weights=_softmax_rows(logits))


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass, enough to run backward."""

    query: np.ndarray         # (N, H, A)
    keys: np.ndarray          # (N, H, |C|, A)
    logits: np.ndarray        # (N, H, |C|) scaled attention logits
    alpha: np.ndarray         # (N, H, |C|) attention weights
    head_ctx: np.ndarray      # (N, H, D)
    ctx: np.ndarray           # (N, H*D)
    pre_hidden: np.ndarray    # (N, R) before ReLU
    hidden: np.ndarray        # (N, R) after ReLU (and dropout when training)
    probs: np.ndarray         # (N, 2) per-statute absent/present distribution
    dropout_mask: np.ndarray | None = None   # (N, R) bool, kept units
    dropout_keep: float = 1.0

    @property
    def num_sentences(self) -> int:
        return self.alpha.shape[-1]

    def positive_probs(self) -> np.ndarray:
        return self.probs[:, POSITIVE_CLASS]

    def predicted_set(self) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.probs[:, POSITIVE_CLASS] > DECISION_THRESHOLD))


def _check_inputs(config: ModelConfig, X: np.ndarray, Y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != config.embed_dim:
        raise ValueError(f"case matrix shape {X.shape}, expected (|C|, {config.embed_dim})")
    if X.shape[0] < 1:
        raise ValueError("case matrix has no sentences")
    if X.shape[0] > config.max_sentences:
        raise ValueError(f"case has {X.shape[0]} sentences, config caps at {config.max_sentences}")
    if Y.shape != (config.num_statutes, config.embed_dim):
        raise ValueError(
            f"statute matrix shape {Y.shape}, expected ({config.num_statutes}, {config.embed_dim})"
        )


def forward(
    params: ModelParams,
    config: ModelConfig,
    X: np.ndarray,
    Y: np.ndarray,
    training: bool = False,
    dropout_seed: int | None = None,
) -> ForwardTrace:
    """Full forward pass for one case against every statute.

    Dropout (inverted scaling) touches the hidden layer only and only when
    ``training`` is set; inference needs no rescaling.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_inputs(config, X, Y)
    check_shapes(params, config)

    # Batched matmul keeps every contraction on BLAS without einsum overhead.
    query = np.matmul(params.W_q, Y[:, None, :, None])[..., 0] + params.b_q
    keys = np.matmul(X, params.W_k.transpose(0, 1, 3, 2)) + params.b_k[:, :, None, :]
    logits = np.matmul(keys, query[..., None])[..., 0] / math.sqrt(config.attn_dim)
    if not np.isfinite(logits).all():
        i, h, _ = np.argwhere(~np.isfinite(logits))[0]
        raise FloatingPointError(f"non-finite attention logit at statute {i}, head {h}")
    alpha = _softmax_rows(logits)
    head_ctx = np.matmul(alpha, X)
    ctx = head_ctx.reshape(config.num_statutes, config.heads * config.embed_dim)
    pre_hidden = ctx @ params.W_h.T + params.b_h
    hidden = np.maximum(pre_hidden, 0.0)

    dropout_mask = None
    keep = 1.0
    if training and config.dropout > 0.0:
        rng = np.random.default_rng(dropout_seed)
        keep = 1.0 - config.dropout
        dropout_mask = rng.random(hidden.shape) < keep
        hidden = hidden * dropout_mask / keep

    scores = np.matmul(params.W_o, hidden[:, :, None])[..., 0] + params.b_o
    probs = _softmax_rows(scores)
    if not np.isfinite(probs).all():
        i = int(np.argwhere(~np.isfinite(probs))[0][0])
        raise FloatingPointError(f"non-finite output distribution for statute {i}")
    return ForwardTrace(
        query=query,
        keys=keys,
        logits=logits,
        alpha=alpha,
        head_ctx=head_ctx,
        ctx=ctx,
        pre_hidden=pre_hidden,
        hidden=hidden,
        probs=probs,
        dropout_mask=dropout_mask,
        dropout_keep=keep,
    )


def _targets_and_weights(
    gold: Iterable[int], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    positive = np.zeros(config.num_statutes, dtype=bool)
    for label in gold:
        if not 0 <= label < config.num_statutes:
            raise ValueError(f"gold label {label} outside [0, {config.num_statutes})")
        positive[label] = True
    target = np.zeros((config.num_statutes, 2))
    target[:, POSITIVE_CLASS] = positive
    target[:, NEGATIVE_CLASS] = ~positive
    weights = np.where(positive, config.positive_class_weight, config.negative_class_weight)
    return target, weights


def loss(
    trace: ForwardTrace, gold: Iterable[int], config: ModelConfig
) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy summed over statutes.

    Each statute contributes ``-w * log(p_goldclass)`` with the positive
    class weighted ``positive_class_weight`` and the negative class
    ``negative_class_weight``; the log argument is floored at 1e-12.
    Returns (total, per-statute vector).
    """
    target, weights = _targets_and_weights(gold, config)
    p_gold = (trace.probs * target).sum(axis=1)
    per_statute = -weights * np.log(np.maximum(p_gold, LOG_FLOOR))
    return float(per_statute.sum()), per_statute


def backward(
    params: ModelParams,
    config: ModelConfig,
    X: np.ndarray,
    Y: np.ndarray,
    gold: Iterable[int],
    trace: ForwardTrace,
) -> ModelParams:
    """Analytic gradient of the summed loss w.r.t. every parameter tensor.

    The trace must come from a forward pass over the same (params, X, Y);
    it carries the dropout mask so train-time gradients see the exact
    stochastic network that produced the loss.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    target, weights = _targets_and_weights(gold, config)
    probs = trace.probs

    # Output softmax + weighted CE; rows hitting the log floor are flat.
    d_scores = weights[:, None] * (probs - target)
    p_gold = (probs * target).sum(axis=1)
    d_scores[p_gold <= LOG_FLOOR] = 0.0

    dW_o = d_scores[:, :, None] * trace.hidden[:, None, :]
    db_o = d_scores.copy()
    d_hidden = np.matmul(params.W_o.transpose(0, 2, 1), d_scores[:, :, None])[..., 0]
    if trace.dropout_mask is not None:
        d_hidden = d_hidden * trace.dropout_mask / trace.dropout_keep
    d_pre = d_hidden * (trace.pre_hidden > 0.0)

    dW_h = d_pre.T @ trace.ctx
    db_h = d_pre.sum(axis=0)
    d_ctx = d_pre @ params.W_h
    d_head_ctx = d_ctx.reshape(config.num_statutes, config.heads, config.embed_dim)

    d_alpha = np.matmul(d_head_ctx, X.T)
    inner = (trace.alpha * d_alpha).sum(axis=-1, keepdims=True)
    d_logits = trace.alpha * (d_alpha - inner)
    d_raw = d_logits / math.sqrt(config.attn_dim)

    d_query = np.matmul(d_raw[:, :, None, :], trace.keys)[:, :, 0, :]
    d_keys = d_raw[..., None] * trace.query[:, :, None, :]

    dW_q = d_query[..., None] * Y[:, None, None, :]
    db_q = d_query
    dW_k = np.matmul(d_keys.transpose(0, 1, 3, 2), X)
    db_k = d_keys.sum(axis=2)

    return ModelParams(
        W_q=dW_q, b_q=db_q, W_k=dW_k, b_k=db_k,
        W_h=dW_h, b_h=db_h, W_o=dW_o, b_o=db_o,
    )


@dataclass(frozen=True)
class Prediction:
    """Per-statute presence probabilities and the thresholded statute set."""

    probs: np.ndarray = field(repr=False)
    predicted: frozenset[int] = frozenset()


def predict(params: ModelParams, config: ModelConfig, X: np.ndarray, Y: np.ndarray) -> Prediction:
    """Statutes whose presence probability exceeds 0.5; exact ties lose."""
    trace = forward(params, config, X, Y, training=False)
    probs = trace.positive_probs()
    return Prediction(probs=probs, predicted=trace.predicted_set())


def top_k(
    params: ModelParams, config: ModelConfig, X: np.ndarray, Y: np.ndarray, k: int
) -> list[tuple[int, float]]:
    """The k most probable statutes, probability descending, ties by lower id."""
    if not 1 <= k <= config.num_statutes:
        raise ValueError(f"k must be in [1, {config.num_statutes}], got {k}")
    probs = predict(params, config, X, Y).probs
    order = sorted(range(config.num_statutes), key=lambda i: (-probs[i], i))
    return [(i, float(probs[i])) for i in order[:k]]
