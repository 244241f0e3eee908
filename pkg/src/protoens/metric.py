"""Prototypes, dispersion-based feature attention, and weighted distance scoring.

Per class, the attention score of dimension j is the mean pairwise absolute
difference of the support vectors in that dimension (summed over ordered
pairs, divided by n^2), and the weight is w_j = -log(a_j + xi): dimensions
where the support set agrees get large weights.  Weights are bookkeeping, not
parameters; gradients flow through embeddings and prototypes but treat w as a
per-episode constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, ValidationError
from .tensor import (
    Tensor,
    as_tensor,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax,
    sqrt,
    square,
    sub,
)

METRIC_KINDS = ("euclidean", "cosine")

DEFAULT_XI = 0.1


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # N x D
    class_ids: list[str]


@dataclass
class FeatureWeights:
    w: np.ndarray  # N x D
    a: np.ndarray  # N x D raw dispersion scores
    xi: float


@dataclass
class Posterior:
    probs: np.ndarray  # Q x N, rows sum to 1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ValidationError(f"posterior must be 2-D, got shape {self.probs.shape}")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValidationError("posterior rows must sum to 1")

    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def compute_prototypes(support) -> Tensor:
    """Mean over the K axis of (N, K, D) support embeddings."""
    support = as_tensor(support)
    if support.ndim != 3:
        raise ContractError(f"support embeddings must be (N, K, D), got {support.shape}")
    if support.shape[1] < 1:
        raise ContractError("prototype needs at least one support vector per class")
    return reduce_mean(support, axis=1)


def compute_feature_weights(support, xi: float = DEFAULT_XI) -> FeatureWeights:
    """Per-class attention weights from support dispersion; detached from the tape."""
    if xi <= 0:
        raise ValidationError("xi must be positive")
    values = support.data if isinstance(support, Tensor) else np.asarray(support, dtype=np.float64)
    if values.ndim != 3:
        raise ContractError(f"support embeddings must be (N, K, D), got {values.shape}")
    n, k, _ = values.shape
    if k < 1:
        raise ContractError("feature weights need at least one support vector per class")
    diffs = np.abs(values[:, :, None, :] - values[:, None, :, :])  # N x K x K x D
    a = diffs.sum(axis=(1, 2)) / (k * k)
    return FeatureWeights(w=-np.log(a + xi), a=a, xi=xi)


def uniform_feature_weights(n_way: int, dim: int) -> FeatureWeights:
    """All-ones weights: the attention-off configuration."""
    ones = np.ones((n_way, dim))
    return FeatureWeights(w=ones, a=np.zeros((n_way, dim)), xi=DEFAULT_XI)


def weighted_euclidean(query, proto, w) -> float:
    """sum_j w_j * (q_j - c_j)^2 for single vectors."""
    q = np.asarray(query, dtype=np.float64)
    c = np.asarray(proto, dtype=np.float64)
    wv = np.asarray(w, dtype=np.float64)
    if not q.shape == c.shape == wv.shape:
        raise ContractError(f"mismatched vector shapes {q.shape}, {c.shape}, {wv.shape}")
    d = q - c
    return float(np.sum(wv * d * d))


def weighted_cosine(query, proto, w) -> float:
    """Weighted inner product over unweighted L2 norms for single vectors."""
    q = np.asarray(query, dtype=np.float64)
    c = np.asarray(proto, dtype=np.float64)
    wv = np.asarray(w, dtype=np.float64)
    if not q.shape == c.shape == wv.shape:
        raise ContractError(f"mismatched vector shapes {q.shape}, {c.shape}, {wv.shape}")
    qn = float(np.linalg.norm(q))
    cn = float(np.linalg.norm(c))
    if qn == 0.0 or cn == 0.0:
        raise DomainError("cosine similarity of a zero-norm vector")
    return float(np.sum(wv * q * c) / (qn * cn))


def pairwise_scores(queries: Tensor, prototypes: Tensor, weights: FeatureWeights, metric_kind: str) -> Tensor:
    """Differentiable (Q, N) score matrix; higher always means closer.

    Euclidean scores are negated weighted squared distances; cosine scores are
    weighted similarities as-is, so a single softmax turns either into the
    class posterior.
    """
    if metric_kind not in METRIC_KINDS:
        raise ValidationError(f"unknown metric {metric_kind!r}")
    w = Tensor(weights.w[None, :, :])  # 1 x N x D constant
    q = reshape(queries, (queries.shape[0], 1, queries.shape[1]))
    c = reshape(prototypes, (1,) + prototypes.shape)
    if metric_kind == "euclidean":
        d = reduce_sum(mul(w, square(sub(q, c))), axis=-1)
        return mul(d, -1.0)
    q_norm = sqrt(reduce_sum(square(queries), axis=-1, keepdims=True))  # Q x 1
    c_norm = sqrt(reduce_sum(square(prototypes), axis=-1, keepdims=True))  # N x 1
    if np.any(q_norm.data == 0.0) or np.any(c_norm.data == 0.0):
        raise DomainError("cosine similarity of a zero-norm embedding")
    inner = reduce_sum(mul(w, mul(q, c)), axis=-1)  # Q x N
    return mul(inner, 1.0 / matmul(q_norm, reshape(c_norm, (1, c_norm.shape[0]))))


def class_posterior(scores, metric_kind: str) -> Posterior:
    """Softmax posterior from a (Q, N) matrix of distances or similarities."""
    if metric_kind not in METRIC_KINDS:
        raise ValidationError(f"unknown metric {metric_kind!r}")
    values = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DomainError("posterior requires finite scores")
    logits = -values if metric_kind == "euclidean" else values
    probs = softmax(Tensor(logits), axis=-1).data
    return Posterior(probs)
