"""Member models trained under a joint objective and combined at inference.

The joint loss sums every member's query cross-entropy with an entropy
penalty on its posterior (peaked predictions cost less), so one backward pass
trains all members plus the shared embedding table.  Members are additively
decoupled: apart from shared embeddings, each member's gradient equals the
gradient of its standalone loss.

At inference the member posteriors are combined either by probability
averaging (default) or by plurality voting with averaged-probability
tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .data import Episode
from .embeddings import EmbeddingConfig, EmbeddingTable, embed_batch, init_embeddings
from .encoders import ENCODER_VARIANTS, SentenceEncoder, build_encoder
from .errors import ContractError, ValidationError
from .metric import (
    METRIC_KINDS,
    FeatureWeights,
    Posterior,
    compute_feature_weights,
    compute_prototypes,
    pairwise_scores,
    uniform_feature_weights,
    DEFAULT_XI,
)
from .tensor import (
    Tensor,
    add,
    exp,
    log_softmax,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    select_index,
    slice_axis,
    softmax,
)

COMBINE_SCHEMES = ("average", "vote")


@dataclass(frozen=True)
class MemberSpec:
    encoder: str
    metric: str
    feature_attention: bool = True

    def __post_init__(self):
        if self.encoder not in ENCODER_VARIANTS:
            raise ValidationError(f"unknown encoder {self.encoder!r}")
        if self.metric not in METRIC_KINDS:
            raise ValidationError(f"unknown metric {self.metric!r}")

    def label(self) -> str:
        suffix = "" if self.feature_attention else "_noattn"
        return f"{self.encoder}_{self.metric}{suffix}"


def default_member_specs(feature_attention: bool = True) -> list[MemberSpec]:
    """The full grid: four encoders crossed with both metrics (eight members)."""
    return [
        MemberSpec(encoder, metric, feature_attention)
        for encoder, metric in product(ENCODER_VARIANTS, METRIC_KINDS)
    ]


@dataclass
class Member:
    spec: MemberSpec
    encoder: SentenceEncoder
    table: EmbeddingTable


class EnsembleModel:
    """E member models over a (possibly shared) embedding table."""

    def __init__(
        self,
        specs: list[MemberSpec],
        vocab: dict[str, int],
        *,
        seed: int = 0,
        out_dim: int = 230,
        xi: float = DEFAULT_XI,
        entropy_coeff: float = 1.0,
        combine: str = "average",
        embedding_cfg: EmbeddingConfig | None = None,
        shared_embeddings: bool = True,
        glove_path=None,
    ):
        if not specs:
            raise ValidationError("ensemble needs at least one member")
        if combine not in COMBINE_SCHEMES:
            raise ValidationError(f"unknown combine scheme {combine!r}")
        self.specs = list(specs)
        self.vocab = vocab
        self.out_dim = out_dim
        self.xi = xi
        self.entropy_coeff = entropy_coeff
        self.combine_scheme = combine
        self.embedding_cfg = embedding_cfg if embedding_cfg is not None else EmbeddingConfig()
        self.shared_embeddings = shared_embeddings
        self.seed = seed
        rng = np.random.default_rng(seed)
        base = init_embeddings(vocab, glove_path, rng, self.embedding_cfg)
        self.shared_table = base if shared_embeddings else None
        self.members = []
        for spec in self.specs:
            table = base if shared_embeddings else base.clone()
            encoder = build_encoder(spec.encoder, rng, in_dim=self.embedding_cfg.width, out_dim=out_dim)
            self.members.append(Member(spec, encoder, table))

    @property
    def size(self) -> int:
        return len(self.members)

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        if self.shared_embeddings:
            for name, t in self.shared_table.parameters().items():
                named[f"embeddings.{name}"] = t
        for i, member in enumerate(self.members):
            prefix = f"member{i}_{member.spec.label()}"
            if not self.shared_embeddings:
                for name, t in member.table.parameters().items():
                    named[f"{prefix}.embeddings.{name}"] = t
            for name, t in member.encoder.parameters().items():
                named[f"{prefix}.{name}"] = t
        return named

    def member_parameters(self, index: int) -> dict[str, Tensor]:
        member = self.members[index]
        named = dict(member.encoder.parameters())
        if not self.shared_embeddings:
            for name, t in member.table.parameters().items():
                named[f"embeddings.{name}"] = t
        return named

    def describe(self) -> dict:
        return {
            "members": [[s.encoder, s.metric, s.feature_attention] for s in self.specs],
            "combine": self.combine_scheme,
            "out_dim": self.out_dim,
            "xi": self.xi,
            "entropy_coeff": self.entropy_coeff,
            "shared_embeddings": self.shared_embeddings,
            "embedding": {
                "word_dim": self.embedding_cfg.word_dim,
                "pos_dim": self.embedding_cfg.pos_dim,
                "max_len": self.embedding_cfg.max_len,
                "use_positions": self.embedding_cfg.use_positions,
            },
        }

    def clone(self) -> "EnsembleModel":
        new = object.__new__(EnsembleModel)
        new.specs = list(self.specs)
        new.vocab = self.vocab
        new.out_dim = self.out_dim
        new.xi = self.xi
        new.entropy_coeff = self.entropy_coeff
        new.combine_scheme = self.combine_scheme
        new.embedding_cfg = self.embedding_cfg
        new.shared_embeddings = self.shared_embeddings
        new.seed = self.seed
        new.shared_table = self.shared_table.clone() if self.shared_embeddings else None
        new.members = []
        for member in self.members:
            table = new.shared_table if self.shared_embeddings else member.table.clone()
            new.members.append(Member(member.spec, member.encoder.clone(), table))
        return new

    def member_scores(self, episode: Episode) -> list[Tensor]:
        """Per-member (Q, N) score matrices; higher means closer."""
        instances = episode.all_instances()
        n, k = episode.n_way, episode.k_shot
        q = len(episode.query)
        cache: dict[int, tuple] = {}
        scores = []
        for member in self.members:
            key = id(member.table)
            if key not in cache:
                cache[key] = embed_batch(instances, member.table)
            matrix, mask = cache[key]
            emb = member.encoder.encode(matrix, mask)
            support = reshape(slice_axis(emb, 0, 0, n * k), (n, k, self.out_dim))
            queries = slice_axis(emb, 0, n * k, n * k + q)
            prototypes = compute_prototypes(support)
            if member.spec.feature_attention:
                weights = compute_feature_weights(support, self.xi)
            else:
                weights = uniform_feature_weights(n, self.out_dim)
            scores.append(pairwise_scores(queries, prototypes, weights, member.spec.metric))
        return scores

    def predict_detailed(self, episode: Episode) -> tuple[Posterior, np.ndarray]:
        """Combined posterior plus the (E, Q, N) member posterior stack."""
        member_probs = np.stack([softmax(s, axis=-1).data for s in self.member_scores(episode)])
        return combine_posteriors(member_probs, self.combine_scheme), member_probs

    def predict_proba(self, episode: Episode) -> np.ndarray:
        return self.predict_detailed(episode)[0].probs


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def nll_from_scores(scores: Tensor, labels) -> Tensor:
    """Mean cross-entropy of softmax(scores) against integer labels."""
    picked = select_index(log_softmax(scores, axis=-1), np.asarray(labels, dtype=np.intp))
    return mul(reduce_mean(picked), -1.0)


def entropy_from_scores(scores: Tensor) -> Tensor:
    """Mean posterior entropy, computed from scores so underflow cannot bite."""
    ls = log_softmax(scores, axis=-1)
    rows = reduce_sum(mul(exp(ls), ls), axis=-1)
    return mul(reduce_mean(rows), -1.0)


def entropy_term(posterior) -> float:
    """Mean row entropy of an explicit posterior; 0*log(0) counts as 0."""
    if isinstance(posterior, Posterior):
        probs = posterior.probs
    elif isinstance(posterior, Tensor):
        probs = posterior.data
    else:
        probs = np.asarray(posterior, dtype=np.float64)
    if probs.ndim != 2 or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-8):
        raise ContractError("entropy_term needs rows that sum to 1")
    terms = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    return float(-terms.sum(axis=1).mean())


def member_loss(model: EnsembleModel, index: int, episode: Episode) -> Tensor:
    """One member's query cross-entropy (weight decay lives in the optimizer)."""
    scores = model.member_scores(episode)[index]
    return nll_from_scores(scores, episode.query_labels)


def joint_loss(model: EnsembleModel, episode: Episode) -> Tensor:
    """Sum over members of cross-entropy plus entropy_coeff times posterior entropy."""
    labels = np.asarray(episode.query_labels, dtype=np.intp)
    total = None
    for scores in model.member_scores(episode):
        term = nll_from_scores(scores, labels)
        if model.entropy_coeff:
            term = add(term, mul(entropy_from_scores(scores), model.entropy_coeff))
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# Posterior combination
# ---------------------------------------------------------------------------


def combine_posteriors(member_posteriors, scheme: str = "average") -> Posterior:
    """Merge an (E, Q, N) stack of member posteriors into one posterior.

    average: arithmetic mean of the probability rows, renormalized.
    vote: each member casts its argmax; the plurality class wins, and ties
    break toward the tied class with the highest averaged probability.  The
    returned rows are (vote counts + tie-break distribution) / (E + 1), whose
    argmax is exactly the vote winner.
    """
    if scheme not in COMBINE_SCHEMES:
        raise ValidationError(f"unknown combine scheme {scheme!r}")
    stack = np.asarray([p.probs if isinstance(p, Posterior) else p for p in member_posteriors], dtype=np.float64)
    if stack.ndim != 3:
        raise ContractError(f"expected (E, Q, N) posteriors, got shape {stack.shape}")
    e, _, n = stack.shape
    if e == 1:
        return Posterior(stack[0].copy())
    if scheme == "average":
        mean = stack.mean(axis=0)
        return Posterior(mean / mean.sum(axis=1, keepdims=True))
    votes = np.argmax(stack, axis=2)  # E x Q
    avg = stack.mean(axis=0)  # Q x N
    rows = np.empty_like(avg)
    for qi in range(stack.shape[1]):
        counts = np.bincount(votes[:, qi], minlength=n).astype(np.float64)
        tied = counts == counts.max()
        tie_break = np.where(tied, avg[qi], 0.0)
        tie_break /= tie_break.sum()
        rows[qi] = (counts + tie_break) / (e + 1)
    return Posterior(rows)
