"""Corpus ingestion and episodic N-way K-shot sampling.

The on-disk corpus format is FewRel-style JSON: a top-level object mapping
relation ids to instance lists, each instance being::

    {"tokens": ["word", ...],
     "h": ["mention text", "entity id", [[tok_idx, ...], ...]],
     "t": [... same layout ...]}

Entity position lists hold one entry per mention; each mention lists its
(consecutive) token indices.  The first mention is used and converted to an
exclusive-end span, so ``[[3, 4]]`` becomes the span ``(3, 5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SamplingError, ValidationError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1


@dataclass
class Instance:
    tokens: list[str]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation_id: str

    def __post_init__(self):
        n = len(self.tokens)
        for name, (start, end) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= start < end <= n):
                raise ValidationError(
                    f"{name} span {(start, end)} invalid for sentence of {n} tokens"
                )


@dataclass
class Corpus:
    relations: dict[str, list[Instance]]
    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for rel, instances in self.relations.items():
            if not instances:
                raise ValidationError(f"relation {rel} has no instances")
        if not self.vocab:
            self.vocab = build_vocab(self.relations)

    @property
    def relation_ids(self) -> list[str]:
        return sorted(self.relations)

    def instance_count(self) -> int:
        return sum(len(v) for v in self.relations.values())


def build_vocab(relations: dict[str, list[Instance]]) -> dict[str, int]:
    """Word -> index map with reserved PAD=0 and UNK=1; words sorted for determinism."""
    words = sorted({tok for insts in relations.values() for inst in insts for tok in inst.tokens})
    vocab = {PAD_TOKEN: PAD_INDEX, UNK_TOKEN: UNK_INDEX}
    for w in words:
        if w not in vocab:
            vocab[w] = len(vocab)
    return vocab


def _span_from_positions(positions, rel: str, index: int, which: str) -> tuple[int, int]:
    if not isinstance(positions, list) or not positions:
        raise ParseError(f"relation {rel} instance {index}: {which} has no position list")
    mention = positions[0]
    if not isinstance(mention, list) or not mention:
        raise ParseError(f"relation {rel} instance {index}: {which} first mention empty")
    return int(mention[0]), int(mention[-1]) + 1


def load_fewrel_json(path) -> Corpus:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: expected a top-level relation->instances object")
    relations: dict[str, list[Instance]] = {}
    for rel, records in raw.items():
        if not isinstance(records, list) or not records:
            raise ValidationError(f"{path}: relation {rel} has no instances")
        instances = []
        for i, rec in enumerate(records):
            try:
                tokens = rec["tokens"]
                head = _span_from_positions(rec["h"][2], rel, i, "head")
                tail = _span_from_positions(rec["t"][2], rel, i, "tail")
            except (KeyError, IndexError, TypeError) as e:
                raise ParseError(f"{path}: relation {rel} instance {i}: malformed record ({e})") from e
            if not isinstance(tokens, list) or not tokens:
                raise ParseError(f"{path}: relation {rel} instance {i}: empty tokens")
            try:
                instances.append(Instance([str(t) for t in tokens], head, tail, rel))
            except ValidationError as e:
                raise ParseError(f"{path}: relation {rel} instance {i}: {e}") from e
        relations[rel] = instances
    return Corpus(relations)


def save_fewrel_json(corpus: Corpus, path) -> None:
    """Serialize a corpus back to the FewRel JSON layout."""
    raw = {}
    for rel in corpus.relation_ids:
        records = []
        for inst in corpus.relations[rel]:
            h0, h1 = inst.head_span
            t0, t1 = inst.tail_span
            records.append(
                {
                    "tokens": inst.tokens,
                    "h": [" ".join(inst.tokens[h0:h1]), "h", [list(range(h0, h1))]],
                    "t": [" ".join(inst.tokens[t0:t1]), "t", [list(range(t0, t1))]],
                }
            )
        raw[rel] = records
    Path(path).write_text(json.dumps(raw, sort_keys=True) + "\n", encoding="utf-8")


def random_split(corpus: Corpus, counts: tuple[int, int, int], seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Relation-disjoint train/val/test corpora; deterministic for a fixed seed.

    The children share the parent's vocabulary so that encoders trained on one
    split stay applicable to the others.
    """
    n_train, n_val, n_test = counts
    ids = corpus.relation_ids
    if n_train + n_val + n_test > len(ids):
        raise ValidationError(
            f"split {counts} needs {n_train + n_val + n_test} relations, corpus has {len(ids)}"
        )
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    picks = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val : n_train + n_val + n_test])
    return tuple(
        Corpus({rel: corpus.relations[rel] for rel in part}, vocab=corpus.vocab) for part in picks
    )


@dataclass(frozen=True)
class SamplerConfig:
    n_way: int = 5
    k_shot: int = 5
    query_size: int = 20
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.n_way, self.k_shot, self.query_size, self.batch_size) < 1:
            raise ValidationError("sampler counts must be positive")

    def queries_per_class(self) -> list[int]:
        """Class-balanced query allocation; the remainder goes to the lowest class indices."""
        base, extra = divmod(self.query_size, self.n_way)
        return [base + (1 if k < extra else 0) for k in range(self.n_way)]


@dataclass
class Episode:
    n_way: int
    k_shot: int
    support: list[list[Instance]]  # n_way x k_shot
    query: list[Instance]
    query_labels: list[int]
    class_ids: list[str]

    def __post_init__(self):
        if len(set(self.class_ids)) != self.n_way:
            raise ValidationError("support classes must be distinct")
        if any(len(row) != self.k_shot for row in self.support):
            raise ValidationError("every class needs exactly k_shot support instances")
        if any(not 0 <= y < self.n_way for y in self.query_labels):
            raise ValidationError("query labels must index class_ids")

    def all_instances(self) -> list[Instance]:
        flat = [inst for row in self.support for inst in row]
        flat.extend(self.query)
        return flat


def sample_episode(corpus: Corpus, cfg: SamplerConfig, rng: np.random.Generator) -> Episode:
    ids = corpus.relation_ids
    if cfg.n_way > len(ids):
        raise SamplingError(f"{cfg.n_way}-way episode from {len(ids)} relations")
    chosen = [ids[i] for i in rng.choice(len(ids), size=cfg.n_way, replace=False)]
    per_class_queries = cfg.queries_per_class()
    support, query, query_labels = [], [], []
    for label, rel in enumerate(chosen):
        pool = corpus.relations[rel]
        need = cfg.k_shot + per_class_queries[label]
        if len(pool) < need:
            raise SamplingError(
                f"relation {rel} has {len(pool)} instances, episode needs {need}"
            )
        picked = rng.choice(len(pool), size=need, replace=False)
        support.append([pool[i] for i in picked[: cfg.k_shot]])
        for i in picked[cfg.k_shot :]:
            query.append(pool[i])
            query_labels.append(label)
    return Episode(cfg.n_way, cfg.k_shot, support, query, query_labels, chosen)


def make_synthetic_corpus(
    n_relations: int,
    per_relation: int,
    vocab_size: int,
    signal_tokens_per_relation: int,
    seed: int,
    sentence_length: tuple[int, int] = (8, 12),
) -> Corpus:
    """Desk-scale corpus with classes separable by construction.

    Each relation owns ``signal_tokens_per_relation`` dedicated tokens that
    appear in every one of its instances and never in any other relation's;
    the rest of each sentence is filler drawn from the shared tail of the
    vocabulary.  Entity spans are placed at random.
    """
    n_signal = n_relations * signal_tokens_per_relation
    if vocab_size <= n_signal:
        raise ValidationError(
            f"vocab_size {vocab_size} must exceed {n_signal} signal tokens"
        )
    if min(n_relations, per_relation, signal_tokens_per_relation) < 1:
        raise ValidationError("synthetic corpus counts must be positive")
    lo, hi = sentence_length
    if not 1 <= lo <= hi:
        raise ValidationError(f"bad sentence_length range {sentence_length}")
    if lo < signal_tokens_per_relation + 2:
        raise ValidationError("sentences too short to hold signal tokens plus two entities")

    rng = np.random.default_rng(seed)
    words = [f"w{i:04d}" for i in range(vocab_size)]
    filler = words[n_signal:]
    relations: dict[str, list[Instance]] = {}
    for r in range(n_relations):
        rel = f"R{r:02d}"
        signal = words[r * signal_tokens_per_relation : (r + 1) * signal_tokens_per_relation]
        instances = []
        for _ in range(per_relation):
            length = int(rng.integers(lo, hi + 1))
            tokens = [filler[i] for i in rng.integers(0, len(filler), size=length)]
            slots = rng.choice(length, size=signal_tokens_per_relation, replace=False)
            for slot, sig in zip(sorted(slots), signal):
                tokens[slot] = sig
            head, tail = rng.choice(length, size=2, replace=False)
            instances.append(
                Instance(tokens, (int(head), int(head) + 1), (int(tail), int(tail) + 1), rel)
            )
        relations[rel] = instances
    return Corpus(relations)
