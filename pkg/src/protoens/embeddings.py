"""Instance -> input matrix: word vectors plus head/tail position embeddings.

Row i of the output is ``concat(word_vec(tok_i), pos_head(i - head_start),
pos_tail(i - tail_start))`` with relative offsets clamped to ±max_len.
Sentences longer than max_len are truncated, shorter ones padded; padded rows
are zeroed (so the PAD word vector never receives gradient and stays at its
zero initialization).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Instance, PAD_INDEX, UNK_INDEX
from .errors import ParseError, ValidationError
from .tensor import Tensor, take_rows, concat, mul, reshape

GLOVE_SCALE = 0.5  # unseen-word init range is ±GLOVE_SCALE / word_dim


@dataclass(frozen=True)
class EmbeddingConfig:
    word_dim: int = 50
    pos_dim: int = 5
    max_len: int = 128
    use_positions: bool = True

    def __post_init__(self):
        if min(self.word_dim, self.pos_dim, self.max_len) < 1:
            raise ValidationError("embedding dimensions must be positive")

    @property
    def width(self) -> int:
        return self.word_dim + (2 * self.pos_dim if self.use_positions else 0)


@dataclass
class EncodedInput:
    matrix: Tensor  # max_len x width, PAD rows zero
    mask: np.ndarray  # max_len bools


class EmbeddingTable:
    """Learnable word and position lookup tables shared by the encoders."""

    def __init__(self, vocab: dict[str, int], word_vectors: Tensor, pos_head: Tensor, pos_tail: Tensor, cfg: EmbeddingConfig):
        if word_vectors.shape != (len(vocab), cfg.word_dim):
            raise ValidationError(
                f"word table shape {word_vectors.shape} != ({len(vocab)}, {cfg.word_dim})"
            )
        self.vocab = vocab
        self.word_vectors = word_vectors
        self.pos_head = pos_head
        self.pos_tail = pos_tail
        self.cfg = cfg

    @property
    def width(self) -> int:
        return self.cfg.width

    def parameters(self) -> dict[str, Tensor]:
        named = {"word_vectors": self.word_vectors}
        if self.cfg.use_positions:
            named["pos_head"] = self.pos_head
            named["pos_tail"] = self.pos_tail
        return named

    def clone(self) -> "EmbeddingTable":
        return EmbeddingTable(
            self.vocab,
            Tensor(self.word_vectors.data.copy(), requires_grad=True),
            Tensor(self.pos_head.data.copy(), requires_grad=True),
            Tensor(self.pos_tail.data.copy(), requires_grad=True),
            self.cfg,
        )


def read_glove(path, word_dim: int) -> dict[str, np.ndarray]:
    """Parse whitespace-separated ``word v1 .. v{word_dim}`` lines."""
    vectors = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != word_dim + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {word_dim} values, got {len(parts) - 1}"
                )
            try:
                vectors[parts[0]] = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-numeric value ({e})") from e
    return vectors


def init_embeddings(
    vocab: dict[str, int],
    glove_path=None,
    rng: np.random.Generator | None = None,
    cfg: EmbeddingConfig = EmbeddingConfig(),
) -> EmbeddingTable:
    """Build the lookup tables; GloVe rows where available, small uniform otherwise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    scale = GLOVE_SCALE / cfg.word_dim
    words = rng.uniform(-scale, scale, size=(len(vocab), cfg.word_dim))
    words[PAD_INDEX] = 0.0
    if glove_path is not None:
        pretrained = read_glove(Path(glove_path), cfg.word_dim)
        for word, idx in vocab.items():
            if idx != PAD_INDEX and word in pretrained:
                words[idx] = pretrained[word]
    pos_rows = 2 * cfg.max_len + 1
    pos_head = rng.uniform(-scale, scale, size=(pos_rows, cfg.pos_dim))
    pos_tail = rng.uniform(-scale, scale, size=(pos_rows, cfg.pos_dim))
    return EmbeddingTable(
        vocab,
        Tensor(words, requires_grad=True),
        Tensor(pos_head, requires_grad=True),
        Tensor(pos_tail, requires_grad=True),
        cfg,
    )


def _indices(instance: Instance, table: EmbeddingTable):
    cfg = table.cfg
    vocab = table.vocab
    tokens = instance.tokens[: cfg.max_len]
    n = len(tokens)
    word_idx = np.full(cfg.max_len, PAD_INDEX, dtype=np.intp)
    for i, tok in enumerate(tokens):
        word_idx[i] = vocab.get(tok, UNK_INDEX)
    positions = np.arange(cfg.max_len)
    head_off = np.clip(positions - instance.head_span[0], -cfg.max_len, cfg.max_len) + cfg.max_len
    tail_off = np.clip(positions - instance.tail_span[0], -cfg.max_len, cfg.max_len) + cfg.max_len
    mask = np.zeros(cfg.max_len, dtype=bool)
    mask[:n] = True
    return word_idx, head_off, tail_off, mask


def embed_batch(instances: list[Instance], table: EmbeddingTable) -> tuple[Tensor, np.ndarray]:
    """Encode a batch of instances to (B, max_len, width) plus a boolean mask."""
    parts = [_indices(inst, table) for inst in instances]
    word_idx = np.stack([p[0] for p in parts])
    mask = np.stack([p[3] for p in parts])
    pieces = [take_rows(table.word_vectors, word_idx)]
    if table.cfg.use_positions:
        pieces.append(take_rows(table.pos_head, np.stack([p[1] for p in parts])))
        pieces.append(take_rows(table.pos_tail, np.stack([p[2] for p in parts])))
    matrix = concat(pieces, axis=-1) if len(pieces) > 1 else pieces[0]
    matrix = mul(matrix, Tensor(mask[:, :, None].astype(np.float64)))
    return matrix, mask


def embed(instance: Instance, table: EmbeddingTable) -> EncodedInput:
    matrix, mask = embed_batch([instance], table)
    return EncodedInput(reshape(matrix, matrix.shape[1:]), mask[0])
