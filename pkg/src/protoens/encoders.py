"""Four sentence encoders mapping embedded inputs to fixed-width vectors.

All encoders consume a batch tensor of shape (B, L, in_dim) plus a boolean
mask (B, L) and emit (B, out_dim) with a common default out_dim of 230 so
their outputs are interchangeable under one metric layer.  Appending masked
positions never changes an encoder's output: convolutional variants pool only
over unmasked positions, and the recurrent/attention variants zero their
hidden rows at masked positions before pooling.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from .embeddings import EncodedInput
from .errors import ContractError, ShapeMismatchError, ValidationError
from .tensor import (
    Tensor,
    add,
    concat,
    flip,
    kaiming_uniform,
    masked_max,
    matmul,
    mul,
    pad_axis,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    tanh,
    transpose,
    zeros,
)

ENCODER_VARIANTS = ("cnn", "inception", "gru", "transformer")

_LN_EPS = 1e-9


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise ContractError("encoder got a sentence with every position masked")
    return mask


def _conv1d_same(x: Tensor, weight: Tensor, bias: Tensor, window: int) -> Tensor:
    """Stride-1 convolution over axis 1 with zero same-padding.

    weight is (window * in_dim, out_channels): the flattened window, oldest
    position first.
    """
    length = x.shape[1]
    pad = window // 2
    padded = pad_axis(x, 1, pad, pad) if pad else x
    if window == 1:
        cols = x
    else:
        cols = concat([slice_axis(padded, 1, off, off + length) for off in range(window)], axis=-1)
    return add(matmul(cols, weight), bias)


class SentenceEncoder:
    """Common parameter bookkeeping for the concrete encoders."""

    variant = ""

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                named[name] = value
            elif isinstance(value, SelfAttentionPool):
                for sub_name, t in value.parameters().items():
                    named[f"{name}.{sub_name}"] = t
        return named

    def clone(self):
        new = copy.copy(self)
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                setattr(new, name, Tensor(value.data.copy(), requires_grad=value.requires_grad))
            elif isinstance(value, SelfAttentionPool):
                setattr(new, name, value.clone())
        return new

    def encode(self, x: Tensor, mask: np.ndarray) -> Tensor:
        raise NotImplementedError

    def _check_input(self, x: Tensor, in_dim: int) -> None:
        if x.ndim != 3 or x.shape[-1] != in_dim:
            raise ShapeMismatchError(f"{self.variant} encoder expects (B, L, {in_dim}), got {x.shape}")


class SelfAttentionPool:
    """Bilinear tanh self-attention pooling: sums the attention-mixed rows.

    scores = tanh(g(H)) tanh(g(H))^T, softmax over unmasked keys, A = a^T H,
    output = sum of A's rows.  Callers must zero masked rows of H first.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.weight = kaiming_uniform(rng, (dim, dim), fan_in=dim)
        self.bias = zeros((dim,))

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def clone(self) -> "SelfAttentionPool":
        new = copy.copy(self)
        new.weight = Tensor(self.weight.data.copy(), requires_grad=True)
        new.bias = Tensor(self.bias.data.copy(), requires_grad=True)
        return new

    def __call__(self, h: Tensor, mask: np.ndarray) -> Tensor:
        g = tanh(add(matmul(h, self.weight), self.bias))
        scores = matmul(g, transpose(g, (0, 2, 1)))
        attn = softmax(scores, axis=-1, mask=mask[:, None, :])
        mixed = matmul(transpose(attn, (0, 2, 1)), h)
        return reduce_sum(mixed, axis=1)


class CnnEncoder(SentenceEncoder):
    variant = "cnn"

    def __init__(self, rng: np.random.Generator, in_dim: int = 60, out_dim: int = 230, window: int = 3):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.window = window
        self.weight = kaiming_uniform(rng, (window * in_dim, out_dim), fan_in=window * in_dim)
        self.bias = zeros((out_dim,))

    def encode(self, x: Tensor, mask: np.ndarray) -> Tensor:
        self._check_input(x, self.in_dim)
        mask = _check_mask(mask)
        h = relu(_conv1d_same(x, self.weight, self.bias, self.window))
        return masked_max(h, mask[:, :, None], axis=1)


class InceptionEncoder(SentenceEncoder):
    """Parallel convolutions with windows 1/3/5/7 plus a stacked 3+3 branch.

    The stacked branch realizes the 9-token receptive field; branch outputs
    concatenate to out_dim, so out_dim must be divisible by 5.
    """

    variant = "inception"
    windows = (1, 3, 5, 7)

    def __init__(self, rng: np.random.Generator, in_dim: int = 60, out_dim: int = 230):
        if out_dim % 5:
            raise ValidationError(f"inception out_dim {out_dim} not divisible by 5 branches")
        self.in_dim = in_dim
        self.out_dim = out_dim
        branch = out_dim // 5
        for w in self.windows:
            setattr(self, f"w{w}_weight", kaiming_uniform(rng, (w * in_dim, branch), fan_in=w * in_dim))
            setattr(self, f"w{w}_bias", zeros((branch,)))
        self.stacked_inner_weight = kaiming_uniform(rng, (3 * in_dim, branch), fan_in=3 * in_dim)
        self.stacked_inner_bias = zeros((branch,))
        self.stacked_outer_weight = kaiming_uniform(rng, (3 * branch, branch), fan_in=3 * branch)
        self.stacked_outer_bias = zeros((branch,))

    def encode(self, x: Tensor, mask: np.ndarray) -> Tensor:
        self._check_input(x, self.in_dim)
        mask = _check_mask(mask)
        branches = [
            relu(_conv1d_same(x, getattr(self, f"w{w}_weight"), getattr(self, f"w{w}_bias"), w))
            for w in self.windows
        ]
        inner = relu(_conv1d_same(x, self.stacked_inner_weight, self.stacked_inner_bias, 3))
        branches.append(relu(_conv1d_same(inner, self.stacked_outer_weight, self.stacked_outer_bias, 3)))
        h = concat(branches, axis=-1)
        return masked_max(h, mask[:, :, None], axis=1)


class GruEncoder(SentenceEncoder):
    """Bidirectional GRU (out_dim/2 units per direction) with attention pooling."""

    variant = "gru"

    def __init__(self, rng: np.random.Generator, in_dim: int = 60, out_dim: int = 230):
        if out_dim % 2:
            raise ValidationError(f"bi-GRU out_dim {out_dim} must be even")
        self.in_dim = in_dim
        self.out_dim = out_dim
        hidden = out_dim // 2
        self.hidden = hidden
        # Gate columns are ordered (reset, update, candidate).
        for direction in ("fwd", "bwd"):
            setattr(self, f"{direction}_w", kaiming_uniform(rng, (in_dim, 3 * hidden), fan_in=in_dim))
            setattr(self, f"{direction}_u", kaiming_uniform(rng, (hidden, 3 * hidden), fan_in=hidden))
            setattr(self, f"{direction}_bias", zeros((3 * hidden,)))
        self.pool = SelfAttentionPool(out_dim, rng)

    def _run_direction(self, x: Tensor, mask: np.ndarray, direction: str) -> Tensor:
        w = getattr(self, f"{direction}_w")
        u = getattr(self, f"{direction}_u")
        bias = getattr(self, f"{direction}_bias")
        batch, length, _ = x.shape
        h = Tensor(np.zeros((batch, self.hidden)))
        hid = self.hidden
        xproj = add(matmul(x, w), bias)
        states = []
        for t in range(length):
            xt = reshape(slice_axis(xproj, 1, t, t + 1), (batch, 3 * hid))
            hu = matmul(h, u)
            r = sigmoid(add(slice_axis(xt, 1, 0, hid), slice_axis(hu, 1, 0, hid)))
            z = sigmoid(add(slice_axis(xt, 1, hid, 2 * hid), slice_axis(hu, 1, hid, 2 * hid)))
            n = tanh(add(slice_axis(xt, 1, 2 * hid, 3 * hid), mul(r, slice_axis(hu, 1, 2 * hid, 3 * hid))))
            candidate = add(mul(sub(1.0, z), n), mul(z, h))
            m = mask[:, t : t + 1].astype(np.float64)
            h = add(mul(Tensor(m), candidate), mul(Tensor(1.0 - m), h))
            states.append(h)
        return stack(states, axis=1)

    def encode(self, x: Tensor, mask: np.ndarray) -> Tensor:
        self._check_input(x, self.in_dim)
        mask = _check_mask(mask)
        forward = self._run_direction(x, mask, "fwd")
        # The reversed pass sees trailing PAD first; masked updates keep its
        # state at zero until real tokens begin.
        backward = flip(self._run_direction(flip(x, 1), np.flip(mask, 1), "bwd"), 1)
        h = concat([forward, backward], axis=-1)
        h = mul(h, Tensor(mask[:, :, None].astype(np.float64)))
        return self.pool(h, mask)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Classic interleaved sin/cos position table of shape (length, dim)."""
    positions = np.arange(length)[:, None]
    freqs = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs)
    return table


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(square(centered), axis=-1, keepdims=True)
    normed = mul(centered, div_rsqrt(var))
    return add(mul(normed, gain), bias)


def div_rsqrt(var: Tensor) -> Tensor:
    return 1.0 / sqrt(add(var, _LN_EPS))


class TransformerEncoder(SentenceEncoder):
    """Single post-norm Transformer block with attention pooling and projection.

    Multi-head self-attention over unmasked keys, a ReLU feed-forward layer,
    residual + layer norm around both, sinusoidal position signals at the
    input, then the same attention pooling as the GRU encoder and a linear
    map from model_dim to out_dim.
    """

    variant = "transformer"

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int = 60,
        out_dim: int = 230,
        heads: int = 4,
        ff_dim: int = 240,
    ):
        if in_dim % heads:
            raise ValidationError(f"model dim {in_dim} not divisible by {heads} heads")
        if in_dim % 2:
            raise ValidationError("model dim must be even for sinusoidal positions")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.heads = heads
        self.head_dim = in_dim // heads
        self.ff_dim = ff_dim
        d = in_dim
        for name in ("q", "k", "v", "o"):
            setattr(self, f"{name}_weight", kaiming_uniform(rng, (d, d), fan_in=d))
            setattr(self, f"{name}_bias", zeros((d,)))
        self.ln1_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln1_bias = zeros((d,))
        self.ff1_weight = kaiming_uniform(rng, (d, ff_dim), fan_in=d)
        self.ff1_bias = zeros((ff_dim,))
        self.ff2_weight = kaiming_uniform(rng, (ff_dim, d), fan_in=ff_dim)
        self.ff2_bias = zeros((d,))
        self.ln2_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln2_bias = zeros((d,))
        self.pool = SelfAttentionPool(d, rng)
        self.out_weight = kaiming_uniform(rng, (d, out_dim), fan_in=d)
        self.out_bias = zeros((out_dim,))
        self._pos_cache: np.ndarray = sinusoidal_positions(0, d)

    def _positions(self, length: int) -> np.ndarray:
        if self._pos_cache.shape[0] < length:
            self._pos_cache = sinusoidal_positions(length, self.in_dim)
        return self._pos_cache[:length]

    def _split_heads(self, t: Tensor, batch: int, length: int) -> Tensor:
        return transpose(reshape(t, (batch, length, self.heads, self.head_dim)), (0, 2, 1, 3))

    def attention(self, x: Tensor, mask: np.ndarray, collect: dict | None = None) -> Tensor:
        batch, length, _ = x.shape
        q = self._split_heads(add(matmul(x, self.q_weight), self.q_bias), batch, length)
        k = self._split_heads(add(matmul(x, self.k_weight), self.k_bias), batch, length)
        v = self._split_heads(add(matmul(x, self.v_weight), self.v_bias), batch, length)
        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1, mask=mask[:, None, None, :])
        if collect is not None:
            collect["attention"] = attn.data
        ctx = transpose(matmul(attn, v), (0, 2, 1, 3))
        ctx = reshape(ctx, (batch, length, self.in_dim))
        return add(matmul(ctx, self.o_weight), self.o_bias)

    def encode(self, x: Tensor, mask: np.ndarray, collect: dict | None = None) -> Tensor:
        self._check_input(x, self.in_dim)
        mask = _check_mask(mask)
        x = add(x, Tensor(self._positions(x.shape[1])))
        x = layer_norm(add(x, self.attention(x, mask, collect)), self.ln1_gain, self.ln1_bias)
        ff = add(matmul(relu(add(matmul(x, self.ff1_weight), self.ff1_bias)), self.ff2_weight), self.ff2_bias)
        x = layer_norm(add(x, ff), self.ln2_gain, self.ln2_bias)
        if collect is not None:
            collect["hidden"] = x.data
        h = mul(x, Tensor(mask[:, :, None].astype(np.float64)))
        pooled = self.pool(h, mask)
        return add(matmul(pooled, self.out_weight), self.out_bias)


def build_encoder(variant: str, rng: np.random.Generator, in_dim: int = 60, out_dim: int = 230, **kwargs) -> SentenceEncoder:
    if variant == "cnn":
        return CnnEncoder(rng, in_dim, out_dim, **kwargs)
    if variant == "inception":
        return InceptionEncoder(rng, in_dim, out_dim)
    if variant == "gru":
        return GruEncoder(rng, in_dim, out_dim)
    if variant == "transformer":
        return TransformerEncoder(rng, in_dim, out_dim, **kwargs)
    raise ValidationError(f"unknown encoder variant {variant!r}")


def _lift(encoded: EncodedInput) -> tuple[Tensor, np.ndarray]:
    matrix = reshape(encoded.matrix, (1,) + encoded.matrix.shape)
    return matrix, encoded.mask[None, :]


def encode_cnn(encoded: EncodedInput, params: CnnEncoder) -> Tensor:
    matrix, mask = _lift(encoded)
    return reshape(params.encode(matrix, mask), (params.out_dim,))


def encode_inception(encoded: EncodedInput, params: InceptionEncoder) -> Tensor:
    matrix, mask = _lift(encoded)
    return reshape(params.encode(matrix, mask), (params.out_dim,))


def encode_gru(encoded: EncodedInput, params: GruEncoder) -> Tensor:
    matrix, mask = _lift(encoded)
    return reshape(params.encode(matrix, mask), (params.out_dim,))


def encode_transformer(encoded: EncodedInput, params: TransformerEncoder) -> Tensor:
    matrix, mask = _lift(encoded)
    return reshape(params.encode(matrix, mask), (params.out_dim,))
