"""Hashing tokenizer and single-block self-attention text encoder.

One head, no positional encoding, no feed-forward sublayer; the encoding is
therefore permutation-invariant over tokens, which the tests exploit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyTagList, EmptyText, NonFiniteInput

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a_64(data: str) -> int:
    h = _FNV_OFFSET
    for byte in data.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


class SourceKind(str, Enum):
    AD = "Ad"
    USER = "User"


@dataclass(frozen=True)
class TokenSeq:
    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class EncoderParams:
    token_table: np.ndarray  # vocab_size x d_s
    w_query: np.ndarray      # d_s x d_s
    w_key: np.ndarray        # d_s x d_s
    w_value: np.ndarray      # d_s x d_s

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]

    @property
    def dim(self) -> int:
        return self.token_table.shape[1]


@dataclass(frozen=True)
class SemanticEmbedding:
    vector: np.ndarray
    source_kind: SourceKind


def init_encoder(vocab_size: int, dim: int, seed: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    return EncoderParams(
        token_table=rng.normal(0.0, scale, size=(vocab_size, dim)),
        w_query=rng.normal(0.0, scale, size=(dim, dim)),
        w_key=rng.normal(0.0, scale, size=(dim, dim)),
        w_value=rng.normal(0.0, scale, size=(dim, dim)),
    )


def normalize_text(text: str) -> list[str]:
    out: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            out.append("".join(current))
            current = []
    if current:
        out.append("".join(current))
    return out


def tokenize(text: str, vocab_size: int) -> TokenSeq:
    """Lowercase, split on non-alphanumeric runs, hash each token mod vocab."""
    words = normalize_text(text)
    if not words:
        raise EmptyText(repr(text))
    return TokenSeq(tuple(fnv1a_64(w) % vocab_size for w in words))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(x: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Row-softmax of QK^T / sqrt(d_s); rows are probability distributions."""
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("attention input contains NaN/Inf")
    q = x @ params.w_query
    k = x @ params.w_key
    return softmax_rows(q @ k.T / np.sqrt(params.dim))


def self_attention(x: np.ndarray, params: EncoderParams) -> np.ndarray:
    a = attention_weights(x, params)
    v = x @ params.w_value
    return a @ v


def encode(tokens: TokenSeq, params: EncoderParams,
           source_kind: SourceKind = SourceKind.AD) -> SemanticEmbedding:
    """Embed tokens, apply self-attention, mean-pool the output rows."""
    x = params.token_table[list(tokens.token_ids)]
    z = self_attention(x, params)
    return SemanticEmbedding(z.mean(axis=0), source_kind)


def encode_user(interest_tags: list[str], params: EncoderParams) -> SemanticEmbedding:
    """Sort tags, join into one sequence, encode. Order-insensitive by design."""
    if not interest_tags:
        raise EmptyTagList("user has no interest tags")
    text = " ".join(sorted(interest_tags))
    tokens = tokenize(text, params.vocab_size)
    emb = encode(tokens, params, SourceKind.USER)
    return emb
