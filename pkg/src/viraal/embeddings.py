"""Pretrained word-vector loading and per-dimension normalization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary

EMBEDDING_DIM = 300
OOV_STD = 0.1


class EmbeddingFormatError(ValueError):
    """A vector file row does not hold `word` + the expected float count."""


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray  # (n_words, dim) float32
    normalized: bool

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def normalize_rows(vectors: np.ndarray, pad_id: int = 0) -> np.ndarray:
    """Standardize each dimension to zero mean / unit variance over non-PAD rows.

    The PAD row is left all-zero so padded positions keep a zero embedding.
    """
    out = vectors.astype(np.float64).copy()
    keep = np.ones(len(out), dtype=bool)
    keep[pad_id] = False
    rows = out[keep]
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0] = 1.0
    out[keep] = (rows - mean) / std
    out[pad_id] = 0.0
    return out.astype(vectors.dtype)


def random_matrix(
    vocab: Vocabulary, dim: int = EMBEDDING_DIM, seed: int = 0, normalize: bool = False
) -> EmbeddingMatrix:
    """Gaussian-initialized matrix for runs without pretrained vectors."""
    rng = np.random.default_rng(seed)
    vectors = rng.normal(0.0, OOV_STD, size=(vocab.n_words, dim)).astype(np.float32)
    vectors[vocab.pad_id] = 0.0
    if normalize:
        vectors = normalize_rows(vectors, pad_id=vocab.pad_id)
    return EmbeddingMatrix(vectors=vectors, normalized=normalize)


def load_pretrained(
    path: str | Path,
    vocab: Vocabulary,
    normalize: bool = False,
    dim: int = EMBEDDING_DIM,
    seed: int = 0,
) -> EmbeddingMatrix:
    """Load `word v1 ... vN` rows into a vocabulary-aligned matrix.

    In-vocabulary words take the file vector; everything else (including the
    UNK row) draws from N(0, 0.1^2) under `seed`; the PAD row stays all-zero.
    """
    rng = np.random.default_rng(seed)
    vectors = rng.normal(0.0, OOV_STD, size=(vocab.n_words, dim)).astype(np.float32)
    vectors[vocab.pad_id] = 0.0

    wanted = vocab.word_index
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path} line {lineno}: expected {dim} values, got {len(values)}"
                )
            idx = wanted.get(word)
            if idx is not None and idx != vocab.pad_id:
                vectors[idx] = np.asarray(values, dtype=np.float32)

    if normalize:
        vectors = normalize_rows(vectors, pad_id=vocab.pad_id)
    return EmbeddingMatrix(vectors=vectors, normalized=normalize)
