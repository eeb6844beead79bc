"""The embedding model: one vector per character n-gram, a bias, a nonlinearity.

A sequence embedding is the count-weighted sum of the n-gram vectors for the
n-grams present in the sequence, plus a bias, passed through an elementwise
activation. Parameters are kept in float64 in memory; file persistence
quantizes to float32 (see charngram.io).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .vocab import CountVector, NGramVocab

ACTIVATIONS = ("linear", "tanh", "relu")

# Norms below this are treated as zero when computing cosine similarity.
COSINE_NORM_FLOOR = 1e-12


def check_activation(activation: str) -> str:
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    return activation


def apply_activation(activation: str, pre: np.ndarray) -> np.ndarray:
    if activation == "linear":
        return pre.copy()
    if activation == "tanh":
        return np.tanh(pre)
    if activation == "relu":
        return np.maximum(pre, 0.0)
    raise ValueError(f"unknown activation {activation!r}")


def activation_grad(activation: str, values: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the activation, computed from its output.

    tanh' = 1 - tanh^2; relu' is 1 where the output is positive and 0 at or
    below the kink (the subgradient 0 is chosen at exactly 0).
    """
    if activation == "linear":
        return np.ones_like(values)
    if activation == "tanh":
        return 1.0 - values * values
    if activation == "relu":
        return (values > 0.0).astype(values.dtype)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class Model:
    """Learned parameters: weights has one row per vocabulary n-gram."""

    weights: np.ndarray  # (|V|, d) float64
    bias: np.ndarray  # (d,) float64
    activation: str
    vocab_fingerprint: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.weights.shape[1] != self.bias.shape[0]:
            raise ValueError("weights and bias dimensionality disagree")
        check_activation(self.activation)

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]


def verify_binding(model: Model, vocab: NGramVocab) -> None:
    """Raise unless `model` was built against exactly this vocabulary."""
    if model.vocab_fingerprint != vocab.fingerprint:
        raise DataError("model not bound to vocabulary (fingerprint mismatch)")
    if model.vocab_size != len(vocab):
        raise DataError("vocab/model mismatch")


@dataclass
class Embedding:
    """An embedded sequence plus bookkeeping about vocabulary coverage."""

    values: np.ndarray  # (d,)
    used_ngrams: int  # total in-vocabulary n-gram tokens consumed
    oov_fallback: bool  # True when no n-gram matched; values = h(bias)


def preactivation(cv: CountVector, model: Model) -> np.ndarray:
    """bias + sum over cv of count * weights[row], before the nonlinearity."""
    pre = model.bias.copy()
    if cv:
        rows = np.fromiter(cv.keys(), dtype=np.intp, count=len(cv))
        if rows.min() < 0 or rows.max() >= model.vocab_size:
            raise DataError("vocab/model mismatch")
        counts = np.fromiter(cv.values(), dtype=np.float64, count=len(cv))
        pre += counts @ model.weights[rows]
    return pre


def embed(cv: CountVector, model: Model) -> Embedding:
    """Embed a sparse count vector; an empty one falls back to h(bias)."""
    values = apply_activation(model.activation, preactivation(cv, model))
    used = int(sum(cv.values()))
    return Embedding(values=values, used_ngrams=used, oov_fallback=not cv)


def cosine(u, v) -> float:
    """Cosine similarity; returns 0.0 when either vector has (near-)zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError("cosine requires two vectors of equal dimension")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < COSINE_NORM_FLOOR or nv < COSINE_NORM_FLOOR:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def embed_gradient(
    cv: CountVector, model: Model, upstream: np.ndarray
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Backpropagate `upstream` (d loss / d embedding) through the model.

    Returns (d loss / d bias, {row: d loss / d weights[row]}) touching exactly
    the rows present in `cv`. The pre-activation is recomputed here; the
    training loop uses its own cached version of the same arithmetic.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (model.dim,):
        raise DataError("upstream gradient has wrong dimension")
    values = apply_activation(model.activation, preactivation(cv, model))
    d_pre = upstream * activation_grad(model.activation, values)
    d_rows = {row: count * d_pre for row, count in cv.items()}
    return d_pre, d_rows
