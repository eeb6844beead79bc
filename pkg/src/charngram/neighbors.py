"""Brute-force nearest-neighbor search over a word list and over n-gram rows.

A working vocabulary precomputes embeddings for a list of words; queries are
then ranked against it by cosine. The n-gram variant compares raw weight rows
directly. Linear scans only: at the scales this tool targets (~100k words,
a few hundred dimensions) a scan takes well under a second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import COSINE_NORM_FLOOR, Model, embed
from .vocab import NGramVocab, check_case_mode, encode, normalize


@dataclass
class WorkingVocab:
    """Unique normalized words with embeddings computed under one model+vocab."""

    words: list[str]  # normalized, without the boundary padding
    embeddings: np.ndarray  # (len(words), d)
    case_mode: str = "lower"


def _guarded_cosines(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine of `query` against every row; zero-norm vectors score 0."""
    qn = np.linalg.norm(query)
    if qn < COSINE_NORM_FLOOR:
        return np.zeros(matrix.shape[0])
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms < COSINE_NORM_FLOOR, 1.0, norms)
    out = (matrix @ query) / (safe * qn)
    out[norms < COSINE_NORM_FLOOR] = 0.0
    return out


def build_working_vocab(
    words: list[str], model: Model, vocab: NGramVocab, case_mode: str = "lower"
) -> WorkingVocab:
    """Normalize, deduplicate, and embed a word list."""
    case_mode = check_case_mode(case_mode)
    if not words:
        raise DataError("empty word list")
    seen = set()
    kept: list[str] = []
    rows: list[np.ndarray] = []
    for word in words:
        padded = normalize(word, case_mode)
        inner = padded[1:-1]
        if inner in seen:
            continue
        seen.add(inner)
        kept.append(inner)
        rows.append(embed(encode(padded, vocab), model).values)
    return WorkingVocab(words=kept, embeddings=np.stack(rows), case_mode=case_mode)


def _rank(words: list[str], cosines: np.ndarray, exclude: set[str], k: int):
    order = sorted(
        (i for i in range(len(words)) if words[i] not in exclude),
        key=lambda i: (-cosines[i], words[i]),
    )
    return [(words[i], float(cosines[i])) for i in order[:k]]


def nearest_neighbors(
    query: str, wv: WorkingVocab, model: Model, vocab: NGramVocab, k: int
) -> list[tuple[str, float]]:
    """Top-k working-vocabulary words by cosine to the embedded query.

    Entries string-equal to the normalized query are excluded; near-duplicates
    (inflections, misspellings) are legitimate neighbors and retained. Ties
    break by word lexicographic order. Shorter-than-k results are returned
    as-is.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    padded = normalize(query, wv.case_mode)
    q = embed(encode(padded, vocab), model).values
    cosines = _guarded_cosines(wv.embeddings, q)
    return _rank(wv.words, cosines, {padded[1:-1]}, k)


def ngram_neighbors(
    query_ngram: str, model: Model, vocab: NGramVocab, k: int
) -> list[tuple[str, float]]:
    """Top-k vocabulary n-grams whose weight rows are cosine-closest to the query's row."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = vocab.index.get(query_ngram)
    if pos is None:
        raise DataError("n-gram not in model")
    cosines = _guarded_cosines(model.weights, model.weights[pos])
    ngrams = [entry[0] for entry in vocab.entries]
    return _rank(ngrams, cosines, {query_ngram}, k)
