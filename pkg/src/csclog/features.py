"""Semantic and temporal features for sequences and subsequences.

Template text is reduced to lowercase alphabetic keywords (wildcards,
symbol/numeric tokens, and prepositions dropped). Each keyword maps to a
stable word vector; a template's semantic vector is the TF-IDF-weighted
average of its keyword vectors divided by the keyword count. Temporal
features are offsets from the first message of whatever (sub)sequence is
being featurized.

Word vectors come from a pluggable provider: a seeded-hash Gaussian unit
vector per word by default, or a precomputed word->vector table loaded
from file (hash fallback for out-of-vocabulary words).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import DataError
from .parser import WILDCARD, LogTemplate, ParsedMessage, TemplateStore

DEFAULT_DIMENSIONALITY = 768


def _load_prepositions() -> frozenset[str]:
    text = resources.files("csclog").joinpath("data/prepositions.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


PREPOSITIONS = _load_prepositions()


def extract_keywords(template_text: str) -> list[str]:
    """Lowercased alphabetic tokens, minus wildcards and prepositions."""
    out = []
    for token in template_text.split():
        if token == WILDCARD or not token.isalpha():
            continue
        word = token.lower()
        if word in PREPOSITIONS:
            continue
        out.append(word)
    return out


class EmbeddingProvider:
    """Stable word -> vector mapping.

    The hash variant seeds a PCG64 stream from the word's digest and draws
    a unit-norm Gaussian vector, so the same word always maps to the same
    vector, across processes and platforms.
    """

    def __init__(self, dimensionality: int = DEFAULT_DIMENSIONALITY, table: dict[str, np.ndarray] | None = None):
        if dimensionality < 1:
            raise ValueError(f"dimensionality must be >= 1, got {dimensionality}")
        self.dimensionality = dimensionality
        self._table = table or {}
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_file(cls, path, dimensionality: int = DEFAULT_DIMENSIONALITY) -> "EmbeddingProvider":
        """Load "word<TAB>v1,...,vD" lines; unknown words fall back to hashing."""
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                word, _, values = line.partition("\t")
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
                if vec.shape != (dimensionality,):
                    raise DataError(
                        f"{path}:{lineno}: vector for {word!r} has length {vec.size}, expected {dimensionality}"
                    )
                table[word] = vec
        return cls(dimensionality=dimensionality, table=table)

    def vector(self, word: str) -> np.ndarray:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        vec = self._table.get(word)
        if vec is None:
            digest = hashlib.sha256(word.encode("utf-8")).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            vec = rng.standard_normal(self.dimensionality)
            vec /= np.linalg.norm(vec)
        self._cache[word] = vec
        return vec


@dataclass
class TfidfTable:
    """Document frequencies over a corpus of keyword lists (one per template).

    tf(w, doc) = count(w in doc) / len(doc)
    idf(w) = ln((1 + N) / (1 + df(w))) + 1
    """

    document_frequency: dict[str, int] = field(default_factory=dict)
    num_documents: int = 0

    @classmethod
    def build(cls, documents: Sequence[Sequence[str]]) -> "TfidfTable":
        df: dict[str, int] = {}
        for doc in documents:
            for word in set(doc):
                df[word] = df.get(word, 0) + 1
        return cls(document_frequency=df, num_documents=len(documents))

    @classmethod
    def from_store(cls, store: TemplateStore) -> "TfidfTable":
        return cls.build([extract_keywords(t.text) for t in store.templates])

    def idf(self, word: str) -> float:
        df = self.document_frequency.get(word, 0)
        return math.log((1 + self.num_documents) / (1 + df)) + 1.0

    def weight(self, word: str, document: Sequence[str]) -> float:
        tf = document.count(word) / len(document)
        return tf * self.idf(word)


def semantic_vector(template: LogTemplate, tfidf: TfidfTable, emb: EmbeddingProvider) -> np.ndarray:
    """Weighted keyword-vector average: (1/N) * sum_i w_i v_i.

    An empty keyword list yields the zero vector, the neutral input for the
    embedding layers downstream.
    """
    keywords = extract_keywords(template.text)
    if not keywords:
        return np.zeros(emb.dimensionality)
    acc = np.zeros(emb.dimensionality)
    for word in keywords:
        acc += tfidf.weight(word, keywords) * emb.vector(word)
    return acc / len(keywords)


def temporal_features(timestamps: Sequence[int]) -> np.ndarray:
    """Offsets from the first timestamp, as an (N, 1) column."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.size == 0:
        return np.zeros((0, 1))
    return (ts - ts[0]).reshape(-1, 1)


@dataclass
class FeatureBundle:
    semantic: np.ndarray  # (N, emb_dim)
    temporal: np.ndarray  # (N, 1)

    def __post_init__(self):
        if self.semantic.shape[0] != self.temporal.shape[0]:
            raise ValueError(
                f"row mismatch: semantic {self.semantic.shape[0]} vs temporal {self.temporal.shape[0]}"
            )

    @property
    def length(self) -> int:
        return self.semantic.shape[0]


class SemanticIndex:
    """Per-template semantic vectors, computed once and reused.

    Reserved ids (UNSEEN, PAD) and any id outside the store map to the zero
    vector; downstream flags those separately.
    """

    def __init__(self, store: TemplateStore, tfidf: TfidfTable, emb: EmbeddingProvider):
        self.dimensionality = emb.dimensionality
        self._table = np.zeros((store.num_templates, emb.dimensionality))
        for t in store.templates:
            self._table[t.id] = semantic_vector(t, tfidf, emb)
        self._zero = np.zeros(emb.dimensionality)

    @classmethod
    def build(cls, store: TemplateStore, emb: EmbeddingProvider | None = None) -> "SemanticIndex":
        emb = emb or EmbeddingProvider()
        return cls(store, TfidfTable.from_store(store), emb)

    def vector(self, template_id: int) -> np.ndarray:
        if 0 <= template_id < self._table.shape[0]:
            return self._table[template_id]
        return self._zero

    def matrix(self, template_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(template_ids, dtype=np.int64)
        out = np.zeros((ids.size, self.dimensionality))
        valid = (ids >= 0) & (ids < self._table.shape[0])
        if valid.any():
            out[valid] = self._table[ids[valid]]
        return out


def build_bundle(
    messages: Sequence[ParsedMessage],
    store: TemplateStore,
    tfidf: TfidfTable,
    emb: EmbeddingProvider,
    *,
    index: SemanticIndex | None = None,
) -> FeatureBundle:
    """Featurize an ordered message list (a window, sequence, or subsequence).

    The temporal origin is the list's own first message. Reserved template
    ids (UNSEEN, PAD) get zero semantic rows.
    """
    if index is None:
        index = SemanticIndex(store, tfidf, emb)
    return FeatureBundle(
        semantic=index.matrix([m.template_id for m in messages]),
        temporal=temporal_features([m.timestamp for m in messages]),
    )
