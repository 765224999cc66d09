"""Provider interfaces for text/image embedding, cross scoring, and attribute
entailment, with deterministic lexical reference implementations.

Neural encoders stay out of process: the engine consumes either these
references or precomputed vectors / score tables produced externally.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingStore
from .textnorm import hypothesis_value, normalize_token, tokenize


class EncoderError(ValueError):
    """Malformed score-table files or invalid encoder parameters."""


class TextEmbedder:
    """Text -> unit-norm vector of fixed dim. Implementations must be deterministic."""

    dim: int

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class ImageEmbedder:
    """Embedding-store key -> unit-norm vector, or None when the key is absent."""

    def lookup(self, image_id: str) -> np.ndarray | None:
        raise NotImplementedError


class CrossScorer:
    """(left, right) -> scalar. ``keyed_by_id`` scorers expect ids, not texts."""

    keyed_by_id = False

    def score(self, left: str, right: str) -> float:
        raise NotImplementedError


class PairEntailmentScorer:
    """(mention, review text, hypothesis sentence) -> score in [0, 1]."""

    def score(self, mention: str, review_text: str, hypothesis: str) -> float:
        raise NotImplementedError


def hash_embed(text: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of normalized unigrams and bigrams, L2-normalized.

    ``dim`` must be a power of two >= 64. An empty token histogram maps to the
    first basis vector so the output is always unit-norm.
    """
    if dim < 64 or dim & (dim - 1):
        raise EncoderError(f"hash_embed dim must be a power of two >= 64, got {dim}")
    tokens = [normalize_token(t) for t in tokenize(text)]
    features = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    histogram = np.zeros(dim, dtype=np.float64)
    prefix = f"{seed}\x1f".encode("utf-8")
    for feature in features:
        digest = hashlib.blake2b(prefix + feature.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        sign = 1.0 if (value >> 63) & 1 == 0 else -1.0
        histogram[value & (dim - 1)] += sign
    norm = np.linalg.norm(histogram)
    if norm == 0.0:
        histogram[0] = 1.0
        return histogram.astype(np.float32)
    return (histogram / norm).astype(np.float32)


class HashTextEmbedder(TextEmbedder):
    """Reference TextEmbedder backed by ``hash_embed``, with a small result cache."""

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 64 or dim & (dim - 1):
            raise EncoderError(f"embedder dim must be a power of two >= 64, got {dim}")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is None:
            cached = hash_embed(text, self.dim, self.seed)
            self._cache[text] = cached
        return cached


class StoreImageEmbedder(ImageEmbedder):
    """Lookup of precomputed image features from an embedding store."""

    def __init__(self, store: EmbeddingStore):
        self.store = store

    def lookup(self, image_id: str) -> np.ndarray | None:
        return self.store.get(image_id)


def lexical_cross_score(mention_text: str, entity_text: str) -> float:
    """Normalized-token containment: |mention tokens in entity| / |mention tokens|."""
    mention_tokens = {normalize_token(t) for t in tokenize(mention_text)}
    entity_tokens = {normalize_token(t) for t in tokenize(entity_text)}
    return len(mention_tokens & entity_tokens) / max(1, len(mention_tokens))


class LexicalCrossScorer(CrossScorer):
    """Reference cross scorer: token containment of the mention in the entity text."""

    def score(self, left: str, right: str) -> float:
        return lexical_cross_score(left, right)


def attribute_hypothesis(mention_surface: str, attribute_key: str, value: str) -> str:
    """Entailment hypothesis sentence for one attribute value of a mentioned product."""
    if not mention_surface.strip() or not attribute_key.strip() or not value.strip():
        raise EncoderError("attribute_hypothesis requires non-empty mention, key, and value")
    return f"the {attribute_key} of this {mention_surface} is {value}".lower()


def lexical_entailment(mention: str, review_text: str, hypothesis: str) -> float:
    """Fraction of the hypothesis value tokens present in the review token set.

    For hypotheses produced by ``attribute_hypothesis`` the value segment is
    scored; free-text hypotheses (entity descriptions) are scored whole.
    """
    value = hypothesis_value(hypothesis)
    target = value if value is not None else hypothesis
    value_tokens = {normalize_token(t) for t in tokenize(target)}
    if not value_tokens:
        return 0.0
    review_tokens = {normalize_token(t) for t in tokenize(review_text)}
    return len(value_tokens & review_tokens) / len(value_tokens)


class LexicalEntailmentScorer(PairEntailmentScorer):
    """Reference entailment scorer backed by ``lexical_entailment``."""

    def score(self, mention: str, review_text: str, hypothesis: str) -> float:
        return lexical_entailment(mention, review_text, hypothesis)


@dataclass
class ScoreTable(CrossScorer):
    """Precomputed pair scores; missing pairs fall back to ``default``.

    Used as a cross scorer the keys are (review_id, entity_id), which is why
    ``keyed_by_id`` is set.
    """

    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    default: float = 0.0
    keyed_by_id = True

    def score(self, left: str, right: str) -> float:
        return self.scores.get((left, right), self.default)

    def __len__(self) -> int:
        return len(self.scores)


class TableEntailmentScorer(PairEntailmentScorer):
    """Entailment scores from a table keyed (review text, hypothesis sentence)."""

    def __init__(self, table: ScoreTable):
        self.table = table

    def score(self, mention: str, review_text: str, hypothesis: str) -> float:
        return self.table.score(review_text, hypothesis)


def load_scored_pairs(path, default: float = 0.0) -> ScoreTable:
    """Read line-delimited {"left_key","right_key","score"} records into a ScoreTable."""
    scores: dict[tuple[str, str], float] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key = (str(record["left_key"]), str(record["right_key"]))
                value = float(record["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EncoderError(f"{path}:{lineno}: malformed score record ({exc})") from exc
            if not np.isfinite(value):
                raise EncoderError(f"{path}:{lineno}: non-finite score")
            scores[key] = value
    return ScoreTable(scores=scores, default=default)


def write_scored_pairs(table: ScoreTable, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for (left, right), value in sorted(table.scores.items()):
            handle.write(json.dumps({"left_key": left, "right_key": right, "score": value}, ensure_ascii=False))
            handle.write("\n")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in float64; zero-norm inputs score 0."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    denom = float(np.linalg.norm(av) * np.linalg.norm(bv))
    if denom == 0.0:
        return 0.0
    return float(np.dot(av, bv) / denom)
