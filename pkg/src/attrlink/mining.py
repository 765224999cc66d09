"""Dataset-construction procedures: mention detection in reviews, four-feature
informativeness filtering, and dual-channel hard-negative mining.

All operations are pure over immutable inputs and deterministic given a
deterministic embedder, so they can be parallelized across reviews.
"""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import EmbeddingStore, Entity, KnowledgeBase, MentionSpan, Review
from .encoders import TextEmbedder, cosine
from .textnorm import (
    content_tokens,
    default_stopwords,
    normalize_token,
    noun_chunks,
    phrase_sequence_contains,
    tokenize,
    tokenize_with_spans,
)

MAX_MENTION_NGRAM = 6
MISSING_IMAGE_SIMILARITY = -1.0


class MiningError(ValueError):
    """A review references a gold entity that is absent from the knowledge base."""


def product_name_candidates(product: Entity, stopwords: frozenset[str] | None = None) -> set[str]:
    """Normalized phrases a review could use to name the product (title and category chunks)."""
    if stopwords is None:
        stopwords = default_stopwords()
    candidates = set(noun_chunks(product.title, stopwords))
    for category in product.categories:
        candidates.update(noun_chunks(category, stopwords))
    return candidates


def detect_mention(
    review: Review,
    product: Entity,
    text_embedder: TextEmbedder,
    stopwords: frozenset[str] | None = None,
) -> MentionSpan | None:
    """Find the review span most likely naming the product.

    Every n-gram span (n <= 6) whose normalized form matches a product-name
    candidate competes; the span whose surface text is most similar to the
    product title under the embedder wins. Ties break to the earliest start,
    then the shortest span. Returns None when nothing matches.
    """
    candidates = product_name_candidates(product, stopwords)
    if not candidates:
        return None
    spans = tokenize_with_spans(review.text)
    normalized = [normalize_token(token) for token, _, _ in spans]
    matches: list[tuple[int, int]] = []
    for i in range(len(spans)):
        for n in range(1, min(MAX_MENTION_NGRAM, len(spans) - i) + 1):
            phrase = " ".join(normalized[i : i + n])
            if phrase in candidates:
                matches.append((spans[i][1], spans[i + n - 1][2]))
    if not matches:
        return None
    title_vec = text_embedder.embed(product.title)
    similarity: dict[str, float] = {}
    best: tuple[float, int, int] | None = None
    best_span: tuple[int, int] | None = None
    for start, end in matches:
        surface = review.text[start:end]
        if surface not in similarity:
            similarity[surface] = cosine(text_embedder.embed(surface), title_vec)
        rank = (-similarity[surface], start, end - start)
        if best is None or rank < best:
            best = rank
            best_span = (start, end)
    start, end = best_span
    return MentionSpan(surface=review.text[start:end], start=start, end=end)


@dataclass
class InformativenessFeatures:
    """The four review/product signals used to judge whether a review is informative."""

    mentioned_attribute_count: int
    image_similarity: float
    description_similarity: float
    title_similarity: float


@dataclass
class FilterThresholds:
    """One threshold per informativeness feature; a feature passes by strictly exceeding it.

    Shipped defaults are placeholders meant to be tuned on dev data.
    """

    min_attribute_count: float = 0.0
    min_image_sim: float = 0.35
    min_description_sim: float = 0.35
    min_title_sim: float = 0.35


def informativeness_features(
    review: Review,
    product: Entity,
    text_embedder: TextEmbedder,
    image_store: EmbeddingStore,
    stopwords: frozenset[str] | None = None,
) -> InformativenessFeatures:
    """Attribute-mention count plus image/description/title similarities.

    Image similarity is the max over all review-image x product-image pairs and
    falls back to -1 when either side has no resolvable image.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    review_tokens = content_tokens(review.text, stopwords)
    count = 0
    for value in product.attributes.values():
        needle = [normalize_token(t) for t in tokenize(value)]
        if phrase_sequence_contains(review_tokens, needle):
            count += 1

    image_sim = MISSING_IMAGE_SIMILARITY
    review_vecs = [v for v in (image_store.get(i) for i in review.image_ids) if v is not None]
    product_vecs = [v for v in (image_store.get(i) for i in product.image_ids) if v is not None]
    for rv in review_vecs:
        for pv in product_vecs:
            image_sim = max(image_sim, cosine(rv, pv))

    review_vec = text_embedder.embed(review.text)
    return InformativenessFeatures(
        mentioned_attribute_count=count,
        image_similarity=image_sim,
        description_similarity=cosine(review_vec, text_embedder.embed(product.description)),
        title_similarity=cosine(review_vec, text_embedder.embed(product.title)),
    )


def passes_filter(features: InformativenessFeatures, thresholds: FilterThresholds, conjunctive: bool = False) -> bool:
    checks = (
        features.mentioned_attribute_count > thresholds.min_attribute_count,
        features.image_similarity > thresholds.min_image_sim,
        features.description_similarity > thresholds.min_description_sim,
        features.title_similarity > thresholds.min_title_sim,
    )
    return all(checks) if conjunctive else any(checks)


def filter_reviews(
    reviews,
    kb: KnowledgeBase,
    thresholds: FilterThresholds,
    text_embedder: TextEmbedder,
    image_store: EmbeddingStore,
    conjunctive: bool = False,
    stopwords: frozenset[str] | None = None,
) -> tuple[list[Review], list[Review]]:
    """Partition reviews into (kept, dropped): a review is dropped only when every
    feature fails its threshold (or, in conjunctive mode, when any fails)."""
    kept: list[Review] = []
    dropped: list[Review] = []
    for review in reviews:
        if review.gold_entity_id is None or review.gold_entity_id not in kb:
            raise MiningError(f"review {review.review_id!r} has no gold entity in the knowledge base")
        product = kb.get(review.gold_entity_id)
        features = informativeness_features(review, product, text_embedder, image_store, stopwords)
        if passes_filter(features, thresholds, conjunctive):
            kept.append(review)
        else:
            dropped.append(review)
    return kept, dropped


def _first_image_vec(entity: Entity, image_store: EmbeddingStore):
    if not entity.image_ids:
        return None
    return image_store.get(entity.image_ids[0])


def mine_hard_negatives(
    gold: Entity,
    kb: KnowledgeBase,
    k: int,
    text_embedder: TextEmbedder,
    image_store: EmbeddingStore,
) -> list[str]:
    """Union of the top-k most title-similar and top-k most image-similar entities.

    At most 2k ids, deduplicated preserving score order, never containing gold.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    others = [e for e in kb if e.entity_id != gold.entity_id]
    gold_title_vec = text_embedder.embed(gold.title)
    text_ranked = sorted(
        ((cosine(text_embedder.embed(e.title), gold_title_vec), e.entity_id) for e in others),
        key=lambda item: (-item[0], item[1]),
    )

    image_ranked: list[tuple[float, str]] = []
    gold_image = _first_image_vec(gold, image_store)
    if gold_image is not None:
        scored = [
            (cosine(vec, gold_image), e.entity_id)
            for e in others
            if (vec := _first_image_vec(e, image_store)) is not None
        ]
        image_ranked = sorted(scored, key=lambda item: (-item[0], item[1]))

    mined: list[str] = []
    seen: set[str] = set()
    for _, entity_id in text_ranked[:k] + image_ranked[:k]:
        if entity_id not in seen:
            seen.add(entity_id)
            mined.append(entity_id)
    return mined
