"""Candidate retrieval: staged text retrieval, cross rescoring, image similarity,
weighted fusion, and prior-based filtering, plus Recall@K over the results.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingStore, KnowledgeBase, Review
from .encoders import CrossScorer, TextEmbedder, cosine
from .textnorm import PriorIndex, normalize_phrase

logger = logging.getLogger(__name__)


class RetrievalError(ValueError):
    """Dimension mismatches and malformed candidate files."""


@dataclass
class RetrievalConfig:
    stage1_k: int = 1000
    final_k: int = 10
    w_text: float = 1.0 / 3.0
    w_cross: float = 1.0 / 3.0
    w_image: float = 1.0 / 3.0
    apply_prior_filter: bool = True

    def __post_init__(self) -> None:
        if min(self.w_text, self.w_cross, self.w_image) < 0:
            raise RetrievalError("fusion weights must be non-negative")
        if self.w_text + self.w_cross + self.w_image <= 0:
            raise RetrievalError("at least one fusion weight must be positive")
        if self.final_k > self.stage1_k:
            raise RetrievalError(f"final_k ({self.final_k}) must not exceed stage1_k ({self.stage1_k})")


@dataclass
class Candidate:
    entity_id: str
    text_cos: float
    cross_score: float
    image_cos: float
    fused_score: float


@dataclass
class CandidateSet:
    """Fused-score-ordered candidates for one review, with per-channel breakdown."""

    review_id: str
    candidates: list[Candidate] = field(default_factory=list)
    gold_in_set: bool | None = None
    prior_filter_applied: bool = False

    def entity_ids(self) -> list[str]:
        return [c.entity_id for c in self.candidates]

    def to_json(self) -> dict:
        return {
            "review_id": self.review_id,
            "gold_in_set": self.gold_in_set,
            "prior_filter_applied": self.prior_filter_applied,
            "candidates": [
                {
                    "entity_id": c.entity_id,
                    "text_cos": c.text_cos,
                    "cross_score": c.cross_score,
                    "image_cos": c.image_cos,
                    "fused_score": c.fused_score,
                }
                for c in self.candidates
            ],
        }

    @classmethod
    def from_json(cls, record: dict) -> "CandidateSet":
        return cls(
            review_id=record["review_id"],
            gold_in_set=record.get("gold_in_set"),
            prior_filter_applied=bool(record.get("prior_filter_applied", False)),
            candidates=[Candidate(**c) for c in record["candidates"]],
        )


def top_k_cosine(query: np.ndarray, store: EmbeddingStore, k: int) -> list[tuple[str, float]]:
    """Exact top-k rows by cosine similarity, ties broken by key ascending."""
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != store.dim:
        raise RetrievalError(f"query dim {query.shape[0]} does not match store dim {store.dim}")
    keys, matrix, norms = store.dense()
    if not keys:
        return []
    qnorm = float(np.linalg.norm(query))
    denom = norms * qnorm
    scores = np.where(denom > 0.0, matrix @ query / np.where(denom == 0.0, 1.0, denom), 0.0)
    # lexsort: primary key last -> sort by -score, then by key index (keys pre-sorted).
    order = np.lexsort((np.arange(len(keys)), -scores))[: min(k, len(keys))]
    return [(keys[i], float(scores[i])) for i in order]


def _first_image_vec(image_ids, image_store: EmbeddingStore):
    if not image_ids:
        return None
    return image_store.get(image_ids[0])


def retrieve(
    review: Review,
    kb: KnowledgeBase,
    entity_text_store: EmbeddingStore,
    image_store: EmbeddingStore,
    text_embedder: TextEmbedder,
    cross_scorer: CrossScorer,
    prior_index: PriorIndex | None,
    config: RetrievalConfig,
    review_vec: np.ndarray | None = None,
) -> CandidateSet:
    """Stage-1 text retrieval, three-channel scoring, weighted fusion, and prior filtering.

    fused = w_text * text_cos + w_cross * cross + w_image * image_cos over the
    stage-1 pool; the top ``final_k`` survive. With the prior filter on,
    candidates whose entity prior AND leaf-category prior are both zero for the
    detected mention phrase are dropped; an unknown phrase (or a missing
    mention) skips the filter instead of emptying the set.
    """
    if review_vec is None:
        review_vec = text_embedder.embed(review.text)
    stage1 = top_k_cosine(review_vec, entity_text_store, config.stage1_k)
    mention_text = review.mention.surface if review.mention is not None else review.text
    review_image = _first_image_vec(review.image_ids, image_store)

    scored: list[Candidate] = []
    for entity_id, text_cos in stage1:
        entity = kb.get(entity_id)
        if cross_scorer.keyed_by_id:
            cross = float(cross_scorer.score(review.review_id, entity_id))
        else:
            cross = float(cross_scorer.score(mention_text, entity.description))
        entity_image = _first_image_vec(entity.image_ids, image_store)
        image_cos = cosine(review_image, entity_image) if review_image is not None and entity_image is not None else 0.0
        fused = config.w_text * text_cos + config.w_cross * cross + config.w_image * image_cos
        scored.append(Candidate(entity_id, text_cos, cross, image_cos, fused))

    scored.sort(key=lambda c: (-c.fused_score, c.entity_id))
    final = scored[: config.final_k]

    filter_applied = False
    if config.apply_prior_filter and prior_index is not None:
        if review.mention is None:
            logger.warning("review %s has no mention; prior filter skipped", review.review_id)
        else:
            phrase = normalize_phrase(review.mention.surface)
            if phrase in prior_index:
                filter_applied = True
                final = [
                    c
                    for c in final
                    if prior_index.entity_probability(phrase, c.entity_id) > 0.0
                    or prior_index.category_probability(phrase, kb.get(c.entity_id).leaf_category) > 0.0
                ]

    gold_in_set = None
    if review.gold_entity_id is not None:
        gold_in_set = any(c.entity_id == review.gold_entity_id for c in final)
    return CandidateSet(
        review_id=review.review_id,
        candidates=final,
        gold_in_set=gold_in_set,
        prior_filter_applied=filter_applied,
    )


def build_entity_text_store(kb: KnowledgeBase, text_embedder: TextEmbedder) -> EmbeddingStore:
    """Embed title + " " + description for every entity, keyed by entity_id."""
    store = EmbeddingStore(dim=text_embedder.dim, normalized=True)
    for entity in kb:
        store.add(entity.entity_id, text_embedder.embed(f"{entity.title} {entity.description}"))
    return store


def recall_at_k(candidate_sets, gold_map: dict[str, str], ks) -> dict[int, float]:
    """Fraction of reviews whose gold entity appears in the top k candidates, per k."""
    sets = list(candidate_sets)
    if not sets:
        return {int(k): 0.0 for k in ks}
    ranks: list[int | None] = []
    for cs in sets:
        if cs.review_id not in gold_map:
            raise RetrievalError(f"review {cs.review_id!r} missing from the gold map")
        gold = gold_map[cs.review_id]
        rank = None
        for position, candidate in enumerate(cs.candidates, start=1):
            if candidate.entity_id == gold:
                rank = position
                break
        ranks.append(rank)
    return {int(k): sum(1 for r in ranks if r is not None and r <= k) / len(ranks) for k in ks}


def write_candidates(candidate_sets, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for cs in candidate_sets:
            handle.write(json.dumps(cs.to_json(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def read_candidates(path) -> list[CandidateSet]:
    out: list[CandidateSet] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                out.append(CandidateSet.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RetrievalError(f"{path}:{lineno}: malformed candidate record ({exc})") from exc
    return out
