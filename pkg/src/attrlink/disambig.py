"""Entity disambiguation: per-candidate attribute features, the trainable NLI
head, the residual image adapter, weighted score fusion, and attribute-mismatch
filtering of candidates.

The head consumes a fixed 6-dim summary per candidate (description entailment,
three aggregates over per-attribute entailment scores, and the two mention
priors) instead of concatenated encoder states, so any scalar pair scorer can
drive it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingStore, Entity, KnowledgeBase, Review, read_embeddings, write_embeddings
from .encoders import PairEntailmentScorer, attribute_hypothesis, cosine
from .retrieval import CandidateSet
from .textnorm import PriorIndex, normalize_phrase

N_FEATURES = 6
FEATURE_NAMES = ("desc_score", "attr_max", "attr_mean", "attr_hit_fraction", "prior_e", "prior_c")
# Columns zeroed when the attribute modality is ablated.
ATTRIBUTE_FEATURE_COLUMNS = (1, 2, 3)
ATTRIBUTE_HIT_THRESHOLD = 0.5
_FALLBACK_MENTION = "product"


class DisambigError(ValueError):
    """Shape mismatches and malformed parameter files."""


@dataclass
class AttributeFeatureVector:
    desc_score: float
    attr_max: float
    attr_mean: float
    attr_hit_fraction: float
    prior_e: float
    prior_c: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.desc_score, self.attr_max, self.attr_mean, self.attr_hit_fraction, self.prior_e, self.prior_c],
            dtype=np.float64,
        )


def candidate_features(
    review: Review,
    entity: Entity,
    entailment_scorer: PairEntailmentScorer,
    prior_index: PriorIndex | None,
) -> AttributeFeatureVector:
    """Score the entity description and every entity attribute against the review,
    aggregate, and attach the mention's prior probabilities (0 when absent)."""
    mention = review.mention.surface.lower() if review.mention is not None else _FALLBACK_MENTION
    desc_score = float(entailment_scorer.score(mention, review.text, entity.description))

    scores: list[float] = []
    for key, value in sorted(entity.attributes.items()):
        if not key.strip() or not value.strip():
            continue
        hypothesis = attribute_hypothesis(mention, key, value)
        scores.append(float(entailment_scorer.score(mention, review.text, hypothesis)))
    if scores:
        attr_max = max(scores)
        attr_mean = sum(scores) / len(scores)
        attr_hit = sum(1 for s in scores if s >= ATTRIBUTE_HIT_THRESHOLD) / len(scores)
    else:
        attr_max = attr_mean = attr_hit = 0.0

    prior_e = prior_c = 0.0
    if review.mention is not None and prior_index is not None:
        phrase = normalize_phrase(review.mention.surface)
        prior_e = prior_index.entity_probability(phrase, entity.entity_id)
        prior_c = prior_index.category_probability(phrase, entity.leaf_category)
    return AttributeFeatureVector(desc_score, attr_max, attr_mean, attr_hit, prior_e, prior_c)


@dataclass
class NliHeadParams:
    """One-hidden-layer scorer: s = w_out . tanh(x W_hidden + b_hidden) + b_out."""

    w_hidden: np.ndarray  # (N_FEATURES, hidden)
    b_hidden: np.ndarray  # (hidden,)
    w_out: np.ndarray  # (hidden,)
    b_out: float

    @classmethod
    def init(cls, hidden: int = 16, seed: int = 0) -> "NliHeadParams":
        rng = np.random.default_rng(seed)
        bound_in = 1.0 / math.sqrt(N_FEATURES)
        bound_out = 1.0 / math.sqrt(hidden)
        return cls(
            w_hidden=rng.uniform(-bound_in, bound_in, size=(N_FEATURES, hidden)),
            b_hidden=rng.uniform(-bound_in, bound_in, size=hidden),
            w_out=rng.uniform(-bound_out, bound_out, size=hidden),
            b_out=float(rng.uniform(-bound_out, bound_out)),
        )

    def copy(self) -> "NliHeadParams":
        return NliHeadParams(self.w_hidden.copy(), self.b_hidden.copy(), self.w_out.copy(), float(self.b_out))


def nli_scores(features: np.ndarray, params: NliHeadParams) -> np.ndarray:
    """Head scores for a (K, N_FEATURES) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.w_hidden.shape[0]:
        raise DisambigError(f"feature matrix shape {features.shape} does not match head input {params.w_hidden.shape[0]}")
    hidden = np.tanh(features @ params.w_hidden + params.b_hidden)
    return hidden @ params.w_out + params.b_out


def nli_score(features: AttributeFeatureVector, params: NliHeadParams) -> float:
    value = float(nli_scores(features.as_array()[None, :], params)[0])
    if not np.isfinite(value):
        raise DisambigError("nli_score produced a non-finite value")
    return value


def adapt(vec: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Residual feed-forward transform: vec + relu(vec @ w1) @ w2."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != vec.shape[-1]:
        raise DisambigError(f"adapter shapes inconsistent: vec {vec.shape}, w1 {w1.shape}, w2 {w2.shape}")
    return vec + np.maximum(vec @ w1, 0.0) @ w2


@dataclass
class AdapterParams:
    """Residual adapters mapping generic image embeddings into the task space, one per side."""

    w1_review: np.ndarray  # (dim, hidden)
    w2_review: np.ndarray  # (hidden, dim)
    w1_entity: np.ndarray
    w2_entity: np.ndarray

    @classmethod
    def init(cls, dim: int, hidden: int | None = None, seed: int = 0) -> "AdapterParams":
        if hidden is None:
            hidden = max(1, dim // 4)
        rng = np.random.default_rng(seed)
        bound_in = 1.0 / math.sqrt(dim)
        bound_hidden = 1.0 / math.sqrt(hidden)

        def layer(bound, shape):
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            w1_review=layer(bound_in, (dim, hidden)),
            w2_review=layer(bound_hidden, (hidden, dim)),
            w1_entity=layer(bound_in, (dim, hidden)),
            w2_entity=layer(bound_hidden, (hidden, dim)),
        )

    @classmethod
    def zeros(cls, dim: int, hidden: int | None = None) -> "AdapterParams":
        if hidden is None:
            hidden = max(1, dim // 4)
        shape1, shape2 = (dim, hidden), (hidden, dim)
        return cls(np.zeros(shape1), np.zeros(shape2), np.zeros(shape1), np.zeros(shape2))

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            self.w1_review.copy(), self.w2_review.copy(), self.w1_entity.copy(), self.w2_entity.copy()
        )

    def adapt_review(self, vec: np.ndarray) -> np.ndarray:
        return adapt(vec, self.w1_review, self.w2_review)

    def adapt_entity(self, vec: np.ndarray) -> np.ndarray:
        return adapt(vec, self.w1_entity, self.w2_entity)


def image_score(review_embedding: np.ndarray, entity_embedding: np.ndarray, adapter: AdapterParams) -> float:
    """Cosine similarity of the adapted review and entity image embeddings."""
    return cosine(adapter.adapt_review(review_embedding), adapter.adapt_entity(entity_embedding))


@dataclass
class FusionConfig:
    fusion_lambda: float = 0.5
    apply_attribute_filter: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise DisambigError(f"lambda must be in [0, 1], got {self.fusion_lambda}")


@dataclass
class Prediction:
    review_id: str
    prediction: str | None
    scores: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"review_id": self.review_id, "prediction": self.prediction, "scores": self.scores}


def attributes_compatible(entity: Entity, extracted: dict[str, str]) -> bool:
    """An entity survives the filter unless it carries a differing normalized value
    for some extracted key; entities missing the key are kept."""
    for key, value in extracted.items():
        entity_value = entity.attributes.get(key)
        if entity_value is not None and normalize_phrase(entity_value) != normalize_phrase(value):
            return False
    return True


def fuse_and_predict(
    candidate_set: CandidateSet,
    text_scores: dict[str, float],
    image_scores: dict[str, float | None],
    config: FusionConfig,
    extracted_attributes: dict[str, str],
    kb: KnowledgeBase,
) -> Prediction:
    """Attribute-filter the candidates, fuse s = lambda*s_t + (1-lambda)*s_v, and argmax.

    A candidate without an image score falls back to s = s_t. An empty
    post-filter set abstains (prediction None). Ties break to the smallest
    entity_id.
    """
    scores: dict[str, dict[str, float | None]] = {}
    survivors: list[tuple[float, str]] = []
    for candidate in candidate_set.candidates:
        entity_id = candidate.entity_id
        s_t = float(text_scores[entity_id])
        s_v = image_scores.get(entity_id)
        if s_v is None:
            fused = s_t
        else:
            s_v = float(s_v)
            fused = config.fusion_lambda * s_t + (1.0 - config.fusion_lambda) * s_v
        scores[entity_id] = {"s_t": s_t, "s_v": s_v, "s": fused}
        if config.apply_attribute_filter and not attributes_compatible(kb.get(entity_id), extracted_attributes):
            continue
        survivors.append((fused, entity_id))

    if not survivors:
        return Prediction(review_id=candidate_set.review_id, prediction=None, scores=scores)
    survivors.sort(key=lambda item: (-item[0], item[1]))
    return Prediction(review_id=candidate_set.review_id, prediction=survivors[0][1], scores=scores)


def write_predictions(predictions, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for prediction in predictions:
            handle.write(json.dumps(prediction.to_json(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def read_predictions(path) -> dict[str, str | None]:
    """Predictions keyed by review_id (abstentions are None)."""
    out: dict[str, str | None] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out[record["review_id"]] = record["prediction"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DisambigError(f"{path}:{lineno}: malformed prediction record ({exc})") from exc
    return out


# --- parameter persistence: AMEV1 rows padded to a common width + shape manifest ---

_HEAD_KEYS = {"W_h": "w_hidden", "b_h": "b_hidden", "w_o": "w_out", "b_o": "b_out"}
_ADAPTER_KEYS = {"W^r_1": "w1_review", "W^r_2": "w2_review", "W^e_1": "w1_entity", "W^e_2": "w2_entity"}


def save_param_arrays(arrays: dict[str, np.ndarray], store_path, manifest_path) -> None:
    shapes = {key: list(np.asarray(value).shape) for key, value in arrays.items()}
    width = max(int(np.asarray(v).size) for v in arrays.values())
    store = EmbeddingStore(dim=width, normalized=False)
    for key, value in arrays.items():
        flat = np.asarray(value, dtype=np.float32).reshape(-1)
        padded = np.zeros(width, dtype=np.float32)
        padded[: flat.size] = flat
        store.add(key, padded)
    write_embeddings(store, store_path)
    Path(manifest_path).write_text(
        json.dumps({"dim": width, "shapes": shapes}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_param_arrays(store_path, manifest_path) -> dict[str, np.ndarray]:
    store = read_embeddings(store_path)
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        shapes = {key: tuple(int(d) for d in shape) for key, shape in manifest["shapes"].items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DisambigError(f"{manifest_path}: malformed shape manifest ({exc})") from exc
    arrays: dict[str, np.ndarray] = {}
    for key, shape in shapes.items():
        row = store.get(key)
        if row is None:
            raise DisambigError(f"{store_path}: missing parameter row {key!r}")
        size = int(np.prod(shape)) if shape else 1
        arrays[key] = row[:size].astype(np.float64).reshape(shape)
    return arrays


def save_head(params: NliHeadParams, store_path, manifest_path) -> None:
    arrays = {key: np.asarray(getattr(params, attr)) for key, attr in _HEAD_KEYS.items()}
    save_param_arrays(arrays, store_path, manifest_path)


def load_head(store_path, manifest_path) -> NliHeadParams:
    arrays = load_param_arrays(store_path, manifest_path)
    try:
        return NliHeadParams(
            w_hidden=arrays["W_h"],
            b_hidden=arrays["b_h"],
            w_out=arrays["w_o"],
            b_out=float(arrays["b_o"]),
        )
    except KeyError as exc:
        raise DisambigError(f"{store_path}: missing head parameter {exc.args[0]!r}") from exc


def save_adapter(params: AdapterParams, store_path, manifest_path) -> None:
    arrays = {key: np.asarray(getattr(params, attr)) for key, attr in _ADAPTER_KEYS.items()}
    save_param_arrays(arrays, store_path, manifest_path)


def load_adapter(store_path, manifest_path) -> AdapterParams:
    arrays = load_param_arrays(store_path, manifest_path)
    try:
        return AdapterParams(
            w1_review=arrays["W^r_1"],
            w2_review=arrays["W^r_2"],
            w1_entity=arrays["W^e_1"],
            w2_entity=arrays["W^e_2"],
        )
    except KeyError as exc:
        raise DisambigError(f"{store_path}: missing adapter parameter {exc.args[0]!r}") from exc
