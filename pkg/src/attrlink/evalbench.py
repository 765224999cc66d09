"""Evaluation bench: micro-F1 in both settings, seeded splits, the synthetic
corpus generator with planted ground truth, the modality-ablation runner, and
exhaustive grid search.

The synthetic generator builds sibling groups of near-identical products that
differ in one or two attribute values, so attribute reasoning (not surface
text or images) is what separates candidates within a group.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import EmbeddingStore, Entity, KnowledgeBase, Review, write_embeddings, write_jsonl
from .disambig import (
    ATTRIBUTE_FEATURE_COLUMNS,
    AdapterParams,
    FusionConfig,
    NliHeadParams,
    Prediction,
    candidate_features,
    fuse_and_predict,
    image_score,
    nli_scores,
)
from .encoders import HashTextEmbedder, LexicalCrossScorer, LexicalEntailmentScorer
from .mining import detect_mention
from .optim import TrainConfig, train_adapter, train_nli_head
from .retrieval import CandidateSet, RetrievalConfig, build_entity_text_store, retrieve
from .textnorm import PriorIndex, build_prior_index, extract_attributes

END_TO_END = "end_to_end"
DISAMBIGUATION = "disambiguation"
SETTINGS = (END_TO_END, DISAMBIGUATION)

ABLATION_VARIANTS = ("full", "w/o_attribute", "w/o_image", "w/o_text")

_SIBLING_IMAGE_SPREAD = 0.05


class EvalError(ValueError):
    """Inconsistent evaluation inputs or invalid synthetic configuration."""


@dataclass
class MicroF1Report:
    precision: float
    recall: float
    f1: float
    n_predicted: int
    n_abstained: int
    n_total: int
    setting: str

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_predicted": self.n_predicted,
            "n_abstained": self.n_abstained,
            "n_total": self.n_total,
            "setting": self.setting,
        }


def micro_f1(
    predictions: dict[str, str | None],
    gold_map: dict[str, str],
    setting: str = END_TO_END,
    candidate_sets: dict[str, CandidateSet] | None = None,
) -> MicroF1Report:
    """Pooled precision/recall/F1 over predictions.

    The end-to-end setting evaluates every predicted review; the disambiguation
    setting keeps only reviews whose gold entity appears in their candidate
    set. Precision pools over non-abstained predictions, recall over all
    evaluated reviews, so abstentions hurt recall only.
    """
    if setting not in SETTINGS:
        raise EvalError(f"unknown setting {setting!r}, expected one of {SETTINGS}")
    if setting == DISAMBIGUATION and candidate_sets is None:
        raise EvalError("the disambiguation setting requires candidate sets")

    evaluated: list[tuple[str, str | None]] = []
    for review_id, predicted in predictions.items():
        if review_id not in gold_map:
            raise EvalError(f"prediction for unknown review {review_id!r}")
        if setting == DISAMBIGUATION:
            cs = candidate_sets.get(review_id)
            if cs is None or gold_map[review_id] not in cs.entity_ids():
                continue
        evaluated.append((review_id, predicted))

    n_total = len(evaluated)
    n_predicted = sum(1 for _, p in evaluated if p is not None)
    n_abstained = n_total - n_predicted
    correct = sum(1 for rid, p in evaluated if p is not None and p == gold_map[rid])
    precision = correct / n_predicted if n_predicted else 0.0
    recall = correct / n_total if n_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MicroF1Report(
        precision=precision,
        recall=recall,
        f1=f1,
        n_predicted=n_predicted,
        n_abstained=n_abstained,
        n_total=n_total,
        setting=setting,
    )


def split(reviews, ratios=(0.75, 0.10, 0.15), seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle followed by a contiguous three-way partition."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise EvalError(f"split ratios must be three values summing to 1, got {ratios}")
    items = list(reviews)
    order = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in order]
    first = round(len(items) * ratios[0])
    second = round(len(items) * (ratios[0] + ratios[1]))
    return shuffled[:first], shuffled[first:second], shuffled[second:]


def random_predictions(candidate_sets, seed: int = 0) -> dict[str, str | None]:
    """Uniform random pick among each review's candidates (None when empty)."""
    rng = np.random.default_rng(seed)
    out: dict[str, str | None] = {}
    for cs in candidate_sets:
        ids = cs.entity_ids()
        out[cs.review_id] = ids[int(rng.integers(len(ids)))] if ids else None
    return out


# --- synthetic corpus ---


@dataclass
class SynthConfig:
    n_categories: int = 5
    entities_per_category: int = 20
    sibling_group_size: int = 4
    attributes_per_entity: int = 4
    n_reviews: int = 200
    review_attribute_mentions: int = 2
    image_noise_sigma: float = 0.1
    seed: int = 0
    image_dim: int = 32
    # Per-coordinate spread of sibling images around their group base; small
    # values make siblings visually near-identical (the paper's difficulty).
    sibling_image_spread: float = _SIBLING_IMAGE_SPREAD

    def __post_init__(self) -> None:
        if self.sibling_group_size < 2:
            raise EvalError(f"sibling_group_size must be >= 2, got {self.sibling_group_size}")
        if self.review_attribute_mentions > self.attributes_per_entity:
            raise EvalError("review_attribute_mentions must not exceed attributes_per_entity")
        if self.entities_per_category % self.sibling_group_size:
            raise EvalError("entities_per_category must be a multiple of sibling_group_size")
        if self.image_noise_sigma < 0 or self.sibling_image_spread < 0:
            raise EvalError("image noise parameters must be >= 0")


@dataclass
class SynthCorpus:
    kb: KnowledgeBase
    reviews: list[Review]
    images: EmbeddingStore
    gold: dict[str, str]

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_jsonl((e.to_json() for e in self.kb), directory / "entities.jsonl")
        write_jsonl((r.to_json() for r in self.reviews), directory / "reviews.jsonl")
        write_embeddings(self.images, directory / "images.amev")
        write_jsonl(
            ({"review_id": rid, "entity_id": self.gold[rid]} for rid in sorted(self.gold)),
            directory / "gold.jsonl",
        )


def _templates() -> dict:
    raw = resources.files("attrlink").joinpath("data/synth_templates.json").read_text(encoding="utf-8")
    return json.loads(raw)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def _perturbed_unit(rng: np.random.Generator, base: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0.0:
        return base.copy()
    noisy = base + rng.normal(0.0, sigma, size=base.shape)
    norm = np.linalg.norm(noisy)
    if norm == 0.0:
        return base.copy()
    return noisy / norm


def generate_synthetic(config: SynthConfig) -> SynthCorpus:
    """Planted-ground-truth corpus: sibling product groups sharing a title and
    differing in 1-2 attribute values, reviews templated from the gold entity,
    and review images equal to the gold image plus Gaussian noise.
    """
    templates = _templates()
    schema: dict[str, list[str]] = templates["attribute_schema"]
    schema_keys = sorted(schema)
    nouns = templates["category_nouns"]
    brands = templates["brands"]
    if config.n_categories > len(nouns):
        raise EvalError(f"at most {len(nouns)} categories supported, got {config.n_categories}")
    if config.attributes_per_entity > len(schema_keys):
        raise EvalError(f"at most {len(schema_keys)} attributes per entity supported")

    rng = np.random.default_rng(config.seed)
    entities: list[Entity] = []
    images = EmbeddingStore(dim=config.image_dim, normalized=True)
    sibling_groups: dict[str, list[str]] = {}

    groups_per_category = config.entities_per_category // config.sibling_group_size
    entity_counter = 0
    group_counter = 0
    for cat_index in range(config.n_categories):
        noun = nouns[cat_index]
        leaf = f"{noun}s"
        keys = [schema_keys[(cat_index + j) % len(schema_keys)] for j in range(config.attributes_per_entity)]
        for _ in range(groups_per_category):
            brand = brands[int(rng.integers(len(brands)))]
            model = 100 + 10 * group_counter
            group_counter += 1
            title = f"{brand} {noun.capitalize()} {model}"
            description = templates["description_template"].format(title=title, noun=noun)
            base_attrs = {key: schema[key][int(rng.integers(len(schema[key])))] for key in keys}
            group_attrs = [base_attrs]
            for _ in range(config.sibling_group_size - 1):
                for _attempt in range(64):
                    variant = dict(base_attrs)
                    n_changes = int(rng.integers(1, 3))  # 1 or 2 changed values
                    changed = rng.choice(len(keys), size=min(n_changes, len(keys)), replace=False)
                    for key_index in changed:
                        key = keys[int(key_index)]
                        alternatives = [v for v in schema[key] if v != base_attrs[key]]
                        variant[key] = alternatives[int(rng.integers(len(alternatives)))]
                    if all(variant != existing for existing in group_attrs):
                        break
                group_attrs.append(variant)

            base_image = _unit(rng, config.image_dim)
            group_ids: list[str] = []
            for attrs in group_attrs:
                entity_id = f"e{entity_counter:05d}"
                entity_counter += 1
                image_id = f"img:{entity_id}"
                images.add(image_id, _perturbed_unit(rng, base_image, config.sibling_image_spread).astype(np.float32))
                entities.append(
                    Entity(
                        entity_id=entity_id,
                        title=title,
                        description=description,
                        categories=[leaf],
                        attributes=dict(attrs),
                        image_ids=[image_id],
                    )
                )
                group_ids.append(entity_id)
            for eid in group_ids:
                sibling_groups[eid] = group_ids

    kb = KnowledgeBase.from_entities(entities)
    by_id = {e.entity_id: e for e in entities}
    all_ids = sorted(by_id)

    reviews: list[Review] = []
    gold: dict[str, str] = {}
    for index in range(config.n_reviews):
        review_id = f"r{index:05d}"
        gold_id = all_ids[int(rng.integers(len(all_ids)))]
        entity = by_id[gold_id]
        plain_keys = [k for k in sorted(entity.attributes) if k != "name"]
        siblings = [by_id[eid] for eid in sibling_groups[gold_id] if eid != gold_id]
        distinguishing = [
            k for k in plain_keys if any(s.attributes.get(k) != entity.attributes[k] for s in siblings)
        ]
        rest = [k for k in plain_keys if k not in distinguishing]
        ordered = [distinguishing[i] for i in rng.permutation(len(distinguishing))]
        ordered += [rest[i] for i in rng.permutation(len(rest))]
        mention_keys = ordered[: config.review_attribute_mentions]

        sentences = [templates["openers"][int(rng.integers(len(templates["openers"])))].format(title=entity.title)]
        for key in mention_keys:
            template = templates["attribute_sentences"][int(rng.integers(len(templates["attribute_sentences"])))]
            sentences.append(template.format(key=key, value=entity.attributes[key]))
        sentences.append(templates["fillers"][int(rng.integers(len(templates["fillers"])))])
        text = " ".join(sentences)

        image_id = f"img:{review_id}"
        images.add(image_id, _perturbed_unit(rng, images.get(f"img:{gold_id}").astype(np.float64), config.image_noise_sigma).astype(np.float32))
        reviews.append(
            Review(review_id=review_id, text=text, image_ids=[image_id], gold_entity_id=gold_id)
        )
        gold[review_id] = gold_id
    return SynthCorpus(kb=kb, reviews=reviews, images=images, gold=gold)


# --- end-to-end pipeline shared by the ablation runner and grid search ---


@dataclass
class PipelineConfig:
    embed_dim: int = 256
    seed: int = 0
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_ratios: tuple[float, float, float] = (0.75, 0.10, 0.15)


@dataclass
class PreparedPipeline:
    """Everything variant evaluation needs, computed once per corpus."""

    kb: KnowledgeBase
    prior_index: PriorIndex
    reviews: list[Review]
    splits: tuple[list[Review], list[Review], list[Review]]
    candidate_sets: dict[str, CandidateSet]
    features: dict[str, tuple[list[str], np.ndarray]]  # review -> (candidate ids, K x 6 matrix)
    image_scores: dict[str, dict[str, float | None]]
    config: PipelineConfig


def prepare_pipeline(
    kb: KnowledgeBase,
    reviews,
    images: EmbeddingStore,
    config: PipelineConfig,
) -> PreparedPipeline:
    """Mentions, attribute extraction, retrieval, adapter training, and per-candidate
    feature/image scores for every review with a detectable mention."""
    embedder = HashTextEmbedder(dim=config.embed_dim, seed=config.seed)
    prior_index = build_prior_index(kb)
    entailment = LexicalEntailmentScorer()

    enriched: list[Review] = []
    for review in sorted(reviews, key=lambda r: r.review_id):
        if review.gold_entity_id is None or review.gold_entity_id not in kb:
            continue
        product = kb.get(review.gold_entity_id)
        mention = review.mention or detect_mention(review, product, embedder)
        if mention is None:
            continue
        extracted = extract_attributes(review, kb)
        enriched.append(replace(review, mention=mention, extracted_attributes=extracted.pairs))

    train_reviews, dev_reviews, test_reviews = split(enriched, config.split_ratios, seed=config.seed)

    entity_store = build_entity_text_store(kb, embedder)
    cross = LexicalCrossScorer()
    candidate_sets = {
        review.review_id: retrieve(
            review, kb, entity_store, images, embedder, cross, prior_index, config.retrieval
        )
        for review in enriched
    }

    def image_pairs(subset):
        pairs = []
        for review in subset:
            review_vec = images.get(review.first_image_id) if review.first_image_id else None
            entity = kb.get(review.gold_entity_id)
            entity_vec = images.get(entity.first_image_id) if entity.first_image_id else None
            if review_vec is not None and entity_vec is not None:
                pairs.append((review_vec.astype(np.float64), entity_vec.astype(np.float64)))
        return pairs

    train_pairs = image_pairs(train_reviews)
    adapter: AdapterParams | None = None
    if len(train_pairs) >= config.train.batch_size:
        dev_pairs = image_pairs(dev_reviews) or None
        adapter, _ = train_adapter(train_pairs, config.train, dev_pairs=dev_pairs)

    features: dict[str, tuple[list[str], np.ndarray]] = {}
    image_scores: dict[str, dict[str, float | None]] = {}
    for review in enriched:
        cs = candidate_sets[review.review_id]
        ids = cs.entity_ids()
        matrix = np.zeros((len(ids), 6), dtype=np.float64)
        for row, entity_id in enumerate(ids):
            matrix[row] = candidate_features(review, kb.get(entity_id), entailment, prior_index).as_array()
        features[review.review_id] = (ids, matrix)

        review_vec = images.get(review.first_image_id) if review.first_image_id else None
        per_candidate: dict[str, float | None] = {}
        for entity_id in ids:
            entity = kb.get(entity_id)
            entity_vec = images.get(entity.first_image_id) if entity.first_image_id else None
            if review_vec is None or entity_vec is None or adapter is None:
                per_candidate[entity_id] = None
            else:
                per_candidate[entity_id] = image_score(review_vec, entity_vec, adapter)
        image_scores[review.review_id] = per_candidate

    return PreparedPipeline(
        kb=kb,
        prior_index=prior_index,
        reviews=enriched,
        splits=(train_reviews, dev_reviews, test_reviews),
        candidate_sets=candidate_sets,
        features=features,
        image_scores=image_scores,
        config=config,
    )


def variant_fusion(variant: str, base: FusionConfig) -> FusionConfig:
    """The single-switch fusion config for an ablation variant."""
    if variant == "full":
        return base
    if variant == "w/o_attribute":
        return replace(base, apply_attribute_filter=False)
    if variant == "w/o_image":
        return replace(base, fusion_lambda=1.0)
    if variant == "w/o_text":
        return replace(base, fusion_lambda=0.0)
    raise EvalError(f"unknown ablation variant {variant!r}")


def _masked(matrix: np.ndarray, drop_attribute_features: bool) -> np.ndarray:
    if not drop_attribute_features:
        return matrix
    masked = matrix.copy()
    masked[:, list(ATTRIBUTE_FEATURE_COLUMNS)] = 0.0
    return masked


def _head_instances(prepared: PreparedPipeline, subset, drop_attribute_features: bool):
    instances = []
    for review in subset:
        ids, matrix = prepared.features[review.review_id]
        if review.gold_entity_id in ids:
            instances.append((_masked(matrix, drop_attribute_features), ids.index(review.gold_entity_id)))
    return instances


def evaluate_variant(
    prepared: PreparedPipeline,
    fusion: FusionConfig,
    subset=None,
    drop_attribute_features: bool = False,
    head: NliHeadParams | None = None,
) -> tuple[dict[str, MicroF1Report], NliHeadParams, dict[str, Prediction]]:
    """Train the head on the train split (unless given) and score a subset (default: test)."""
    train_reviews, dev_reviews, test_reviews = prepared.splits
    if head is None:
        train_instances = _head_instances(prepared, train_reviews, drop_attribute_features)
        dev_instances = _head_instances(prepared, dev_reviews, drop_attribute_features) or None
        head, _ = train_nli_head(train_instances, prepared.config.train, dev_dataset=dev_instances)

    subset = test_reviews if subset is None else subset
    predictions: dict[str, Prediction] = {}
    for review in subset:
        cs = prepared.candidate_sets[review.review_id]
        ids, matrix = prepared.features[review.review_id]
        scores = nli_scores(_masked(matrix, drop_attribute_features), head) if ids else np.zeros(0)
        text_scores = dict(zip(ids, (float(s) for s in scores)))
        predictions[review.review_id] = fuse_and_predict(
            cs, text_scores, prepared.image_scores[review.review_id], fusion, review.extracted_attributes, prepared.kb
        )

    gold_map = {r.review_id: r.gold_entity_id for r in subset}
    flat = {rid: p.prediction for rid, p in predictions.items()}
    sets = {r.review_id: prepared.candidate_sets[r.review_id] for r in subset}
    reports = {
        END_TO_END: micro_f1(flat, gold_map, END_TO_END),
        DISAMBIGUATION: micro_f1(flat, gold_map, DISAMBIGUATION, sets),
    }
    return reports, head, predictions


@dataclass
class AblationRow:
    variant: str
    disambiguation_f1: float
    end_to_end_f1: float

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "disambiguation_f1": self.disambiguation_f1,
            "end_to_end_f1": self.end_to_end_f1,
        }


def run_ablation(
    kb: KnowledgeBase,
    reviews,
    images: EmbeddingStore,
    config: PipelineConfig | None = None,
) -> list[AblationRow]:
    """Full system and the three single-modality ablations, both settings each.

    w/o_attribute zeroes the attribute features and disables the attribute
    filter; w/o_image forces lambda=1; w/o_text forces lambda=0.
    """
    config = config or PipelineConfig()
    prepared = prepare_pipeline(kb, reviews, images, config)
    rows = []
    for variant in ABLATION_VARIANTS:
        fusion = variant_fusion(variant, config.fusion)
        drop = variant == "w/o_attribute"
        reports, _, _ = evaluate_variant(prepared, fusion, drop_attribute_features=drop)
        rows.append(
            AblationRow(
                variant=variant,
                disambiguation_f1=reports[DISAMBIGUATION].f1,
                end_to_end_f1=reports[END_TO_END].f1,
            )
        )
    return rows


def grid_search(param_grid: dict, eval_fn) -> tuple[dict, list[tuple[dict, float]]]:
    """Exhaustively evaluate every grid point; best by score, ties to the
    lexicographically smallest configuration."""
    if not param_grid or any(len(values) == 0 for values in param_grid.values()):
        raise EvalError("grid_search requires a non-empty grid")
    keys = sorted(param_grid)
    combos = sorted(itertools.product(*(param_grid[k] for k in keys)))
    rows: list[tuple[dict, float]] = []
    best_config: dict | None = None
    best_score = -np.inf
    for combo in combos:
        config = dict(zip(keys, combo))
        score = float(eval_fn(config))
        rows.append((config, score))
        if score > best_score:
            best_score = score
            best_config = config
    return best_config, rows


def dev_f1_eval_fn(prepared: PreparedPipeline):
    """Grid-search objective: end-to-end F1 on the dev split for a fusion override."""
    _, dev_reviews, _ = prepared.splits

    def evaluate(config: dict) -> float:
        fusion = FusionConfig(
            fusion_lambda=float(config.get("lambda", prepared.config.fusion.fusion_lambda)),
            apply_attribute_filter=bool(
                config.get("apply_attribute_filter", prepared.config.fusion.apply_attribute_filter)
            ),
        )
        reports, _, _ = evaluate_variant(prepared, fusion, subset=dev_reviews)
        return reports[END_TO_END].f1

    return evaluate
