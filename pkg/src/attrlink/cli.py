"""Command-line pipeline: one executable, subcommand per stage, JSON config file
with flag overrides, and a ``run.json`` provenance record per run.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    load_kb,
    load_reviews,
    read_embeddings,
    write_jsonl,
)
from .disambig import (
    FusionConfig,
    fuse_and_predict,
    image_score,
    load_adapter,
    load_head,
    nli_scores,
    save_adapter,
    save_head,
    candidate_features,
)
from .encoders import (
    HashTextEmbedder,
    LexicalCrossScorer,
    LexicalEntailmentScorer,
    load_scored_pairs,
)
from .evalbench import (
    DISAMBIGUATION,
    END_TO_END,
    PipelineConfig,
    SynthConfig,
    dev_f1_eval_fn,
    generate_synthetic,
    grid_search,
    micro_f1,
    prepare_pipeline,
    run_ablation,
    split,
)
from .mining import FilterThresholds, detect_mention, filter_reviews
from .optim import TrainConfig, train_adapter, train_nli_head
from .retrieval import (
    RetrievalConfig,
    build_entity_text_store,
    read_candidates,
    recall_at_k,
    retrieve,
    write_candidates,
)
from .textnorm import PriorIndex, build_prior_index, extract_attributes, load_stopwords
from .disambig import write_predictions, read_predictions

logger = logging.getLogger("attrlink")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "embedder": {"dim": 256, "seed": 0},
    "retrieval": {
        "stage1_k": 1000,
        "final_k": 10,
        "w_text": 1.0 / 3.0,
        "w_cross": 1.0 / 3.0,
        "w_image": 1.0 / 3.0,
        "apply_prior_filter": True,
    },
    "fusion": {"lambda": 0.5, "apply_attribute_filter": True},
    "thresholds": {
        "min_attribute_count": 0.0,
        "min_image_sim": 0.35,
        "min_description_sim": 0.35,
        "min_title_sim": 0.35,
    },
    "train": {"learning_rate": 0.01, "batch_size": 32, "epochs": 30, "optimizer": "adam"},
    "split": {"ratios": [0.75, 0.10, 0.15]},
    "synth": {
        "n_categories": 5,
        "entities_per_category": 20,
        "sibling_group_size": 4,
        "attributes_per_entity": 4,
        "n_reviews": 200,
        "review_attribute_mentions": 2,
        "image_noise_sigma": 0.1,
        "image_dim": 32,
    },
    "max_review_tokens": 500,
    "stopwords": None,
}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return _merge(DEFAULT_CONFIG, raw)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def _write_metrics(out_dir: Path, config: dict, reports: dict | None = None, ablation: list | None = None) -> None:
    payload: dict = {"config_hash": _config_hash(config)}
    if reports is not None:
        payload["reports"] = reports
    if ablation is not None:
        payload["ablation"] = ablation
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_run_record(out_dir: Path, command: str, config: dict, inputs, outputs) -> None:
    record = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": config.get("seed"),
        "versions": {
            "attrlink": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "input_digests": {str(p): _sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": sorted(str(o) for o in outputs),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stopwords(config):
    return load_stopwords(config["stopwords"]) if config.get("stopwords") else None


def _embedder(config) -> HashTextEmbedder:
    return HashTextEmbedder(dim=int(config["embedder"]["dim"]), seed=int(config["embedder"]["seed"]))


def _retrieval_config(config) -> RetrievalConfig:
    section = config["retrieval"]
    return RetrievalConfig(
        stage1_k=int(section["stage1_k"]),
        final_k=int(section["final_k"]),
        w_text=float(section["w_text"]),
        w_cross=float(section["w_cross"]),
        w_image=float(section["w_image"]),
        apply_prior_filter=bool(section["apply_prior_filter"]),
    )


def _fusion_config(config) -> FusionConfig:
    section = config["fusion"]
    return FusionConfig(
        fusion_lambda=float(section["lambda"]),
        apply_attribute_filter=bool(section["apply_attribute_filter"]),
    )


def _train_config(config) -> TrainConfig:
    section = config["train"]
    return TrainConfig(
        learning_rate=float(section["learning_rate"]),
        batch_size=int(section["batch_size"]),
        epochs=int(section["epochs"]),
        seed=int(config["seed"]),
        optimizer=str(section["optimizer"]),
    )


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_reviews_sorted(path, max_tokens: int):
    kept, dropped = load_reviews(path, max_tokens)
    return sorted(kept, key=lambda r: r.review_id), dropped


# --- subcommands ---


def cmd_synth(args, config) -> int:
    out = _out_dir(args)
    section = dict(config["synth"])
    corpus = generate_synthetic(SynthConfig(seed=int(config["seed"]), **section))
    corpus.write(out)
    logger.info("synth: %d entities, %d reviews -> %s", len(corpus.kb), len(corpus.reviews), out)
    _write_run_record(out, "synth", config, [], ["entities.jsonl", "reviews.jsonl", "images.amev", "gold.jsonl"])
    return 0


def cmd_ingest(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    kept, dropped = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    write_jsonl((e.to_json() for e in kb), out / "entities.jsonl")
    write_jsonl((r.to_json() for r in kept), out / "reviews.jsonl")
    write_jsonl(({**r.to_json(), "reason": "too_long"} for r in dropped), out / "rejected.jsonl")
    report = {"entities": len(kb), "reviews_kept": len(kept), "reviews_dropped": len(dropped)}
    (out / "ingest_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("ingest: %s", report)
    _write_run_record(out, "ingest", config, [args.kb, args.reviews],
                      ["entities.jsonl", "reviews.jsonl", "rejected.jsonl", "ingest_report.json"])
    return 0


def cmd_priors(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    index = build_prior_index(kb, _stopwords(config))
    index.save(out / "priors.jsonl")
    logger.info("priors: %d phrases", len(index.phrase_counts))
    _write_run_record(out, "priors", config, [args.kb], ["priors.jsonl"])
    return 0


def cmd_mentions(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    embedder = _embedder(config)
    stopwords = _stopwords(config)

    def process(review):
        mention = review.mention
        if mention is None and review.gold_entity_id is not None and review.gold_entity_id in kb:
            mention = detect_mention(review, kb.get(review.gold_entity_id), embedder, stopwords)
        extracted = extract_attributes(review, kb, stopwords)
        return replace(review, mention=mention, extracted_attributes=extracted.pairs)

    processed = _parallel_map(process, reviews, int(config["jobs"]))
    kept = [r for r in processed if r.mention is not None]
    rejected = [r for r in processed if r.mention is None]
    write_jsonl((r.to_json() for r in kept), out / "reviews.jsonl")
    write_jsonl(({**r.to_json(), "reason": "no_mention"} for r in rejected), out / "rejected.jsonl")
    logger.info("mentions: %d kept, %d without mention", len(kept), len(rejected))
    _write_run_record(out, "mentions", config, [args.kb, args.reviews], ["reviews.jsonl", "rejected.jsonl"])
    return 0


def cmd_filter(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    images = read_embeddings(args.images)
    section = config["thresholds"]
    thresholds = FilterThresholds(
        min_attribute_count=float(section["min_attribute_count"]),
        min_image_sim=float(section["min_image_sim"]),
        min_description_sim=float(section["min_description_sim"]),
        min_title_sim=float(section["min_title_sim"]),
    )
    embedder = _embedder(config)
    stopwords = _stopwords(config)

    def process(review):
        return filter_reviews(
            [review], kb, thresholds, embedder, images,
            conjunctive=bool(args.conjunctive), stopwords=stopwords,
        )

    kept: list = []
    dropped: list = []
    for kept_one, dropped_one in _parallel_map(process, reviews, int(config["jobs"])):
        kept.extend(kept_one)
        dropped.extend(dropped_one)
    write_jsonl((r.to_json() for r in kept), out / "reviews.jsonl")
    write_jsonl(({**r.to_json(), "reason": "uninformative"} for r in dropped), out / "rejected.jsonl")
    logger.info("filter: %d kept, %d uninformative", len(kept), len(dropped))
    _write_run_record(out, "filter", config, [args.kb, args.reviews, args.images], ["reviews.jsonl", "rejected.jsonl"])
    return 0


def cmd_retrieve(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    images = read_embeddings(args.images)
    prior_index = PriorIndex.load(args.priors) if args.priors else None
    embedder = _embedder(config)
    entity_store = read_embeddings(args.entity_text) if args.entity_text else build_entity_text_store(kb, embedder)
    review_store = read_embeddings(args.review_text) if args.review_text else None
    cross = load_scored_pairs(args.cross_scores) if args.cross_scores else LexicalCrossScorer()
    retrieval_config = _retrieval_config(config)

    def process(review):
        review_vec = review_store.get(review.review_id) if review_store is not None else None
        return retrieve(review, kb, entity_store, images, embedder, cross, prior_index, retrieval_config, review_vec)

    candidate_sets = _parallel_map(process, reviews, int(config["jobs"]))
    write_candidates(candidate_sets, out / "candidates.jsonl")
    gold_map = {r.review_id: r.gold_entity_id for r in reviews if r.gold_entity_id is not None}
    if gold_map:
        with_gold = [cs for cs in candidate_sets if cs.review_id in gold_map]
        ks = [k for k in (1, 10, 20, 50, 100) if k <= retrieval_config.final_k]
        recalls = recall_at_k(with_gold, gold_map, ks)
        (out / "recall.json").write_text(
            json.dumps({str(k): v for k, v in recalls.items()}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        logger.info("retrieve: recalls %s", recalls)
    inputs = [args.kb, args.reviews, args.images] + [p for p in (args.priors, args.entity_text, args.review_text, args.cross_scores) if p]
    _write_run_record(out, "retrieve", config, inputs, ["candidates.jsonl"])
    return 0


def cmd_train_adapter(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    images = read_embeddings(args.images)
    ratios = tuple(config["split"]["ratios"])
    train_reviews, dev_reviews, _ = split(reviews, ratios, seed=int(config["seed"]))

    def pairs(subset):
        out_pairs = []
        for review in subset:
            if review.first_image_id is None or review.gold_entity_id is None or review.gold_entity_id not in kb:
                continue
            gold_image_id = kb.get(review.gold_entity_id).first_image_id
            review_vec = images.get(review.first_image_id)
            gold_vec = images.get(gold_image_id) if gold_image_id else None
            if review_vec is not None and gold_vec is not None:
                out_pairs.append((review_vec.astype(np.float64), gold_vec.astype(np.float64)))
        return out_pairs

    train_config = _train_config(config)
    params, report = train_adapter(pairs(train_reviews), train_config, dev_pairs=pairs(dev_reviews) or None)
    save_adapter(params, out / "adapter.amev", out / "adapter.amev.shapes.json")
    report.to_csv(out / "adapter_report.csv")
    logger.info("train-adapter: %d epochs, final dev loss %s", len(report.dev_loss), report.dev_loss[-1] if report.dev_loss else None)
    _write_run_record(out, "train-adapter", config, [args.kb, args.reviews, args.images],
                      ["adapter.amev", "adapter.amev.shapes.json", "adapter_report.csv"])
    return 0


def _review_features(review, candidate_set, kb, scorer, prior_index):
    ids = candidate_set.entity_ids()
    matrix = np.zeros((len(ids), 6), dtype=np.float64)
    for row, entity_id in enumerate(ids):
        matrix[row] = candidate_features(review, kb.get(entity_id), scorer, prior_index).as_array()
    return ids, matrix


def cmd_train_head(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    candidate_sets = {cs.review_id: cs for cs in read_candidates(args.candidates)}
    prior_index = PriorIndex.load(args.priors) if args.priors else None
    scorer = LexicalEntailmentScorer()
    ratios = tuple(config["split"]["ratios"])
    train_reviews, dev_reviews, _ = split(reviews, ratios, seed=int(config["seed"]))

    def instances(subset):
        out_instances = []
        for review in subset:
            cs = candidate_sets.get(review.review_id)
            if cs is None or review.gold_entity_id is None:
                continue
            ids, matrix = _review_features(review, cs, kb, scorer, prior_index)
            if review.gold_entity_id in ids:
                out_instances.append((matrix, ids.index(review.gold_entity_id)))
        return out_instances

    train_config = _train_config(config)
    params, report = train_nli_head(instances(train_reviews), train_config, dev_dataset=instances(dev_reviews) or None)
    save_head(params, out / "head.amev", out / "head.amev.shapes.json")
    report.to_csv(out / "head_report.csv")
    logger.info("train-head: %d epochs, final dev acc %s", len(report.dev_accuracy), report.dev_accuracy[-1] if report.dev_accuracy else None)
    inputs = [args.kb, args.reviews, args.candidates] + ([args.priors] if args.priors else [])
    _write_run_record(out, "train-head", config, inputs, ["head.amev", "head.amev.shapes.json", "head_report.csv"])
    return 0


def cmd_link(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    candidate_sets = {cs.review_id: cs for cs in read_candidates(args.candidates)}
    prior_index = PriorIndex.load(args.priors) if args.priors else None
    images = read_embeddings(args.images) if args.images else None
    head = load_head(args.head, f"{args.head}.shapes.json")
    adapter = load_adapter(args.adapter, f"{args.adapter}.shapes.json") if args.adapter else None
    scorer = LexicalEntailmentScorer()
    fusion = _fusion_config(config)

    linked = [r for r in reviews if r.review_id in candidate_sets]

    def process(review):
        cs = candidate_sets[review.review_id]
        ids, matrix = _review_features(review, cs, kb, scorer, prior_index)
        scores = nli_scores(matrix, head) if ids else np.zeros(0)
        text_scores = dict(zip(ids, (float(s) for s in scores)))
        review_vec = images.get(review.first_image_id) if images is not None and review.first_image_id else None
        image_scores: dict[str, float | None] = {}
        for entity_id in ids:
            entity = kb.get(entity_id)
            entity_vec = images.get(entity.first_image_id) if images is not None and entity.first_image_id else None
            if review_vec is None or entity_vec is None or adapter is None:
                image_scores[entity_id] = None
            else:
                image_scores[entity_id] = image_score(review_vec, entity_vec, adapter)
        return fuse_and_predict(cs, text_scores, image_scores, fusion, review.extracted_attributes, kb)

    predictions = _parallel_map(process, linked, int(config["jobs"]))
    write_predictions(predictions, out / "predictions.jsonl")

    gold_map = {r.review_id: r.gold_entity_id for r in linked if r.gold_entity_id is not None}
    metrics = {}
    if gold_map:
        flat = {p.review_id: p.prediction for p in predictions if p.review_id in gold_map}
        metrics = {
            END_TO_END: micro_f1(flat, gold_map, END_TO_END).to_json(),
            DISAMBIGUATION: micro_f1(flat, gold_map, DISAMBIGUATION, candidate_sets).to_json(),
        }
        _write_metrics(out, config, reports=metrics)
        logger.info("link: %s", {k: round(v["f1"], 4) for k, v in metrics.items()})
    inputs = [args.kb, args.reviews, args.candidates, args.head] + [
        p for p in (args.priors, args.images, args.adapter) if p
    ]
    outputs = ["predictions.jsonl"] + (["metrics.json"] if metrics else [])
    _write_run_record(out, "link", config, inputs, outputs)
    return 0


def cmd_eval(args, config) -> int:
    out = _out_dir(args)
    predictions = read_predictions(args.predictions)
    if args.gold:
        gold_map = {}
        with Path(args.gold).open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    record = json.loads(line)
                    gold_map[record["review_id"]] = record["entity_id"]
    elif args.reviews:
        reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
        gold_map = {r.review_id: r.gold_entity_id for r in reviews if r.gold_entity_id is not None}
    else:
        raise ValueError("eval needs --gold or --reviews to supply gold labels")
    predictions = {rid: p for rid, p in predictions.items() if rid in gold_map}
    settings = [args.setting] if args.setting != "both" else [END_TO_END, DISAMBIGUATION]
    candidate_sets = None
    if DISAMBIGUATION in settings:
        if not args.candidates:
            raise ValueError("--candidates is required for the disambiguation setting")
        candidate_sets = {cs.review_id: cs for cs in read_candidates(args.candidates)}
    metrics = {s: micro_f1(predictions, gold_map, s, candidate_sets).to_json() for s in settings}
    _write_metrics(out, config, reports=metrics)
    for setting, report in metrics.items():
        logger.info("eval %s: P=%.4f R=%.4f F1=%.4f", setting, report["precision"], report["recall"], report["f1"])
    inputs = [args.predictions] + [p for p in (args.candidates, args.gold, args.reviews) if p]
    _write_run_record(out, "eval", config, inputs, ["metrics.json"])
    return 0


def _pipeline_config(config) -> PipelineConfig:
    return PipelineConfig(
        embed_dim=int(config["embedder"]["dim"]),
        seed=int(config["seed"]),
        retrieval=_retrieval_config(config),
        fusion=_fusion_config(config),
        train=_train_config(config),
        split_ratios=tuple(config["split"]["ratios"]),
    )


def cmd_ablate(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    images = read_embeddings(args.images)
    rows = run_ablation(kb, reviews, images, _pipeline_config(config))
    table = [row.to_json() for row in rows]
    _write_metrics(out, config, ablation=table)
    for row in rows:
        logger.info("ablate %-16s disambiguation=%.4f end_to_end=%.4f", row.variant, row.disambiguation_f1, row.end_to_end_f1)
    _write_run_record(out, "ablate", config, [args.kb, args.reviews, args.images], ["metrics.json"])
    return 0


def cmd_gridsearch(args, config) -> int:
    out = _out_dir(args)
    kb = load_kb(args.kb)
    reviews, _ = _load_reviews_sorted(args.reviews, int(config["max_review_tokens"]))
    images = read_embeddings(args.images)
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    prepared = prepare_pipeline(kb, reviews, images, _pipeline_config(config))
    best, rows = grid_search(grid, dev_f1_eval_fn(prepared))
    result = {"best": best, "rows": [{"config": c, "dev_end_to_end_f1": s} for c, s in rows]}
    (out / "gridsearch.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("gridsearch: best %s", best)
    _write_run_record(out, "gridsearch", config, [args.kb, args.reviews, args.images, args.grid], ["gridsearch.json"])
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="attrlink", description="Attribute-aware multimodal entity linking pipeline")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="master seed for all randomness")
    parser.add_argument("--jobs", type=int, help="worker parallelism for per-review stages")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        for flag, options in flags.items():
            p.add_argument(f"--{flag}", **options)
        return p

    req = {"required": True}
    opt = {"required": False, "default": None}
    add("synth", cmd_synth, out=req)
    add("ingest", cmd_ingest, kb=req, reviews=req, out=req)
    add("priors", cmd_priors, kb=req, out=req)
    add("mentions", cmd_mentions, kb=req, reviews=req, out=req)
    p = add("filter", cmd_filter, kb=req, reviews=req, images=req, out=req)
    p.add_argument("--conjunctive", action="store_true", help="keep only when all four features pass")
    add(
        "retrieve",
        cmd_retrieve,
        kb=req,
        reviews=req,
        images=req,
        out=req,
        priors=opt,
        **{"entity-text": opt, "review-text": opt, "cross-scores": opt},
    )
    add("train-adapter", cmd_train_adapter, kb=req, reviews=req, images=req, out=req)
    add("train-head", cmd_train_head, kb=req, reviews=req, candidates=req, out=req, priors=opt)
    add(
        "link",
        cmd_link,
        kb=req,
        reviews=req,
        candidates=req,
        head=req,
        out=req,
        priors=opt,
        images=opt,
        adapter=opt,
    )
    p = add("eval", cmd_eval, predictions=req, out=req, candidates=opt, reviews=opt, gold=opt)
    p.add_argument("--setting", choices=[END_TO_END, DISAMBIGUATION, "both"], default="both")
    add("ablate", cmd_ablate, kb=req, reviews=req, images=req, out=req)
    add("gridsearch", cmd_gridsearch, kb=req, reviews=req, images=req, grid=req, out=req)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
            config["embedder"]["seed"] = args.seed
        if args.jobs is not None:
            config["jobs"] = args.jobs
        return args.func(args, config)
    except (OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
