"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; every tolerance is pinned here.
"""
import json
import time

import numpy as np

from attrlink.cli import main as cli_main
from attrlink.corpus import EmbeddingStore
from attrlink.disambig import AdapterParams, NliHeadParams, attributes_compatible
from attrlink.evalbench import (
    DISAMBIGUATION,
    SynthConfig,
    generate_synthetic,
    micro_f1,
    random_predictions,
    run_ablation,
)
from attrlink.optim import (
    TrainConfig,
    adapter_loss_and_grads,
    ce_loss,
    contrastive_loss,
    evaluate_adapter,
    grad_check,
    head_loss_and_grads,
    train_adapter,
    _adapter_to_dict,
    _head_to_dict,
)
from attrlink.retrieval import Candidate, CandidateSet, recall_at_k, top_k_cosine
from attrlink.textnorm import build_prior_index, extract_attributes

from conftest import make_entity, make_kb


def report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_oracle_retrieval_equivalence():
    """top_k_cosine matches brute-force full sort: 20 stores x 1000 vectors, dim 64."""
    started = time.time()
    rng = np.random.default_rng(2024)
    for trial in range(20):
        store = EmbeddingStore(dim=64)
        for i in range(1000):
            store.add(f"v{i:04d}", rng.normal(size=64).astype(np.float32))
        query = rng.normal(size=64)
        keys, matrix, norms = store.dense()
        scores = matrix @ query / (norms * np.linalg.norm(query))
        full_sort = sorted(zip(keys, scores), key=lambda kv: (-kv[1], kv[0]))
        for k in (1, 5, 25, 100):
            got = [key for key, _ in top_k_cosine(query, store, k)]
            expected = [key for key, _ in full_sort[:k]]
            assert got == expected, f"trial {trial}, k={k}"
    elapsed = time.time() - started
    report("oracle retrieval equivalence", elapsed < 5.0, f"{elapsed:.2f}s")


def test_prior_index_distributions_and_hand_example():
    """Priors sum to 1 within 1e-9 on 50 random KBs; the 3-entity hand count holds exactly."""
    rng = np.random.default_rng(99)
    words = ["alpha", "beta", "gamma", "delta", "omega", "kappa", "sigma", "zeta", "iota", "theta"]
    worst = 0.0
    for trial in range(50):
        entities = []
        for i in range(int(rng.integers(2, 15))):
            title = " ".join(rng.choice(words, size=int(rng.integers(1, 4)))).title()
            category = " ".join(rng.choice(words, size=int(rng.integers(1, 3))))
            entities.append(make_entity(f"e{i}", title, categories=[category]))
        index = build_prior_index(make_kb(*entities))
        assert index.phrase_counts, "randomized KB produced no phrases"
        for phrase in index.phrase_counts:
            worst = max(worst, abs(sum(index.entity_prior[phrase].values()) - 1.0))
            worst = max(worst, abs(sum(index.category_prior[phrase].values()) - 1.0))
    assert worst <= 1e-9

    kb = make_kb(
        make_entity("A", "Acme Laptop 15", categories=["catA"]),
        make_entity("B", "Acme Laptop 17", categories=["catB"]),
        make_entity("C", "Acme Phone", categories=["catC"]),
    )
    hand = build_prior_index(kb)
    assert hand.entity_prior["laptop"] == {"A": 0.5, "B": 0.5}
    report("prior index distributions + hand example", True, f"max sum deviation {worst:.2e}")


def test_loss_analytics():
    """ce(uniform, K=10) = ln 10 within 1e-12; contrastive B=1 = 0; uniform batch of 8 = ln 8 within 1e-9."""
    loss10, _ = ce_loss(np.zeros(10), 0)
    assert abs(loss10 - np.log(10)) <= 1e-12
    loss1, grad_r, grad_e = contrastive_loss(np.array([[0.6, 0.8]]), np.array([[1.0, 0.0]]))
    assert loss1 == 0.0
    reviews = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (8, 1))
    entities = np.tile(np.array([0.0, 0.0, 1.0, 0.0]), (8, 1))
    loss8, _, _ = contrastive_loss(reviews, entities)
    assert abs(loss8 - np.log(8)) <= 1e-9
    report("loss analytics", True, f"ln10 dev {abs(loss10 - np.log(10)):.1e}, ln8 dev {abs(loss8 - np.log(8)):.1e}")


def test_gradient_verification():
    """All four gradient paths within 1e-5 relative error, >= 50 probes, 64-bit, h=1e-4."""
    started = time.time()
    rng = np.random.default_rng(5)

    scores = rng.normal(size=50)
    err_ce = grad_check(lambda theta: ce_loss(theta, 7), scores, probe_count=50, h=1e-4)

    b, d = 8, 12
    reviews, entities = rng.normal(size=(b, d)), rng.normal(size=(b, d))

    def contrastive_fn(theta):
        r = theta[: b * d].reshape(b, d)
        e = theta[b * d :].reshape(b, d)
        loss, gr, ge = contrastive_loss(r, e)
        return loss, np.concatenate([gr.ravel(), ge.ravel()])

    err_con = grad_check(contrastive_fn, np.concatenate([reviews.ravel(), entities.ravel()]),
                         probe_count=96, h=1e-4)

    head_template = _head_to_dict(NliHeadParams.init(hidden=16, seed=0))
    head_keys = sorted(head_template)
    head_instances = [(rng.normal(size=(6, 6)), int(rng.integers(6))) for _ in range(8)]

    def pack(state, keys):
        return np.concatenate([np.asarray(state[key], dtype=np.float64).ravel() for key in keys])

    def unpack(theta, template, keys):
        out, offset = {}, 0
        for key in keys:
            shape = np.asarray(template[key]).shape
            size = int(np.prod(shape)) if shape else 1
            out[key] = theta[offset : offset + size].reshape(shape)
            offset += size
        return out

    def head_fn(theta):
        loss, grads = head_loss_and_grads(head_instances, unpack(theta, head_template, head_keys))
        return loss, pack(grads, head_keys)

    err_head = grad_check(head_fn, pack(head_template, head_keys), probe_count=80, h=1e-4)

    adapter_template = _adapter_to_dict(AdapterParams.init(10, seed=0))
    adapter_keys = sorted(adapter_template)
    batch_r, batch_e = rng.normal(size=(6, 10)), rng.normal(size=(6, 10))

    def adapter_fn(theta):
        loss, grads = adapter_loss_and_grads(batch_r, batch_e, unpack(theta, adapter_template, adapter_keys))
        return loss, pack(grads, adapter_keys)

    err_adapter = grad_check(adapter_fn, pack(adapter_template, adapter_keys), probe_count=80, h=1e-4)

    elapsed = time.time() - started
    worst = max(err_ce, err_con, err_head, err_adapter)
    report(
        "gradient verification",
        worst < 1e-5 and elapsed < 10.0,
        f"max rel err {worst:.2e} in {elapsed:.2f}s",
    )


def test_adapter_training_rotated_task():
    """Rotated-embedding task: accuracy <= 0.5 untrained, >= 0.95 trained, dev loss non-increasing."""
    started = time.time()
    rng = np.random.default_rng(42)
    dim = 16
    rotation, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    reviews = rng.normal(size=(500, dim))
    reviews /= np.linalg.norm(reviews, axis=1, keepdims=True)
    pairs = list(zip(reviews, reviews @ rotation.T))

    config = TrainConfig(epochs=30, seed=3, batch_size=32)
    initial = AdapterParams.init(dim, hidden=2 * dim, seed=config.seed)
    initial_loss, initial_acc = evaluate_adapter(pairs, initial, config.batch_size)
    trained, train_report = train_adapter(pairs, config, params=initial.copy(), hidden=2 * dim)
    final_loss, final_acc = evaluate_adapter(pairs, trained, config.batch_size)
    elapsed = time.time() - started

    ok = initial_acc <= 0.5 and final_acc >= 0.95 and final_loss <= initial_loss and elapsed < 60.0
    report(
        "adapter training",
        ok,
        f"acc {initial_acc:.3f}->{final_acc:.3f}, dev loss {initial_loss:.3f}->{final_loss:.3f}, {elapsed:.1f}s",
    )


def test_metric_fixture():
    """micro_f1 hand fixture exact within 1e-9; recall@k on ranks [1,3,12]."""
    gold = {f"r{i}": "gold" for i in range(5)}
    predictions = {"r0": "gold", "r1": "gold", "r2": "gold", "r3": "wrong", "r4": None}
    result = micro_f1(predictions, gold)
    assert abs(result.precision - 0.75) <= 1e-9
    assert abs(result.recall - 0.6) <= 1e-9
    assert abs(result.f1 - 2 * 0.75 * 0.6 / 1.35) <= 1e-9

    sets, gold_map = [], {}
    for i, rank in enumerate([1, 3, 12]):
        rid = f"q{i}"
        gold_map[rid] = "g"
        candidates = [
            Candidate("g" if pos == rank else f"f{pos}", 0, 0, 0, float(20 - pos)) for pos in range(1, 21)
        ]
        sets.append(CandidateSet(review_id=rid, candidates=candidates))
    recalls = recall_at_k(sets, gold_map, [10, 20])
    assert abs(recalls[10] - 2 / 3) <= 1e-9
    assert recalls[20] == 1.0
    report("metric fixture", True, f"F1={result.f1:.6f}, R@10={recalls[10]:.4f}, R@20={recalls[20]:.1f}")


def test_random_baseline_calibration():
    """Random choice among 10 candidates over 10,000 instances: disambiguation F1 = 0.10 +/- 0.02."""
    rng = np.random.default_rng(314)
    sets, gold = [], {}
    for i in range(10_000):
        rid = f"r{i}"
        ids = [f"e{i}_{j}" for j in range(10)]
        gold[rid] = ids[int(rng.integers(10))]
        sets.append(
            CandidateSet(review_id=rid, candidates=[Candidate(e, 0, 0, 0, 0) for e in ids], gold_in_set=True)
        )
    predictions = random_predictions(sets, seed=6)
    result = micro_f1(predictions, gold, DISAMBIGUATION, {s.review_id: s for s in sets})
    ok = abs(result.f1 - 0.10) <= 0.02
    report("random-baseline calibration", ok, f"F1={result.f1:.4f}")


def test_ablation_direction():
    """Sibling-group corpus: full beats w/o_attribute by >= 10 F1 points; e2e <= dis everywhere."""
    started = time.time()
    config = SynthConfig(
        n_categories=10,
        entities_per_category=40,
        sibling_group_size=4,
        attributes_per_entity=4,
        n_reviews=600,
        review_attribute_mentions=2,
        image_noise_sigma=0.2,
        seed=11,
    )
    corpus = generate_synthetic(config)
    rows = run_ablation(corpus.kb, corpus.reviews, corpus.images)
    by_variant = {row.variant: row for row in rows}
    gap = by_variant["full"].disambiguation_f1 - by_variant["w/o_attribute"].disambiguation_f1
    ordering_ok = all(row.end_to_end_f1 <= row.disambiguation_f1 + 1e-12 for row in rows)
    elapsed = time.time() - started
    ok = gap >= 0.10 and ordering_ok and elapsed < 300.0
    detail = ", ".join(f"{r.variant}={r.disambiguation_f1:.3f}" for r in rows)
    report("ablation direction", ok, f"gap={gap:.3f}, {detail}, {elapsed:.1f}s")


def test_attribute_filter_safety():
    """1,000 planted reviews with gold-derived attributes: the filter never removes gold."""
    config = SynthConfig(
        n_categories=8,
        entities_per_category=24,
        sibling_group_size=4,
        attributes_per_entity=4,
        n_reviews=1000,
        review_attribute_mentions=3,
        image_noise_sigma=0.1,
        seed=23,
    )
    corpus = generate_synthetic(config)
    removed = 0
    for review in corpus.reviews:
        gold = corpus.kb.get(review.gold_entity_id)
        extracted = extract_attributes(review, corpus.kb).pairs
        if not attributes_compatible(gold, extracted):
            removed += 1
    report("attribute-filter safety", removed == 0, f"{removed} of {len(corpus.reviews)} removed")


def test_full_chain_determinism(tmp_path):
    """The CLI chain run twice with one seed yields byte-identical predictions and metrics."""
    config = {
        "synth": {"n_categories": 2, "entities_per_category": 8, "sibling_group_size": 4, "n_reviews": 50},
        "train": {"learning_rate": 0.01, "batch_size": 16, "epochs": 4, "optimizer": "adam"},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")

    def run_chain(base):
        corpus = base / "corpus"
        steps = [
            ["synth", "--out", corpus],
            ["priors", "--kb", corpus / "entities.jsonl", "--out", base / "priors"],
            ["mentions", "--kb", corpus / "entities.jsonl", "--reviews", corpus / "reviews.jsonl",
             "--out", base / "mentions"],
            ["filter", "--kb", corpus / "entities.jsonl", "--reviews", base / "mentions" / "reviews.jsonl",
             "--images", corpus / "images.amev", "--out", base / "filtered"],
            ["retrieve", "--kb", corpus / "entities.jsonl", "--reviews", base / "filtered" / "reviews.jsonl",
             "--images", corpus / "images.amev", "--priors", base / "priors" / "priors.jsonl",
             "--out", base / "retrieved"],
            ["train-adapter", "--kb", corpus / "entities.jsonl", "--reviews", base / "filtered" / "reviews.jsonl",
             "--images", corpus / "images.amev", "--out", base / "adapter"],
            ["train-head", "--kb", corpus / "entities.jsonl", "--reviews", base / "filtered" / "reviews.jsonl",
             "--candidates", base / "retrieved" / "candidates.jsonl",
             "--priors", base / "priors" / "priors.jsonl", "--out", base / "head"],
            ["link", "--kb", corpus / "entities.jsonl", "--reviews", base / "filtered" / "reviews.jsonl",
             "--candidates", base / "retrieved" / "candidates.jsonl",
             "--priors", base / "priors" / "priors.jsonl", "--head", base / "head" / "head.amev",
             "--adapter", base / "adapter" / "adapter.amev", "--images", corpus / "images.amev",
             "--out", base / "linked"],
            ["eval", "--predictions", base / "linked" / "predictions.jsonl",
             "--candidates", base / "retrieved" / "candidates.jsonl",
             "--reviews", base / "filtered" / "reviews.jsonl", "--setting", "both", "--out", base / "evaled"],
        ]
        for step in steps:
            code = cli_main(["--config", str(config_path), "--seed", "5", *[str(a) for a in step]])
            assert code == 0, f"chain step failed: {step}"
        return base

    first = run_chain(tmp_path / "one")
    second = run_chain(tmp_path / "two")
    predictions_match = (
        (first / "linked" / "predictions.jsonl").read_bytes()
        == (second / "linked" / "predictions.jsonl").read_bytes()
    )
    metrics_match = (
        (first / "evaled" / "metrics.json").read_bytes() == (second / "evaled" / "metrics.json").read_bytes()
    )
    report("full-chain determinism", predictions_match and metrics_match)
