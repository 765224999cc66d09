import numpy as np
import pytest

from attrlink.corpus import EmbeddingStore, MentionSpan
from attrlink.encoders import HashTextEmbedder, LexicalCrossScorer, ScoreTable, TextEmbedder
from attrlink.retrieval import (
    Candidate,
    CandidateSet,
    RetrievalConfig,
    RetrievalError,
    build_entity_text_store,
    read_candidates,
    recall_at_k,
    retrieve,
    top_k_cosine,
    write_candidates,
)
from attrlink.textnorm import build_prior_index

from conftest import make_entity, make_kb, make_review


def unit(values):
    vec = np.asarray(values, dtype=np.float64)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


class StubEmbedder(TextEmbedder):
    """Returns canned vectors per exact text; falls back to a fixed vector."""

    def __init__(self, dim, table):
        self.dim = dim
        self.table = {k: np.asarray(v, dtype=np.float32) for k, v in table.items()}

    def embed(self, text):
        default = np.zeros(self.dim, dtype=np.float32)
        default[0] = 1.0
        return self.table.get(text, default)


class TestTopKCosine:
    def test_exact_match_first(self, rng):
        store = EmbeddingStore(dim=8)
        target = unit(rng.normal(size=8))
        store.add("target", target)
        for i in range(10):
            store.add(f"other{i}", unit(rng.normal(size=8)))
        result = top_k_cosine(target.astype(np.float64), store, 3)
        assert result[0][0] == "target"
        assert result[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_k_larger_than_store(self, rng):
        store = EmbeddingStore(dim=4)
        for i in range(5):
            store.add(f"v{i}", unit(rng.normal(size=4)))
        assert len(top_k_cosine(np.ones(4), store, 50)) == 5

    def test_matches_brute_force_oracle(self, rng):
        store = EmbeddingStore(dim=64)
        for i in range(1000):
            store.add(f"v{i:04d}", rng.normal(size=64).astype(np.float32))
        query = rng.normal(size=64)
        keys, matrix, norms = store.dense()
        oracle_scores = matrix @ query / (norms * np.linalg.norm(query))
        oracle = sorted(zip(keys, oracle_scores), key=lambda kv: (-kv[1], kv[0]))[:25]
        assert [k for k, _ in top_k_cosine(query, store, 25)] == [k for k, _ in oracle]

    def test_tie_break_by_key(self):
        store = EmbeddingStore(dim=2)
        store.add("zzz", unit([1, 0]))
        store.add("aaa", unit([1, 0]))
        result = top_k_cosine(np.array([1.0, 0.0]), store, 2)
        assert [k for k, _ in result] == ["aaa", "zzz"]

    def test_dim_mismatch(self):
        store = EmbeddingStore(dim=4)
        store.add("a", unit([1, 0, 0, 0]))
        with pytest.raises(RetrievalError, match="dim"):
            top_k_cosine(np.ones(3), store, 1)


class TestRetrieve:
    def hand_setup(self):
        """Three candidates with channel scores A(0.9,0.1,0.2) B(0.5,0.9,0.9) C(0.7,0.5,0.5)."""
        dim = 4
        query = np.array([1.0, 0.0, 0.0, 0.0])

        def vec_for_cos(c):
            return np.array([c, np.sqrt(1 - c * c), 0.0, 0.0])

        entity_store = EmbeddingStore(dim=dim, normalized=True)
        entity_store.add("A", vec_for_cos(0.9).astype(np.float32))
        entity_store.add("B", vec_for_cos(0.5).astype(np.float32))
        entity_store.add("C", vec_for_cos(0.7).astype(np.float32))

        image_store = EmbeddingStore(dim=dim, normalized=True)
        image_store.add("ri", unit([1, 0, 0, 0]))
        for eid, c in (("A", 0.2), ("B", 0.9), ("C", 0.5)):
            image_store.add(f"img{eid}", vec_for_cos(c).astype(np.float32))

        cross = ScoreTable(scores={("r1", "A"): 0.1, ("r1", "B"): 0.9, ("r1", "C"): 0.5})
        kb = make_kb(
            make_entity("A", "Alpha", image_ids=["imgA"]),
            make_entity("B", "Beta", image_ids=["imgB"]),
            make_entity("C", "Gamma", image_ids=["imgC"]),
        )
        embedder = StubEmbedder(dim, {"query text": query})
        review = make_review("r1", "query text", image_ids=["ri"])
        return review, kb, entity_store, image_store, embedder, cross

    def test_hand_computed_fusion(self):
        review, kb, entity_store, image_store, embedder, cross = self.hand_setup()
        config = RetrievalConfig(stage1_k=3, final_k=3, w_text=0.5, w_cross=0.3, w_image=0.2, apply_prior_filter=False)
        result = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        assert result.entity_ids() == ["B", "C", "A"]
        by_id = {c.entity_id: c for c in result.candidates}
        # channel vectors pass through float32 storage, hence the 1e-6 bound
        assert by_id["A"].fused_score == pytest.approx(0.52, abs=1e-6)
        assert by_id["B"].fused_score == pytest.approx(0.70, abs=1e-6)
        assert by_id["C"].fused_score == pytest.approx(0.60, abs=1e-6)

    def test_text_only_weights_match_cosine_ranking(self):
        review, kb, entity_store, image_store, embedder, cross = self.hand_setup()
        config = RetrievalConfig(stage1_k=3, final_k=3, w_text=1.0, w_cross=0.0, w_image=0.0, apply_prior_filter=False)
        result = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        pure = top_k_cosine(embedder.embed(review.text), entity_store, 3)
        assert result.entity_ids() == [k for k, _ in pure]

    def test_prior_filter_drops_zero_prior_candidates(self):
        kb = make_kb(
            make_entity("A", "Acme Laptop 15", categories=["pc laptops"]),
            make_entity("B", "Acme Laptop 17", categories=["pc laptops"]),
            make_entity("Z", "Zeta Blender 9", categories=["blenders"]),
        )
        embedder = HashTextEmbedder(dim=128, seed=0)
        entity_store = build_entity_text_store(kb, embedder)
        prior_index = build_prior_index(kb)
        text = "my laptop works great"
        review = make_review(
            "r1", text, mention=MentionSpan("laptop", text.index("laptop"), text.index("laptop") + 6)
        )
        config = RetrievalConfig(stage1_k=3, final_k=3, apply_prior_filter=True)
        result = retrieve(review, kb, entity_store, EmbeddingStore(dim=4), embedder, LexicalCrossScorer(), prior_index, config)
        assert result.prior_filter_applied
        assert "Z" not in result.entity_ids()
        assert {"A", "B"} == set(result.entity_ids())

    def test_unknown_phrase_skips_filter(self):
        kb = make_kb(make_entity("A", "Acme Laptop 15", categories=["pc laptops"]))
        embedder = HashTextEmbedder(dim=128, seed=0)
        entity_store = build_entity_text_store(kb, embedder)
        prior_index = build_prior_index(kb)
        text = "the frobnicator hums"
        review = make_review("r1", text, mention=MentionSpan("frobnicator", 4, 15))
        config = RetrievalConfig(stage1_k=1, final_k=1, apply_prior_filter=True)
        result = retrieve(review, kb, entity_store, EmbeddingStore(dim=4), embedder, LexicalCrossScorer(), prior_index, config)
        assert not result.prior_filter_applied
        assert result.entity_ids() == ["A"]

    def test_missing_mention_skips_filter(self, caplog):
        kb = make_kb(make_entity("A", "Acme Laptop 15", categories=["pc laptops"]))
        embedder = HashTextEmbedder(dim=128, seed=0)
        entity_store = build_entity_text_store(kb, embedder)
        review = make_review("r1", "no mention here")
        config = RetrievalConfig(stage1_k=1, final_k=1, apply_prior_filter=True)
        with caplog.at_level("WARNING"):
            result = retrieve(
                review, kb, entity_store, EmbeddingStore(dim=4), embedder, LexicalCrossScorer(),
                build_prior_index(kb), config,
            )
        assert not result.prior_filter_applied
        assert "prior filter skipped" in caplog.text

    def test_filter_off_independent_of_prior_index(self):
        review, kb, entity_store, image_store, embedder, cross = self.hand_setup()
        config = RetrievalConfig(stage1_k=3, final_k=3, apply_prior_filter=False)
        with_index = retrieve(review, kb, entity_store, image_store, embedder, cross, build_prior_index(kb), config)
        without_index = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        assert with_index == without_index

    def test_deterministic(self):
        review, kb, entity_store, image_store, embedder, cross = self.hand_setup()
        config = RetrievalConfig(stage1_k=3, final_k=2, apply_prior_filter=False)
        first = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        second = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        assert first == second

    def test_gold_in_set_flag(self):
        review, kb, entity_store, image_store, embedder, cross = self.hand_setup()
        review.gold_entity_id = "B"
        config = RetrievalConfig(stage1_k=3, final_k=1, apply_prior_filter=False)
        result = retrieve(review, kb, entity_store, image_store, embedder, cross, None, config)
        assert result.gold_in_set is True

    def test_config_validation(self):
        with pytest.raises(RetrievalError):
            RetrievalConfig(w_text=0.0, w_cross=0.0, w_image=0.0)
        with pytest.raises(RetrievalError):
            RetrievalConfig(stage1_k=5, final_k=10)


class TestRecallAtK:
    def sets_with_gold_ranks(self, ranks, k_max=20):
        sets = []
        gold = {}
        for i, rank in enumerate(ranks):
            rid = f"r{i}"
            gold[rid] = "gold"
            candidates = []
            for pos in range(1, k_max + 1):
                entity_id = "gold" if pos == rank else f"filler{pos}"
                candidates.append(Candidate(entity_id, 0.0, 0.0, 0.0, float(k_max - pos)))
            sets.append(CandidateSet(review_id=rid, candidates=candidates))
        return sets, gold

    def test_hand_counts(self):
        sets, gold = self.sets_with_gold_ranks([1, 3, 12])
        recalls = recall_at_k(sets, gold, [10, 20])
        assert recalls[10] == pytest.approx(2 / 3)
        assert recalls[20] == pytest.approx(1.0)

    def test_always_rank_one(self):
        sets, gold = self.sets_with_gold_ranks([1, 1, 1, 1])
        assert recall_at_k(sets, gold, [1])[1] == 1.0

    def test_never_retrieved(self):
        sets, gold = self.sets_with_gold_ranks([0, 0])  # rank 0 never matches a position
        recalls = recall_at_k(sets, gold, [1, 10, 20])
        assert all(v == 0.0 for v in recalls.values())

    def test_monotone_in_k(self, rng):
        ranks = [int(r) for r in rng.integers(1, 30, size=40)]
        sets, gold = self.sets_with_gold_ranks(ranks, k_max=30)
        recalls = recall_at_k(sets, gold, [1, 5, 10, 20, 30])
        values = [recalls[k] for k in sorted(recalls)]
        assert values == sorted(values)
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_unknown_review_raises(self):
        sets, gold = self.sets_with_gold_ranks([1])
        del gold["r0"]
        with pytest.raises(RetrievalError, match="r0"):
            recall_at_k(sets, gold, [1])


def test_candidates_file_round_trip(tmp_path):
    cs = CandidateSet(
        review_id="r1",
        candidates=[Candidate("e1", 0.9, 0.5, 0.1, 0.62), Candidate("e2", 0.8, 0.2, 0.0, 0.4)],
        gold_in_set=True,
        prior_filter_applied=True,
    )
    path = tmp_path / "candidates.jsonl"
    write_candidates([cs], path)
    assert read_candidates(path) == [cs]
