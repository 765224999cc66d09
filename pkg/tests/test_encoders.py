import numpy as np
import pytest

from attrlink.encoders import (
    EncoderError,
    HashTextEmbedder,
    LexicalCrossScorer,
    LexicalEntailmentScorer,
    ScoreTable,
    StoreImageEmbedder,
    attribute_hypothesis,
    cosine,
    hash_embed,
    lexical_cross_score,
    lexical_entailment,
    load_scored_pairs,
    write_scored_pairs,
)
from attrlink.corpus import EmbeddingStore


class TestHashEmbed:
    def test_identical_texts_cosine_one(self):
        a = hash_embed("Great ASUS laptop with 16gb", 256, 0)
        b = hash_embed("Great ASUS laptop with 16gb", 256, 0)
        assert cosine(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_empty_text_is_first_basis_vector(self):
        vec = hash_embed("", 256, 0)
        expected = np.zeros(256, dtype=np.float32)
        expected[0] = 1.0
        assert np.array_equal(vec, expected)

    def test_disjoint_vocabulary_near_orthogonal(self):
        # Frozen for dim=256, seed=0: these ten features collide in no bucket.
        a = hash_embed("alpha beta gamma delta epsilon", 256, 0)
        b = hash_embed("omega sigma theta kappa zeta", 256, 0)
        value = cosine(a, b)
        assert abs(value) < 0.2
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_unit_norm(self, rng):
        texts = ["one", "two words", "three little words", "", "a b c d e f g", "16GB ram!"]
        for text in texts:
            assert np.linalg.norm(hash_embed(text, 128, 3).astype(np.float64)) == pytest.approx(1.0, abs=1e-5)

    def test_dim_must_be_power_of_two(self):
        with pytest.raises(EncoderError):
            hash_embed("x", 100, 0)
        with pytest.raises(EncoderError):
            hash_embed("x", 32, 0)

    def test_embedder_caches_consistently(self):
        embedder = HashTextEmbedder(dim=128, seed=1)
        first = embedder.embed("stable output")
        second = embedder.embed("stable output")
        assert np.array_equal(first, second)
        assert embedder.dim == 128


class TestLexicalCrossScore:
    def test_subset_scores_one(self):
        assert lexical_cross_score("gas range", "premium gas range cooker") == 1.0

    def test_disjoint_scores_zero(self):
        assert lexical_cross_score("phone case", "gas range") == 0.0

    def test_half_contained(self):
        assert lexical_cross_score("one two three four", "two words and four") == 0.5

    def test_scorer_class(self):
        assert LexicalCrossScorer().score("a b", "a b c") == 1.0
        assert LexicalCrossScorer.keyed_by_id is False


class TestAttributeHypothesis:
    def test_paper_example(self):
        assert attribute_hypothesis("bag", "color", "pink") == "the color of this bag is pink"

    def test_lowercased(self):
        assert attribute_hypothesis("Laptop", "System Memory", "16GB") == "the system memory of this laptop is 16gb"

    def test_template(self):
        assert attribute_hypothesis("tv", "brand", "acme") == "the brand of this tv is acme"

    def test_empty_inputs_rejected(self):
        with pytest.raises(EncoderError):
            attribute_hypothesis("", "color", "pink")
        with pytest.raises(EncoderError):
            attribute_hypothesis("bag", " ", "pink")


class TestLexicalEntailment:
    def test_value_present(self):
        hypothesis = attribute_hypothesis("bag", "color", "pink")
        assert lexical_entailment("bag", "it is more of a light pink", hypothesis) == 1.0

    def test_value_absent(self):
        hypothesis = attribute_hypothesis("bag", "color", "black")
        assert lexical_entailment("bag", "a lovely pink tote", hypothesis) == 0.0

    def test_fractional(self):
        hypothesis = attribute_hypothesis("bag", "color", "gray pink")
        assert lexical_entailment("bag", "only pink here", hypothesis) == 0.5

    def test_monotone_in_added_tokens(self):
        hypothesis = attribute_hypothesis("bag", "color", "gray pink")
        base = "a nice tote"
        partial = base + " pink"
        full = partial + " gray"
        scores = [lexical_entailment("bag", t, hypothesis) for t in (base, partial, full)]
        assert scores[0] <= scores[1] <= scores[2]

    def test_free_text_hypothesis_scored_whole(self):
        score = lexical_entailment("bag", "sturdy canvas tote", "The sturdy canvas tote everyone loves")
        assert 0.0 < score <= 1.0

    def test_scorer_class(self):
        scorer = LexicalEntailmentScorer()
        assert scorer.score("bag", "pink bag", attribute_hypothesis("bag", "color", "pink")) == 1.0


class TestScoreTable:
    def test_lookup_and_default(self, tmp_path):
        table = ScoreTable(scores={("r1", "e1"): 0.9})
        assert table.score("r1", "e1") == 0.9
        assert table.score("r1", "missing") == 0.0
        assert table.keyed_by_id

    def test_round_trip(self, tmp_path):
        table = ScoreTable(scores={("r1", "e1"): 0.25, ("r2", "e9"): -1.5})
        path = tmp_path / "scores.jsonl"
        write_scored_pairs(table, path)
        loaded = load_scored_pairs(path)
        assert loaded.scores == table.scores

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text('{"left_key": "a", "right_key": "b", "score": 1.0}\n{"nope": 1}\n', encoding="utf-8")
        with pytest.raises(EncoderError, match=":2"):
            load_scored_pairs(path)

    def test_custom_default(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text("", encoding="utf-8")
        table = load_scored_pairs(path, default=-1.0)
        assert table.score("x", "y") == -1.0


def test_table_entailment_scorer():
    from attrlink.encoders import TableEntailmentScorer

    table = ScoreTable(scores={("my pink bag review", "the color of this bag is pink"): 0.93})
    scorer = TableEntailmentScorer(table)
    assert scorer.score("bag", "my pink bag review", "the color of this bag is pink") == 0.93
    assert scorer.score("bag", "other review", "other hypothesis") == 0.0


class TestStoreImageEmbedder:
    def test_lookup_and_absence(self):
        store = EmbeddingStore(dim=4)
        store.add("img1", [0.0, 1.0, 0.0, 0.0])
        embedder = StoreImageEmbedder(store)
        assert np.array_equal(embedder.lookup("img1"), store.rows["img1"])
        assert embedder.lookup("absent") is None
