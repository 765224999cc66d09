"""Deterministic text utilities: tokenization, plural normalization, noun-phrase
chunking, the phrase-to-entity prior index, and vocabulary-driven attribute
extraction from review text.

These replace external NLP tooling with reproducible heuristics so the whole
pipeline runs without models. A chunk is a maximal run of content tokens
(stopwords, digit-bearing tokens, and punctuation break runs); the run's last
token is the head, and every suffix ending at the head is emitted as a phrase.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .corpus import KnowledgeBase, Review, write_jsonl

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")
_DIGIT_RE = re.compile(r"[0-9]")
# Shape produced by encoders.attribute_hypothesis; everything after the final
# " is " is the attribute value.
_HYPOTHESIS_RE = re.compile(r"^the .+ of this .+ is .+$", re.DOTALL)



class TextNormError(ValueError):
    """Malformed prior-index or stopword files."""


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Lowercased maximal alphanumeric runs with their character offsets into ``text``."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> list[str]:
    """Lowercased maximal alphanumeric runs, in order."""
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def normalize_token(token: str) -> str:
    """Strip plural suffixes (ies -> y, sibilant es -> '', else s). Idempotent."""
    if token.endswith("ies") and len(token) >= 5:
        return token[:-3] + "y"
    if token.endswith("es") and len(token) >= 5:
        stem = token[:-2]
        if stem.endswith(("s", "x", "z", "ch", "sh")):
            return stem
    if token.endswith("s") and len(token) >= 4 and not token.endswith(("ss", "us", "is")):
        return token[:-1]
    return token


def normalize_phrase(text: str) -> str:
    """Tokenize, normalize each token, and space-join: the canonical phrase form."""
    return " ".join(normalize_token(t) for t in tokenize(text))


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    raw = resources.files("attrlink").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in raw.splitlines() if w.strip())


def load_stopwords(path) -> frozenset[str]:
    """One word per line, UTF-8."""
    words = frozenset(w.strip().lower() for w in Path(path).read_text(encoding="utf-8").splitlines() if w.strip())
    if not words:
        raise TextNormError(f"{path}: empty stopword file")
    return words


def _content_runs(text: str, stopwords: frozenset[str]) -> list[list[str]]:
    """Maximal runs of content tokens; stopwords, digit tokens, and punctuation split."""
    runs: list[list[str]] = []
    current: list[str] = []
    prev_end: int | None = None
    for token, start, end in tokenize_with_spans(text):
        crossed_punct = prev_end is not None and any(
            not ch.isspace() for ch in text[prev_end:start]
        )
        if crossed_punct and current:
            runs.append(current)
            current = []
        if token in stopwords or _DIGIT_RE.search(token):
            if current:
                runs.append(current)
                current = []
        else:
            current.append(token)
        prev_end = end
    if current:
        runs.append(current)
    return runs


def noun_chunks(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Candidate noun phrases: each content run plus all suffixes ending at its head token.

    Phrases are normalized, space-joined, deduplicated, and order-preserving;
    longer phrases of a run come first.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    out: list[str] = []
    seen: set[str] = set()
    for run in _content_runs(text, stopwords):
        normalized = [normalize_token(t) for t in run]
        for i in range(len(normalized)):
            phrase = " ".join(normalized[i:])
            if phrase not in seen:
                seen.add(phrase)
                out.append(phrase)
    return out


@dataclass
class PriorIndex:
    """Phrase-conditioned probability distributions over entities and leaf categories."""

    entity_prior: dict[str, dict[str, float]]
    category_prior: dict[str, dict[str, float]]
    phrase_counts: dict[str, int]

    def __contains__(self, phrase: str) -> bool:
        return phrase in self.phrase_counts

    def entity_probability(self, phrase: str, entity_id: str) -> float:
        return self.entity_prior.get(phrase, {}).get(entity_id, 0.0)

    def category_probability(self, phrase: str, category: str) -> float:
        return self.category_prior.get(phrase, {}).get(category, 0.0)

    def save(self, path) -> None:
        records = (
            {
                "phrase": phrase,
                "entities": self.entity_prior[phrase],
                "categories": self.category_prior[phrase],
                "count": self.phrase_counts[phrase],
            }
            for phrase in sorted(self.phrase_counts)
        )
        write_jsonl(records, path)

    @classmethod
    def load(cls, path) -> "PriorIndex":
        entity_prior: dict[str, dict[str, float]] = {}
        category_prior: dict[str, dict[str, float]] = {}
        counts: dict[str, int] = {}
        with Path(path).open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    phrase = record["phrase"]
                    entity_prior[phrase] = {str(k): float(v) for k, v in record["entities"].items()}
                    category_prior[phrase] = {str(k): float(v) for k, v in record["categories"].items()}
                    counts[phrase] = int(record.get("count", 0))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise TextNormError(f"{path}:{lineno}: malformed prior record ({exc})") from exc
        return cls(entity_prior=entity_prior, category_prior=category_prior, phrase_counts=counts)


def build_prior_index(kb: KnowledgeBase, stopwords: frozenset[str] | None = None) -> PriorIndex:
    """Count phrase occurrences over entity titles and category strings and normalize.

    Each (phrase, entity) pair counts once per contributing field, so a phrase
    appearing in both the title and a category of the same entity counts twice.
    Category mass goes to the contributing entity's leaf category.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    entity_counts: dict[str, dict[str, int]] = {}
    category_counts: dict[str, dict[str, int]] = {}
    for entity in kb:
        fields = [entity.title, *entity.categories]
        leaf = entity.leaf_category
        for field_text in fields:
            for phrase in noun_chunks(field_text, stopwords):
                by_entity = entity_counts.setdefault(phrase, {})
                by_entity[entity.entity_id] = by_entity.get(entity.entity_id, 0) + 1
                by_category = category_counts.setdefault(phrase, {})
                by_category[leaf] = by_category.get(leaf, 0) + 1
    entity_prior: dict[str, dict[str, float]] = {}
    category_prior: dict[str, dict[str, float]] = {}
    phrase_counts: dict[str, int] = {}
    for phrase, by_entity in entity_counts.items():
        total = sum(by_entity.values())
        phrase_counts[phrase] = total
        entity_prior[phrase] = {eid: count / total for eid, count in sorted(by_entity.items())}
        by_category = category_counts[phrase]
        category_prior[phrase] = {cat: count / total for cat, count in sorted(by_category.items())}
    return PriorIndex(entity_prior=entity_prior, category_prior=category_prior, phrase_counts=phrase_counts)


@dataclass
class ExtractedAttributes:
    """Attribute values found verbatim (after normalization) in a review text."""

    pairs: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, tuple[int, int]] = field(default_factory=dict)


def _vocabulary_lookup(kb: KnowledgeBase) -> dict[str, list[tuple[str, str]]]:
    """Normalized value -> [(attribute_key, raw value)]; raw is the smallest spelling per key."""
    lookup: dict[str, dict[str, str]] = {}
    for key, values in kb.attribute_vocabulary.items():
        for raw in sorted(values):
            normalized = normalize_phrase(raw)
            if not normalized:
                continue
            per_key = lookup.setdefault(normalized, {})
            per_key.setdefault(key, raw)
    return {norm: sorted(per_key.items()) for norm, per_key in lookup.items()}


def extract_attributes(
    review: Review,
    kb: KnowledgeBase,
    stopwords: frozenset[str] | None = None,
    max_ngram: int = 6,
) -> ExtractedAttributes:
    """Scan review n-grams (stopwords skipped) for exact normalized matches against
    the KB attribute vocabulary. Longest match wins per position; the first
    occurrence wins per attribute key.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    lookup = _vocabulary_lookup(kb)
    content = [
        (normalize_token(token), start, end)
        for token, start, end in tokenize_with_spans(review.text)
        if token not in stopwords
    ]
    result = ExtractedAttributes()
    i = 0
    while i < len(content):
        matched = 0
        for n in range(min(max_ngram, len(content) - i), 0, -1):
            gram = " ".join(tok for tok, _, _ in content[i : i + n])
            hits = lookup.get(gram)
            if hits:
                span = (content[i][1], content[i + n - 1][2])
                for key, raw in hits:
                    if key not in result.pairs:
                        result.pairs[key] = raw
                        result.provenance[key] = span
                matched = n
                break
        i += matched if matched else 1
    return result


def phrase_sequence_contains(haystack: list[str], needle: list[str]) -> bool:
    """True when ``needle`` occurs as a consecutive subsequence of ``haystack``."""
    if not needle or len(needle) > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i] == first and haystack[i : i + len(needle)] == needle:
            return True
    return False


def content_tokens(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Normalized tokens with stopwords removed; the matching space for value lookups."""
    if stopwords is None:
        stopwords = default_stopwords()
    return [normalize_token(t) for t in tokenize(text) if t not in stopwords]


def hypothesis_value(hypothesis: str) -> str | None:
    """The value segment of an attribute hypothesis sentence, or None for free text."""
    if _HYPOTHESIS_RE.match(hypothesis):
        return hypothesis.rsplit(" is ", 1)[1]
    return None
